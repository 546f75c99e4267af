//! Robustness sweeps over the discount, the arm count and the UCB constant.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{run_regime, AggregateResult, RegimeConfig, RegimeName};
use crate::error::{invalid, Result};
use crate::output::fmt_f64;
use crate::policies::{PolicyRegistry, PolicySettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Gamma,
    Arms,
    UcbC,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Gamma => "gamma",
            SweepKind::Arms => "arms",
            SweepKind::UcbC => "ucb_c",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::Gamma => vec![0.8, 0.9, 0.98],
            SweepKind::Arms => vec![8.0, 12.0, 16.0],
            SweepKind::UcbC => vec![0.5, 1.0, 2.0, 3.0],
        }
    }

    pub const REGIMES: [RegimeName; 3] = [RegimeName::Mixed, RegimeName::SDominant, RegimeName::VDominant];
}

/// All regimes for one swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessBlock {
    pub kind: SweepKind,
    pub value: f64,
    pub regimes: Vec<(RegimeName, Vec<AggregateResult>)>,
}

impl RobustnessBlock {
    pub fn result(&self, regime: RegimeName, policy: &str) -> Option<&AggregateResult> {
        self.regimes
            .iter()
            .find(|(r, _)| *r == regime)
            .and_then(|(_, rs)| rs.iter().find(|a| a.policy == policy))
    }

    /// `regime,policy,step,mean_regret,sem`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["regime", "policy", "step", "mean_regret", "sem"])?;
        for (regime, results) in &self.regimes {
            for r in results {
                for (t, (m, s)) in r.mean_curve.iter().zip(&r.sem_curve).enumerate() {
                    w.write_record([
                        regime.as_str().to_string(),
                        r.policy.clone(),
                        (t + 1).to_string(),
                        fmt_f64(*m),
                        fmt_f64(*s),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every policy in `policies` on the mixed, s-dominant and
/// v-dominant regimes once per swept value. `template` supplies horizon,
/// runs, seed and discount for the values that do not override them.
pub fn robustness_sweep(
    kind: SweepKind,
    values: &[f64],
    template: &RegimeConfig,
    registry: &PolicyRegistry,
    policies: &[&str],
    settings: &PolicySettings,
) -> Result<Vec<RobustnessBlock>> {
    values
        .iter()
        .map(|&value| {
            let mut settings = settings.clone();
            let arm_count = match kind {
                SweepKind::Arms => {
                    if value.fract() != 0.0 || value < 1.0 {
                        return Err(invalid(format!("arm count must be a positive integer, got {value}")));
                    }
                    value as usize
                }
                _ => template.arms.len(),
            };
            if kind == SweepKind::UcbC {
                settings.ucb_c = value;
            }
            let regimes = SweepKind::REGIMES
                .iter()
                .map(|&name| {
                    let mut regime = RegimeConfig::with_arm_count(name, arm_count)?;
                    regime.horizon = template.horizon;
                    regime.runs = template.runs;
                    regime.base_seed = template.base_seed;
                    regime.gamma = if kind == SweepKind::Gamma { value } else { template.gamma };
                    let mut ps = policies
                        .iter()
                        .map(|p| registry.create(p, &settings))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((name, run_regime(&regime, &mut ps)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(RobustnessBlock { kind, value, regimes })
        })
        .collect()
}
