//! Gittins, CAUSE and UCB bonuses along one noise axis at a fixed variance.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{log_space, GittinsConfig, RetirementProblem, SolveStats, SolverGrid};
use crate::cause::{cause_bonus, CauseConfig};
use crate::error::{invalid, Result};
use crate::model::stationary_posterior_variance;
use crate::output::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    S,
    V,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::S => "s",
            SweepAxis::V => "v",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Value of the noise variance that is not swept.
    pub fixed_other: f64,
    pub gamma: f64,
    pub ucb_c: f64,
    pub cause_c: f64,
    pub solver: GittinsConfig,
}

impl SweepSpec {
    /// 14 log-spaced points on `[10, 1000]` with `v = 4` along `s` and
    /// `s = 25` along `v`.
    pub fn standard(axis: SweepAxis, gamma: f64) -> Self {
        Self {
            axis,
            lo: 10.0,
            hi: 1000.0,
            points: 14,
            fixed_other: match axis {
                SweepAxis::S => 4.0,
                SweepAxis::V => 25.0,
            },
            gamma,
            ucb_c: 2.0,
            cause_c: crate::cause::DEFAULT_SCALE,
            solver: GittinsConfig::reduced(),
        }
    }

    fn noise(&self, x: f64) -> (f64, f64) {
        match self.axis {
            SweepAxis::S => (self.fixed_other, x),
            SweepAxis::V => (x, self.fixed_other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub v: f64,
    pub s: f64,
    pub p_ref: f64,
    pub gittins: f64,
    pub cause: f64,
    pub ucb: f64,
    pub gittins_norm: f64,
    pub cause_norm: f64,
    pub ucb_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub p_ref: f64,
    pub points: Vec<SweepPoint>,
    pub stats: SolveStats,
}

/// `(x - min) / (max - min)`; a constant column maps to zeros.
pub fn min_max_normalize(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn bonus_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    if !(spec.lo > 0.0 && spec.hi > spec.lo && spec.hi.is_finite()) {
        return Err(invalid(format!("sweep range must satisfy 0 < lo < hi, got [{}, {}]", spec.lo, spec.hi)));
    }
    if spec.points < 2 {
        return Err(invalid(format!("sweep needs at least 2 points, got {}", spec.points)));
    }
    if !(spec.fixed_other >= 0.0 && spec.fixed_other.is_finite()) {
        return Err(invalid(format!("fixed noise variance must be finite and >= 0, got {}", spec.fixed_other)));
    }
    let values = log_space(spec.lo, spec.hi, spec.points);
    let stationary: Vec<f64> = values
        .iter()
        .map(|&x| {
            let (v, s) = spec.noise(x);
            stationary_posterior_variance(v, s)
        })
        .collect();
    let p_ref = median(&stationary);
    let cause_cfg = CauseConfig::with_scale(spec.gamma, spec.cause_c)?;

    let solved = values
        .par_iter()
        .map(|&x| {
            let (v, s) = spec.noise(x);
            let grid = SolverGrid::local(p_ref, v, spec.gamma, &spec.solver)?;
            let est = RetirementProblem::new(v, s, spec.gamma, spec.solver, grid)?.bonus(p_ref)?;
            let cause = cause_bonus(p_ref, v, s, &cause_cfg)?;
            let ucb = spec.ucb_c * (p_ref + v).sqrt();
            Ok((x, v, s, est, cause, ucb))
        })
        .collect::<Result<Vec<_>>>()?;

    let column = |f: fn(&(f64, f64, f64, super::BonusEstimate, f64, f64)) -> f64| -> Vec<f64> {
        solved.iter().map(f).collect()
    };
    let gittins = column(|r| r.3.salary);
    let cause = column(|r| r.4);
    let ucb = column(|r| r.5);
    let (gn, cn, un) = (min_max_normalize(&gittins), min_max_normalize(&cause), min_max_normalize(&ucb));
    let mut stats = SolveStats::default();
    let points = solved
        .iter()
        .enumerate()
        .map(|(k, &(value, v, s, est, cause, ucb))| {
            stats.merge(&est.stats);
            SweepPoint {
                value,
                v,
                s,
                p_ref,
                gittins: est.salary,
                cause,
                ucb,
                gittins_norm: gn[k],
                cause_norm: cn[k],
                ucb_norm: un[k],
            }
        })
        .collect();
    Ok(SweepTable {
        spec: *spec,
        p_ref,
        points,
        stats,
    })
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "axis",
            "value",
            "v",
            "s",
            "p_ref",
            "gittins",
            "cause",
            "ucb",
            "gittins_norm",
            "cause_norm",
            "ucb_norm",
        ])?;
        for p in &self.points {
            let mut rec = vec![self.spec.axis.label().to_string()];
            rec.extend(
                [p.value, p.v, p.s, p.p_ref, p.gittins, p.cause, p.ucb, p.gittins_norm, p.cause_norm, p.ucb_norm]
                    .map(fmt_f64),
            );
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column(&self, f: impl Fn(&SweepPoint) -> f64) -> Vec<f64> {
        self.points.iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(min_max_normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[2.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn s_axis_shapes() {
        let t = bonus_sweep(&SweepSpec::standard(SweepAxis::S, 0.95)).unwrap();
        assert_eq!(t.points.len(), 14);
        let ucb = t.column(|p| p.ucb);
        assert!(ucb.iter().all(|&u| u == ucb[0]));
        assert!(t.column(|p| p.ucb_norm).iter().all(|&u| u == 0.0));
        for col in [t.column(|p| p.gittins), t.column(|p| p.cause)] {
            for w in col.windows(2) {
                assert!(w[1] < w[0], "{col:?}");
            }
        }
        let gn = t.column(|p| p.gittins_norm);
        assert!(gn.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(t.stats.cap_hits, 0);
    }

    #[test]
    fn v_axis_shapes() {
        let t = bonus_sweep(&SweepSpec::standard(SweepAxis::V, 0.95)).unwrap();
        for col in [t.column(|p| p.gittins), t.column(|p| p.cause), t.column(|p| p.ucb)] {
            for w in col.windows(2) {
                assert!(w[1] > w[0], "{col:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_ranges() {
        let mut spec = SweepSpec::standard(SweepAxis::S, 0.95);
        spec.lo = 0.0;
        assert!(bonus_sweep(&spec).is_err());
        spec.lo = 10.0;
        spec.points = 1;
        assert!(bonus_sweep(&spec).is_err());
    }
}
