//! Restless-bandit episodes, discounted regret and Monte Carlo aggregation.
//!
//! Each run draws one world (initial states, innovations and observation
//! noise for every arm and step) from the run's substreams, and every policy
//! is played against that same world.

mod robustness;

pub use robustness::{robustness_sweep, RobustnessBlock, SweepKind};

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{kalman_predict, kalman_update, ArmParams, Belief};
use crate::output::fmt_f64;
use crate::policies::{DecisionContext, Policy};
use crate::rng::{Channel, StepNoise, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeName {
    Mixed,
    SDominant,
    VDominant,
    RestedModerate,
    RestedExtreme,
    Custom,
}

impl RegimeName {
    pub const NAMED: [RegimeName; 5] = [
        RegimeName::Mixed,
        RegimeName::SDominant,
        RegimeName::VDominant,
        RegimeName::RestedModerate,
        RegimeName::RestedExtreme,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeName::Mixed => "mixed",
            RegimeName::SDominant => "s_dominant",
            RegimeName::VDominant => "v_dominant",
            RegimeName::RestedModerate => "rested_moderate",
            RegimeName::RestedExtreme => "rested_extreme",
            RegimeName::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::NAMED
            .into_iter()
            .find(|r| r.as_str() == name)
            .ok_or_else(|| Error::UnknownRegime {
                name: name.to_string(),
                valid: Self::NAMED.map(|r| r.as_str()).join(", "),
            })
    }

    /// `(v, s)` of the four base cells.
    fn cells(self) -> Option<[(f64, f64); 4]> {
        Some(match self {
            RegimeName::Mixed => [(1.0, 9.0), (1.0, 25.0), (4.0, 9.0), (4.0, 25.0)],
            RegimeName::SDominant => [(4.0, 9.0), (4.0, 9.0), (4.0, 900.0), (4.0, 900.0)],
            RegimeName::VDominant => [(1.0, 25.0), (1.0, 25.0), (100.0, 25.0), (100.0, 25.0)],
            RegimeName::RestedModerate => [(0.0, 9.0), (0.0, 9.0), (0.0, 25.0), (0.0, 25.0)],
            RegimeName::RestedExtreme => [(0.0, 9.0), (0.0, 9.0), (0.0, 900.0), (0.0, 900.0)],
            RegimeName::Custom => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub name: RegimeName,
    pub arms: Vec<ArmParams>,
    pub horizon: usize,
    pub gamma: f64,
    pub runs: usize,
    pub base_seed: u64,
}

pub const DEFAULT_HORIZON: usize = 200;
pub const DEFAULT_GAMMA: f64 = 0.95;
pub const DEFAULT_RUNS: usize = 1000;

impl RegimeConfig {
    /// Named regime with four arms, one per cell, prior `N(0, 25)`.
    pub fn named(name: RegimeName) -> Result<Self> {
        Self::with_arm_count(name, 4)
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::named(RegimeName::parse(name)?)
    }

    /// `k` arms spread equally over the regime's four cells.
    pub fn with_arm_count(name: RegimeName, k: usize) -> Result<Self> {
        let cells = name
            .cells()
            .ok_or_else(|| invalid("a custom regime needs an explicit arm list"))?;
        if k == 0 || k % 4 != 0 {
            return Err(invalid(format!("arm count must be a positive multiple of 4, got {k}")));
        }
        let arms = (0..k)
            .map(|i| {
                let (v, s) = cells[i % 4];
                ArmParams::with_default_prior(v, s)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name,
            arms,
            horizon: DEFAULT_HORIZON,
            gamma: DEFAULT_GAMMA,
            runs: DEFAULT_RUNS,
            base_seed: 0,
        })
    }

    pub fn custom(arms: Vec<ArmParams>) -> Result<Self> {
        let cfg = Self {
            name: RegimeName::Custom,
            arms,
            horizon: DEFAULT_HORIZON,
            gamma: DEFAULT_GAMMA,
            runs: DEFAULT_RUNS,
            base_seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(invalid("regime needs at least one arm"));
        }
        for a in &self.arms {
            a.validate_for_environment()?;
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        if self.runs == 0 {
            return Err(invalid("runs must be at least 1"));
        }
        crate::cause::check_gamma(self.gamma)
    }
}

/// Latent trajectories and observation noise of one run, shared by all policies.
#[derive(Debug, Clone)]
pub struct World {
    /// `latent[t][k]`: state of arm `k` at step `t + 1`, after that step's drift.
    pub latent: Vec<Vec<f64>>,
    /// `observation_noise[t][k]`: additive noise if arm `k` is pulled at step `t + 1`.
    pub observation_noise: Vec<Vec<f64>>,
}

impl World {
    pub fn draw(regime: &RegimeConfig, run: u64) -> Self {
        let seed = regime.base_seed;
        let k = regime.arms.len();
        let mut state: Vec<f64> = regime
            .arms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                a.m0 + a.p0.sqrt() * StreamKey::new(seed, run, i as u64, 0, Channel::InitialState).standard_normal()
            })
            .collect();
        let mut latent = Vec::with_capacity(regime.horizon);
        let mut observation_noise = Vec::with_capacity(regime.horizon);
        for t in 1..=regime.horizon as u64 {
            for (i, a) in regime.arms.iter().enumerate() {
                if a.v > 0.0 {
                    state[i] += a.v.sqrt() * StreamKey::new(seed, run, i as u64, t, Channel::Innovation).standard_normal();
                }
            }
            latent.push(state.clone());
            observation_noise.push(
                (0..k)
                    .map(|i| {
                        let s = regime.arms[i].s;
                        if s > 0.0 {
                            s.sqrt() * StreamKey::new(seed, run, i as u64, t, Channel::Observation).standard_normal()
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
        }
        Self {
            latent,
            observation_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Cumulative discounted regret after each step.
    pub regret_curve: Vec<f64>,
    pub pulls: Vec<usize>,
    pub base_seed: u64,
    pub run: u64,
}

/// Plays `policy` against `world`. Per step: the agent scores its beliefs,
/// the chosen arm is observed and Kalman-updated, the others drift.
pub fn play(regime: &RegimeConfig, policy: &dyn Policy, world: &World, run: u64) -> Result<EpisodeResult> {
    let mut beliefs: Vec<Belief> = regime.arms.iter().map(|a| a.prior()).collect();
    let mut regret_curve = Vec::with_capacity(regime.horizon);
    let mut pulls = Vec::with_capacity(regime.horizon);
    let mut total = 0.0;
    let mut discount = 1.0;
    for (t, (latent, noise)) in world.latent.iter().zip(&world.observation_noise).enumerate() {
        let step_noise = StepNoise {
            base_seed: regime.base_seed,
            run,
            step: t as u64 + 1,
        };
        let ctx = DecisionContext {
            beliefs: &beliefs,
            arms: &regime.arms,
            latents: latent,
            noise: &step_noise,
        };
        let chosen = policy.select(&ctx)?.chosen_arm;
        let best = latent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += discount * (best - latent[chosen]);
        discount *= regime.gamma;
        regret_curve.push(total);
        pulls.push(chosen);
        for (k, (b, a)) in beliefs.iter_mut().zip(&regime.arms).enumerate() {
            *b = if k == chosen {
                kalman_update(*b, latent[k] + noise[k], a)?
            } else {
                kalman_predict(*b, a)
            };
        }
    }
    Ok(EpisodeResult {
        regret_curve,
        pulls,
        base_seed: regime.base_seed,
        run,
    })
}

/// One episode of a prepared policy in run `run`.
pub fn run_episode(regime: &RegimeConfig, policy: &dyn Policy, run: u64) -> Result<EpisodeResult> {
    regime.validate()?;
    play(regime, policy, &World::draw(regime, run), run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub policy: String,
    pub mean_curve: Vec<f64>,
    pub sem_curve: Vec<f64>,
    pub final_mean: f64,
    pub final_sem: f64,
    pub runs: usize,
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Mean and standard error `sd / sqrt(n)` (sample sd); SEM is 0 for one run.
pub fn mean_sem(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    let mut sum = KahanSum::default();
    xs.clone().for_each(|x| sum.add(x));
    let mean = sum.value() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut sq = KahanSum::default();
    xs.for_each(|x| sq.add((x - mean) * (x - mean)));
    let sd = (sq.value() / (n - 1) as f64).sqrt();
    (mean, sd / (n as f64).sqrt())
}

pub fn aggregate(policy: &str, curves: &[Vec<f64>]) -> AggregateResult {
    let steps = curves.first().map_or(0, Vec::len);
    let (mean_curve, sem_curve): (Vec<f64>, Vec<f64>) =
        (0..steps).map(|t| mean_sem(curves.iter().map(move |c| c[t]))).unzip();
    AggregateResult {
        policy: policy.to_string(),
        final_mean: mean_curve.last().copied().unwrap_or(0.0),
        final_sem: sem_curve.last().copied().unwrap_or(0.0),
        mean_curve,
        sem_curve,
        runs: curves.len(),
    }
}

/// Prepares every policy for the regime and plays `regime.runs` paired runs.
/// Results are returned in the order of `policies`.
pub fn run_regime(regime: &RegimeConfig, policies: &mut [Box<dyn Policy>]) -> Result<Vec<AggregateResult>> {
    regime.validate()?;
    for p in policies.iter_mut() {
        p.prepare(&regime.arms, regime.gamma)?;
    }
    let policies: &[Box<dyn Policy>] = policies;
    let per_run = (0..regime.runs as u64)
        .into_par_iter()
        .map(|run| {
            let world = World::draw(regime, run);
            policies
                .iter()
                .map(|p| Ok(play(regime, p.as_ref(), &world, run)?.regret_curve))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let curves: Vec<Vec<f64>> = per_run.iter().map(|r| r[i].clone()).collect();
            aggregate(p.name(), &curves)
        })
        .collect())
}

/// `policy,step,mean_regret,sem` with steps counted from 1.
pub fn write_regret_csv<W: Write>(out: W, results: &[AggregateResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["policy", "step", "mean_regret", "sem"])?;
    for r in results {
        for (t, (m, s)) in r.mean_curve.iter().zip(&r.sem_curve).enumerate() {
            w.write_record([r.policy.clone(), (t + 1).to_string(), fmt_f64(*m), fmt_f64(*s)])?;
        }
    }
    w.flush()?;
    Ok(())
}
