//! Arm-selection policies.
//!
//! Each selector is available as a free function over beliefs and as a
//! [`Policy`] object; the objects are created by name through a
//! [`PolicyRegistry`] so experiments can pick policies at runtime.

mod registry;

pub use registry::{PolicyFactory, PolicyRegistry, PolicySettings, TableCache, TableScope};

use std::sync::Arc;

use crate::cause::{backward_precision, bonus_from_precision, CauseConfig};
use crate::error::{invalid, Result};
use crate::gittins::BonusTable;
use crate::model::{stationary_posterior_variance, ArmParams, Belief};
use crate::rng::ArmNoise;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub chosen_arm: usize,
    pub per_arm_score: Vec<f64>,
}

impl PolicyDecision {
    fn from_scores(scores: Vec<f64>) -> Self {
        Self {
            chosen_arm: argmax(&scores),
            per_arm_score: scores,
        }
    }
}

/// First index of the largest score; NaN never wins.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in scores.iter().enumerate().skip(1) {
        if x > scores[best] || scores[best].is_nan() {
            best = k;
        }
    }
    best
}

/// Everything a policy may look at when choosing an arm.
pub struct DecisionContext<'a> {
    pub beliefs: &'a [Belief],
    pub arms: &'a [ArmParams],
    /// True latent states; only the oracle reads them.
    pub latents: &'a [f64],
    pub noise: &'a dyn ArmNoise,
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    /// Per-regime setup before any episode runs.
    fn prepare(&mut self, _arms: &[ArmParams], _gamma: f64) -> Result<()> {
        Ok(())
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision>;
}

pub fn select_myopic(beliefs: &[Belief]) -> PolicyDecision {
    PolicyDecision::from_scores(beliefs.iter().map(|b| b.m).collect())
}

fn sampled(beliefs: &[Belief], noise: &dyn ArmNoise, variance: impl Fn(usize) -> f64) -> PolicyDecision {
    PolicyDecision::from_scores(
        beliefs
            .iter()
            .enumerate()
            .map(|(k, b)| b.m + variance(k).sqrt() * noise.standard_normal(k))
            .collect(),
    )
}

/// One draw per arm from `N(m, P + v)`.
pub fn select_thompson(beliefs: &[Belief], arms: &[ArmParams], noise: &dyn ArmNoise) -> PolicyDecision {
    sampled(beliefs, noise, |k| beliefs[k].predictive_variance(&arms[k]))
}

pub fn select_ucb(beliefs: &[Belief], arms: &[ArmParams], c: f64) -> PolicyDecision {
    PolicyDecision::from_scores(
        beliefs
            .iter()
            .zip(arms)
            .map(|(b, a)| b.m + c * b.predictive_variance(a).sqrt())
            .collect(),
    )
}

/// Shrunken sampling variance `(P + v)² / (P + v + x*)` with
/// `x* = (v + sqrt(v² + 4 v s)) / 2`. Equals `P + v` at `v = 0`.
///
/// This is the random-walk limit of predictive sampling; its regret bound
/// does not carry over to that limit.
pub fn predictive_sampling_variance(p: f64, v: f64, s: f64) -> f64 {
    let total = p + v;
    if v == 0.0 || total == 0.0 {
        return total;
    }
    let x_star = stationary_posterior_variance(v, s) + v;
    total * total / (total + x_star)
}

pub fn select_predictive_sampling(beliefs: &[Belief], arms: &[ArmParams], noise: &dyn ArmNoise) -> PolicyDecision {
    sampled(beliefs, noise, |k| predictive_sampling_variance(beliefs[k].p, arms[k].v, arms[k].s))
}

pub fn select_cause(beliefs: &[Belief], arms: &[ArmParams], cfg: &CauseConfig) -> Result<PolicyDecision> {
    let scores = beliefs
        .iter()
        .zip(arms)
        .map(|(b, a)| crate::cause::cause_index(b, a, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyDecision::from_scores(scores))
}

pub fn select_oracle(latents: &[f64]) -> PolicyDecision {
    PolicyDecision::from_scores(latents.to_vec())
}

/// `m_k + B_k(P_k)` with each arm's bonus interpolated from its table.
pub fn select_gittins(beliefs: &[Belief], tables: &[Arc<BonusTable>]) -> PolicyDecision {
    PolicyDecision::from_scores(beliefs.iter().zip(tables).map(|(b, t)| b.m + t.bonus_at(b.p)).collect())
}

fn check_len(ctx: &DecisionContext<'_>) -> Result<()> {
    if ctx.beliefs.is_empty() || ctx.beliefs.len() != ctx.arms.len() {
        return Err(invalid(format!(
            "need one belief per arm and at least one arm, got {} beliefs for {} arms",
            ctx.beliefs.len(),
            ctx.arms.len()
        )));
    }
    Ok(())
}

pub struct Myopic;

impl Policy for Myopic {
    fn name(&self) -> &str {
        "myopic"
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision> {
        check_len(ctx)?;
        Ok(select_myopic(ctx.beliefs))
    }
}

pub struct Thompson;

impl Policy for Thompson {
    fn name(&self) -> &str {
        "thompson"
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision> {
        check_len(ctx)?;
        Ok(select_thompson(ctx.beliefs, ctx.arms, ctx.noise))
    }
}

pub struct Ucb {
    pub c: f64,
}

impl Ucb {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("UCB width must be positive, got {c}")));
        }
        Ok(Self { c })
    }
}

impl Policy for Ucb {
    fn name(&self) -> &str {
        "ucb"
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision> {
        check_len(ctx)?;
        Ok(select_ucb(ctx.beliefs, ctx.arms, self.c))
    }
}

pub struct PredictiveSampling;

impl Policy for PredictiveSampling {
    fn name(&self) -> &str {
        "ps"
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision> {
        check_len(ctx)?;
        Ok(select_predictive_sampling(ctx.beliefs, ctx.arms, ctx.noise))
    }
}

/// CAUSE with the backward precision `S` of each arm computed once in
/// [`Policy::prepare`].
pub struct Cause {
    pub scale: f64,
    cfg: Option<CauseConfig>,
    precision: Vec<f64>,
}

impl Cause {
    pub fn new(scale: f64) -> Self {
        Self {
            scale,
            cfg: None,
            precision: Vec::new(),
        }
    }
}

impl Policy for Cause {
    fn name(&self) -> &str {
        "cause"
    }

    fn prepare(&mut self, arms: &[ArmParams], gamma: f64) -> Result<()> {
        let cfg = CauseConfig::with_scale(gamma, self.scale)?;
        self.precision = arms
            .iter()
            .map(|a| Ok(backward_precision(a.v, a.s, gamma, cfg.phi)?.s_inf))
            .collect::<Result<_>>()?;
        self.cfg = Some(cfg);
        Ok(())
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision> {
        check_len(ctx)?;
        let cfg = self.cfg.as_ref().ok_or_else(|| invalid("cause policy used before prepare"))?;
        if self.precision.len() != ctx.arms.len() {
            return Err(invalid("cause policy prepared for a different arm set"));
        }
        Ok(PolicyDecision::from_scores(
            ctx.beliefs
                .iter()
                .zip(ctx.arms)
                .zip(&self.precision)
                .map(|((b, a), &s_inf)| b.m + bonus_from_precision(b.predictive_variance(a), s_inf, cfg))
                .collect(),
        ))
    }
}

/// Gittins index of each arm treated as rested, from per-arm bonus tables.
pub struct Gittins {
    settings: PolicySettings,
    tables: Vec<Arc<BonusTable>>,
}

impl Gittins {
    pub fn new(settings: PolicySettings) -> Self {
        Self {
            settings,
            tables: Vec::new(),
        }
    }

    pub fn tables(&self) -> &[Arc<BonusTable>] {
        &self.tables
    }
}

impl Policy for Gittins {
    fn name(&self) -> &str {
        "gittins"
    }

    fn prepare(&mut self, arms: &[ArmParams], gamma: f64) -> Result<()> {
        self.tables = self.settings.tables.tables_for(arms, gamma, &self.settings)?;
        Ok(())
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision> {
        check_len(ctx)?;
        if self.tables.len() != ctx.arms.len() {
            return Err(invalid("gittins policy used before prepare"));
        }
        Ok(select_gittins(ctx.beliefs, &self.tables))
    }
}

pub struct Oracle;

impl Policy for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn select(&self, ctx: &DecisionContext<'_>) -> Result<PolicyDecision> {
        check_len(ctx)?;
        if ctx.latents.len() != ctx.arms.len() {
            return Err(invalid("oracle needs one latent state per arm"));
        }
        Ok(select_oracle(ctx.latents))
    }
}
