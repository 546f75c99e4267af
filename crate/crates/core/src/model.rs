//! Latent random-walk arms and the Kalman tracker shared by every policy.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Noise structure and prior of one arm.
///
/// `v` is the innovation variance of the latent random walk (volatility) and
/// `s` the observation noise variance (stochasticity). `v = 0` gives a rested
/// arm and `s = 0` a noiseless channel; both limits are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub v: f64,
    pub s: f64,
    pub p0: f64,
    pub m0: f64,
}

impl ArmParams {
    pub fn new(v: f64, s: f64, p0: f64, m0: f64) -> Result<Self> {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(invalid(format!("innovation variance must be finite and >= 0, got {v}")));
        }
        // s = +inf is allowed: it models an observation channel that carries no information.
        if !(s >= 0.0) {
            return Err(invalid(format!("observation variance must be >= 0, got {s}")));
        }
        if !(p0 > 0.0) || !p0.is_finite() {
            return Err(invalid(format!("prior variance must be finite and > 0, got {p0}")));
        }
        if !m0.is_finite() {
            return Err(invalid(format!("prior mean must be finite, got {m0}")));
        }
        Ok(Self { v, s, p0, m0 })
    }

    /// Arm with the standard experimental prior `N(0, 25)`.
    pub fn with_default_prior(v: f64, s: f64) -> Result<Self> {
        Self::new(v, s, 25.0, 0.0)
    }

    /// Environments reject arms that are deterministic in both channels.
    pub fn validate_for_environment(&self) -> Result<()> {
        if self.v == 0.0 && self.s == 0.0 {
            return Err(invalid("arm with v = 0 and s = 0 is degenerate"));
        }
        if !self.s.is_finite() {
            return Err(invalid("environment arms need finite observation noise"));
        }
        Ok(())
    }

    pub fn prior(&self) -> Belief {
        Belief { m: self.m0, p: self.p0 }
    }

    pub fn prior_state(&self) -> LatentState {
        LatentState { x: self.m0 }
    }
}

/// Gaussian posterior `N(m, p)` over an arm's latent state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub m: f64,
    pub p: f64,
}

impl Belief {
    pub fn new(m: f64, p: f64) -> Self {
        Self { m, p }
    }

    /// Variance of the latent state one step ahead, `P + v`.
    pub fn predictive_variance(&self, arm: &ArmParams) -> f64 {
        self.p + arm.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentState {
    pub x: f64,
}

/// Kalman gain `(P + v) / (P + v + s)`.
pub fn kalman_gain(p: f64, v: f64, s: f64) -> f64 {
    let prior = p + v;
    if s.is_infinite() {
        return 0.0;
    }
    let total = prior + s;
    if total == 0.0 {
        // fully deterministic arm: the observation is the state
        return 1.0;
    }
    prior / total
}

/// Pull-and-observe update of one arm's belief.
pub fn kalman_update(belief: Belief, reward: f64, arm: &ArmParams) -> Result<Belief> {
    if !reward.is_finite() {
        return Err(invalid(format!("reward must be finite, got {reward}")));
    }
    let k = kalman_gain(belief.p, arm.v, arm.s);
    Ok(Belief {
        m: belief.m + k * (reward - belief.m),
        p: (1.0 - k) * (belief.p + arm.v),
    })
}

/// Belief of an unpulled arm after one step of drift.
pub fn kalman_predict(belief: Belief, arm: &ArmParams) -> Belief {
    Belief {
        m: belief.m,
        p: belief.p + arm.v,
    }
}

pub fn step_latent<R: Rng + ?Sized>(state: LatentState, arm: &ArmParams, rng: &mut R) -> LatentState {
    if arm.v == 0.0 {
        return state;
    }
    let z: f64 = rng.sample(StandardNormal);
    LatentState {
        x: state.x + arm.v.sqrt() * z,
    }
}

pub fn observe<R: Rng + ?Sized>(state: LatentState, arm: &ArmParams, rng: &mut R) -> f64 {
    if arm.s == 0.0 {
        return state.x;
    }
    let z: f64 = rng.sample(StandardNormal);
    state.x + arm.s.sqrt() * z
}

/// Fixed point of the posterior-variance recursion under repeated pulls,
/// `(sqrt(v^2 + 4 v s) - v) / 2`.
pub fn stationary_posterior_variance(v: f64, s: f64) -> f64 {
    if v == 0.0 || s == 0.0 {
        return 0.0;
    }
    // rationalised form; avoids cancellation when v >> s
    2.0 * v * s / ((v * v + 4.0 * v * s).sqrt() + v)
}
