//! Closed-form CAUSE exploration index.
//!
//! The index of an arm with Kalman posterior `N(m, P)` is
//! `m + c (P + v) α̃`, where `α̃ = S / sqrt(1 + φ (P + v) S²)` and `S` is the
//! infinite-horizon precision of a sigmoid backward message. `S` is damped by
//! observation noise through `sqrt(1 + φ s)` and by volatility through the
//! dual-discount factor `D`.
//!
//! [`recursion_oracle`] iterates the exact nonlinear backward recursion for
//! the message coefficient and is used to validate the closed form.

pub mod calibration;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{ArmParams, Belief};

/// Constant of the probit approximation `σ(x) ≈ Φ(sqrt(φ) x)`.
pub const PROBIT_PHI: f64 = PI / 8.0;

pub const DEFAULT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauseConfig {
    pub gamma: f64,
    pub c: f64,
    pub phi: f64,
}

impl CauseConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        Self::with_scale(gamma, DEFAULT_SCALE)
    }

    pub fn with_scale(gamma: f64, c: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(c > 0.0 && c <= 1.0) {
            return Err(invalid(format!("bonus scale must lie in (0, 1], got {c}")));
        }
        Ok(Self {
            gamma,
            c,
            phi: PROBIT_PHI,
        })
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("discount must lie strictly in (0, 1), got {gamma}")))
    }
}

/// Undamped precision `α*`, dual-discount `D` and infinite-horizon precision `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackwardPrecision {
    pub alpha_star: f64,
    pub d: f64,
    pub s_inf: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `2 / ((1 - γ)(1 + sqrt(1 + φ s)))`, the `v = 0` limit of `S`.
pub fn alpha_star(s: f64, gamma: f64, phi: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(s >= 0.0) {
        return Err(invalid(format!("observation variance must be >= 0, got {s}")));
    }
    Ok(2.0 / ((1.0 - gamma) * (1.0 + (1.0 + phi * s).sqrt())))
}

pub fn backward_precision(v: f64, s: f64, gamma: f64, phi: f64) -> Result<BackwardPrecision> {
    let alpha_star = alpha_star(s, gamma, phi)?;
    if !(v >= 0.0) {
        return Err(invalid(format!("innovation variance must be >= 0, got {v}")));
    }
    if v == 0.0 {
        return Ok(BackwardPrecision {
            alpha_star,
            d: 1.0,
            s_inf: alpha_star,
        });
    }
    let d = 0.5 * (1.0 + (1.0 + phi * v * alpha_star * alpha_star).sqrt());
    let s_inf = 2.0 / ((d.ln() + 1.0 - gamma) * (1.0 + (1.0 + phi * s).sqrt()));
    Ok(BackwardPrecision {
        alpha_star,
        d,
        s_inf,
    })
}

/// Bonus for predictive variance `Σ = P + v` given a precomputed `S`.
pub fn bonus_from_precision(predictive_variance: f64, s_inf: f64, cfg: &CauseConfig) -> f64 {
    if predictive_variance <= 0.0 {
        return 0.0;
    }
    let alpha_tilde = s_inf / (1.0 + cfg.phi * predictive_variance * s_inf * s_inf).sqrt();
    cfg.c * predictive_variance * alpha_tilde
}

/// Exploration bonus `c (P + v) α̃` of an arm with posterior variance `p`.
pub fn cause_bonus(p: f64, v: f64, s: f64, cfg: &CauseConfig) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(invalid(format!("posterior variance must be >= 0, got {p}")));
    }
    let bp = backward_precision(v, s, cfg.gamma, cfg.phi)?;
    Ok(bonus_from_precision(p + v, bp.s_inf, cfg))
}

pub fn cause_index(belief: &Belief, arm: &ArmParams, cfg: &CauseConfig) -> Result<f64> {
    Ok(belief.m + cause_bonus(belief.p, arm.v, arm.s, cfg)?)
}

/// Per-step coefficient of the local optimality likelihood after the reward
/// is marginalised, `γ^(t-1) / sqrt(1 + φ γ^(2(t-1)) s)`.
pub fn local_coefficient(t: usize, s: f64, gamma: f64, phi: f64) -> f64 {
    let g = gamma.powi((t - 1) as i32);
    g / (1.0 + phi * g * g * s).sqrt()
}

/// `α_1` from exact backward iteration of
/// `α_t = β_t + α_{t+1} / sqrt(1 + φ v α_{t+1}²)` with `α_T = β_T`.
pub fn recursion_oracle(v: f64, s: f64, gamma: f64, phi: f64, horizon: usize) -> Result<f64> {
    check_gamma(gamma)?;
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let mut alpha = local_coefficient(horizon, s, gamma, phi);
    for t in (1..horizon).rev() {
        alpha = local_coefficient(t, s, gamma, phi) + alpha / (1.0 + phi * v * alpha * alpha).sqrt();
    }
    Ok(alpha)
}

/// Extend the horizon until `α_1` moves by less than `tol`.
pub fn recursion_oracle_converged(v: f64, s: f64, gamma: f64, phi: f64, tol: f64) -> Result<(f64, usize)> {
    let mut horizon = 64;
    let mut prev = recursion_oracle(v, s, gamma, phi, horizon)?;
    loop {
        let next_h = horizon * 2;
        let next = recursion_oracle(v, s, gamma, phi, next_h)?;
        if (next - prev).abs() < tol || next_h >= 1 << 22 {
            return Ok((next, next_h));
        }
        horizon = next_h;
        prev = next;
    }
}

/// Probit approximation of `∫ σ(a x) N(x | μ, var) dx`.
pub fn probit_moment(mu: f64, var: f64, slope: f64) -> Result<f64> {
    if !(var >= 0.0) {
        return Err(invalid(format!("variance must be >= 0, got {var}")));
    }
    Ok(sigmoid(slope * mu / (1.0 + PROBIT_PHI * slope * slope * var).sqrt()))
}

/// Memo of `S` keyed by the exact bit patterns of `(v, s, γ, φ)`.
#[derive(Debug, Default)]
pub struct PrecisionCache {
    entries: RwLock<HashMap<[u64; 4], BackwardPrecision>>,
}

impl PrecisionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, v: f64, s: f64, gamma: f64, phi: f64) -> Result<BackwardPrecision> {
        let key = [v.to_bits(), s.to_bits(), gamma.to_bits(), phi.to_bits()];
        if let Some(bp) = self.entries.read().expect("cache poisoned").get(&key) {
            return Ok(*bp);
        }
        let bp = backward_precision(v, s, gamma, phi)?;
        self.entries.write().expect("cache poisoned").insert(key, bp);
        Ok(bp)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
