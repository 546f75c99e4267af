//! Running joint estimation of volatility and stochasticity, with lesioned
//! agents that cannot move one of the two estimates.
//!
//! A healthy agent separates the two from the lag-0 and lag-1 moments of its
//! own prediction errors: drift the filter has not yet absorbed shows up as
//! positively correlated errors, observation noise as white ones. A blind
//! agent credits all unexplained error variance to the channel it can still
//! move.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cause::{cause_bonus, CauseConfig};
use crate::error::{invalid, Result};
use crate::model::{kalman_gain, stationary_posterior_variance};
use crate::output::fmt_f64;
use crate::rng::{Channel, StreamKey};

/// Floor of both estimates.
pub const ESTIMATE_FLOOR: f64 = 1e-6;
pub const DEFAULT_SENSITIVITY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Healthy,
    StochasticityBlind,
    VolatilityBlind,
}

impl ProfileKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::Healthy => "healthy",
            ProfileKind::StochasticityBlind => "stochasticity_blind",
            ProfileKind::VolatilityBlind => "volatility_blind",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionProfile {
    pub kind: ProfileKind,
    pub lambda_v: f64,
    pub lambda_s: f64,
}

impl LesionProfile {
    pub fn healthy() -> Self {
        Self {
            kind: ProfileKind::Healthy,
            lambda_v: DEFAULT_SENSITIVITY,
            lambda_s: DEFAULT_SENSITIVITY,
        }
    }

    pub fn stochasticity_blind() -> Self {
        Self {
            kind: ProfileKind::StochasticityBlind,
            lambda_v: DEFAULT_SENSITIVITY,
            lambda_s: 0.0,
        }
    }

    pub fn volatility_blind() -> Self {
        Self {
            kind: ProfileKind::VolatilityBlind,
            lambda_v: 0.0,
            lambda_s: DEFAULT_SENSITIVITY,
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::healthy(), Self::stochasticity_blind(), Self::volatility_blind()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimates {
    pub v_hat: f64,
    pub s_hat: f64,
    pub lambda_v: f64,
    pub lambda_s: f64,
    pub kind: ProfileKind,
    /// Previous prediction error, absent before the first observation.
    pub delta_prev: Option<f64>,
}

fn midpoint(xs: &[f64]) -> Option<f64> {
    let lo = xs.iter().copied().reduce(f64::min)?;
    let hi = xs.iter().copied().reduce(f64::max)?;
    Some(0.5 * (lo + hi))
}

/// Starts both estimates at the midpoint of the true values.
pub fn init_estimates(true_v: &[f64], true_s: &[f64], profile: LesionProfile) -> Result<NoiseEstimates> {
    let (Some(v), Some(s)) = (midpoint(true_v), midpoint(true_s)) else {
        return Err(invalid("initial estimates need at least one v and one s value"));
    };
    if !(v >= 0.0 && s >= 0.0) {
        return Err(invalid(format!("noise variances must be nonnegative, got v={v}, s={s}")));
    }
    Ok(NoiseEstimates {
        v_hat: v.max(ESTIMATE_FLOOR),
        s_hat: s.max(ESTIMATE_FLOOR),
        lambda_v: profile.lambda_v,
        lambda_s: profile.lambda_s,
        kind: profile.kind,
        delta_prev: None,
    })
}

/// One estimator step for prediction error `delta`, where `p` is the
/// posterior variance held before this observation.
pub fn update_estimates(est: NoiseEstimates, delta: f64, p: f64) -> NoiseEstimates {
    let excess = (delta * delta - p).max(ESTIMATE_FLOOR);
    let lag = est.delta_prev.map_or(0.0, |d| delta * d);
    let (target_v, target_s) = match est.kind {
        ProfileKind::Healthy => {
            // For a random walk tracked at fixed gain k, the error moments
            // satisfy E[d^2] = q + s and E[d d'] = (1-k) q - k s, where q is
            // the tracking-error variance and v = q k (2-k) - k^2 s.
            let k = kalman_gain(p, est.v_hat, est.s_hat);
            let target_s = (1.0 - k) * delta * delta - lag;
            let q = k * delta * delta + lag;
            (q * k * (2.0 - k) - k * k * target_s, target_s)
        }
        ProfileKind::StochasticityBlind => (excess, est.s_hat),
        ProfileKind::VolatilityBlind => (est.v_hat, excess),
    };
    let blend = |x: f64, lambda: f64, target: f64| {
        if lambda == 0.0 {
            x
        } else {
            ((1.0 - lambda) * x + lambda * target).max(ESTIMATE_FLOOR)
        }
    };
    NoiseEstimates {
        v_hat: blend(est.v_hat, est.lambda_v, target_v),
        s_hat: blend(est.s_hat, est.lambda_s, target_s),
        delta_prev: Some(delta),
        ..est
    }
}

/// Kalman gain the estimates imply at belief variance `p_ref`.
pub fn learning_rate(p_ref: f64, est: &NoiseEstimates) -> f64 {
    kalman_gain(p_ref, est.v_hat, est.s_hat)
}

/// Which belief variance the surface is read out at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceVariance {
    /// Median stationary posterior variance of the grid cells.
    Stationary,
    /// The prior variance `p0`.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionConfig {
    pub v_values: Vec<f64>,
    pub s_values: Vec<f64>,
    pub trials: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub gamma: f64,
    pub cause_scale: f64,
    pub m0: f64,
    pub p0: f64,
    pub reference: ReferenceVariance,
}

impl Default for LesionConfig {
    fn default() -> Self {
        Self {
            v_values: vec![1.0, 4.0],
            s_values: vec![9.0, 25.0],
            trials: 200,
            seeds: 100,
            base_seed: 0,
            gamma: 0.95,
            cause_scale: crate::cause::DEFAULT_SCALE,
            m0: 0.0,
            p0: 25.0,
            reference: ReferenceVariance::Stationary,
        }
    }
}

impl LesionConfig {
    /// Cells in `v`-major order.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.v_values
            .iter()
            .flat_map(|&v| self.s_values.iter().map(move |&s| (v, s)))
            .collect()
    }

    pub fn reference_variance(&self) -> f64 {
        match self.reference {
            ReferenceVariance::Prior => self.p0,
            ReferenceVariance::Stationary => {
                let mut ps: Vec<f64> = self
                    .cells()
                    .iter()
                    .map(|&(v, s)| stationary_posterior_variance(v, s))
                    .collect();
                ps.sort_by(f64::total_cmp);
                let n = ps.len();
                if n % 2 == 1 {
                    ps[n / 2]
                } else {
                    0.5 * (ps[n / 2 - 1] + ps[n / 2])
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.v_values.is_empty() || self.s_values.is_empty() {
            return Err(invalid("lesion grid needs at least one v and one s value"));
        }
        if self.v_values.iter().chain(&self.s_values).any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(invalid("lesion grid values must be finite and nonnegative"));
        }
        if self.trials == 0 || self.seeds == 0 {
            return Err(invalid("lesion experiment needs at least one trial and one seed"));
        }
        if !(self.p0 >= 0.0) {
            return Err(invalid(format!("prior variance must be nonnegative, got {}", self.p0)));
        }
        Ok(())
    }
}

/// Terminal estimates after one stream of `cfg.trials` observations of a
/// single arm with true noise `(v, s)`. The agent tracks the arm with its own
/// current estimates. Profiles share the stream for a given `(cell, seed)`.
pub fn run_stream(cfg: &LesionConfig, cell: usize, seed: u64, v: f64, s: f64, profile: LesionProfile) -> Result<NoiseEstimates> {
    let mut est = init_estimates(&cfg.v_values, &cfg.s_values, profile)?;
    let draw = |t: u64, channel| StreamKey::new(cfg.base_seed, seed, cell as u64, t, channel).standard_normal();
    let mut x = cfg.m0 + cfg.p0.sqrt() * draw(0, Channel::LesionInnovation);
    let (mut m, mut p) = (cfg.m0, cfg.p0);
    for t in 1..=cfg.trials as u64 {
        x += v.sqrt() * draw(t, Channel::LesionInnovation);
        let reward = x + s.sqrt() * draw(t, Channel::LesionObservation);
        let predictive = p + est.v_hat;
        let delta = reward - m;
        let gain = predictive / (predictive + est.s_hat);
        est = update_estimates(est, delta, p);
        m += gain * delta;
        p = (1.0 - gain) * predictive;
    }
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub profile: ProfileKind,
    pub v_true: f64,
    pub s_true: f64,
    pub v_hat: f64,
    pub s_hat: f64,
    pub learning_rate: f64,
    pub bonus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    V,
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTable {
    pub p_ref: f64,
    pub rows: Vec<SurfaceRow>,
}

impl SurfaceTable {
    pub fn row(&self, profile: ProfileKind, v: f64, s: f64) -> Option<&SurfaceRow> {
        self.rows
            .iter()
            .find(|r| r.profile == profile && r.v_true == v && r.s_true == s)
    }

    /// Differences `f(high) - f(low)` over every adjacent cell pair along `axis`.
    pub fn differences(&self, profile: ProfileKind, axis: Axis, f: impl Fn(&SurfaceRow) -> f64) -> Vec<f64> {
        let sorted_unique = |mut xs: Vec<f64>| {
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            xs
        };
        let rows: Vec<&SurfaceRow> = self.rows.iter().filter(|r| r.profile == profile).collect();
        let vs = sorted_unique(rows.iter().map(|r| r.v_true).collect());
        let ss = sorted_unique(rows.iter().map(|r| r.s_true).collect());
        let mut out = Vec::new();
        let value = |v, s| self.row(profile, v, s).map(&f);
        match axis {
            Axis::S => {
                for &v in &vs {
                    for w in ss.windows(2) {
                        if let (Some(a), Some(b)) = (value(v, w[0]), value(v, w[1])) {
                            out.push(b - a);
                        }
                    }
                }
            }
            Axis::V => {
                for &s in &ss {
                    for w in vs.windows(2) {
                        if let (Some(a), Some(b)) = (value(w[0], s), value(w[1], s)) {
                            out.push(b - a);
                        }
                    }
                }
            }
        }
        out
    }

    /// `profile,v_true,s_true,v_hat,s_hat,learning_rate,bonus`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["profile", "v_true", "s_true", "v_hat", "s_hat", "learning_rate", "bonus"])?;
        for r in &self.rows {
            w.write_record([
                r.profile.as_str().to_string(),
                fmt_f64(r.v_true),
                fmt_f64(r.s_true),
                fmt_f64(r.v_hat),
                fmt_f64(r.s_hat),
                fmt_f64(r.learning_rate),
                fmt_f64(r.bonus),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per `(profile, cell)`: terminal estimates averaged over seeds, and the
/// learning rate and CAUSE bonus they imply at the reference variance.
pub fn lesion_experiment(cfg: &LesionConfig, profiles: &[LesionProfile]) -> Result<SurfaceTable> {
    cfg.validate()?;
    let cause = CauseConfig::with_scale(cfg.gamma, cfg.cause_scale)?;
    let p_ref = cfg.reference_variance();
    let cells = cfg.cells();
    let mut rows = Vec::with_capacity(profiles.len() * cells.len());
    for &profile in profiles {
        for (i, &(v, s)) in cells.iter().enumerate() {
            let terminal = (0..cfg.seeds as u64)
                .into_par_iter()
                .map(|seed| run_stream(cfg, i, seed, v, s, profile))
                .collect::<Result<Vec<_>>>()?;
            let n = terminal.len() as f64;
            let mut mean = terminal[0];
            mean.v_hat = terminal.iter().map(|e| e.v_hat).sum::<f64>() / n;
            mean.s_hat = terminal.iter().map(|e| e.s_hat).sum::<f64>() / n;
            rows.push(SurfaceRow {
                profile: profile.kind,
                v_true: v,
                s_true: s,
                v_hat: mean.v_hat,
                s_hat: mean.s_hat,
                learning_rate: learning_rate(p_ref, &mean),
                bonus: cause_bonus(p_ref, mean.v_hat, mean.s_hat, &cause)?,
            });
        }
    }
    Ok(SurfaceTable { p_ref, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn healthy_at(v: f64, s: f64) -> NoiseEstimates {
        init_estimates(&[v], &[s], LesionProfile::healthy()).unwrap()
    }

    #[test]
    fn initial_estimates_are_midpoints() {
        let e = init_estimates(&[1.0, 4.0], &[9.0, 25.0], LesionProfile::healthy()).unwrap();
        assert_eq!((e.v_hat, e.s_hat), (2.5, 17.0));
        assert_eq!(e.delta_prev, None);
        let single = init_estimates(&[3.0], &[7.0], LesionProfile::volatility_blind()).unwrap();
        assert_eq!((single.v_hat, single.s_hat), (3.0, 7.0));
        assert!(init_estimates(&[], &[1.0], LesionProfile::healthy()).is_err());
    }

    #[test]
    fn profiles_pin_the_right_channel() {
        let [h, sb, vb] = LesionProfile::all();
        assert_eq!((h.lambda_v, h.lambda_s), (0.1, 0.1));
        assert_eq!((sb.lambda_v, sb.lambda_s), (0.1, 0.0));
        assert_eq!((vb.lambda_v, vb.lambda_s), (0.0, 0.1));
    }

    #[test]
    fn learning_rate_examples() {
        let e = healthy_at(4.0, 25.0);
        let k = learning_rate(8.198, &e);
        assert!((k - 12.198 / 37.198).abs() < 1e-12);
        assert!((k - 0.328).abs() < 5e-4);
        assert!(learning_rate(8.198, &healthy_at(4.0, 0.0)) > 1.0 - 1e-6);
        assert!(learning_rate(8.198, &healthy_at(1e12, 25.0)) > 1.0 - 1e-9);
    }

    #[test]
    fn zero_errors_drive_both_estimates_to_the_floor() {
        let mut e = healthy_at(2.5, 17.0);
        e = update_estimates(e, 3.0, 10.0);
        let mut prev = (e.v_hat, e.s_hat);
        for _ in 0..400 {
            e = update_estimates(e, 0.0, 1.0);
            assert!(e.v_hat <= prev.0 && e.s_hat <= prev.1);
            prev = (e.v_hat, e.s_hat);
        }
        assert!(e.v_hat < 1e-5 && e.s_hat < 1e-5);
        assert!(e.v_hat >= ESTIMATE_FLOOR && e.s_hat >= ESTIMATE_FLOOR);
    }

    #[test]
    fn blind_agents_credit_unexplained_variance_to_the_free_channel() {
        let sb = init_estimates(&[2.0], &[10.0], LesionProfile::stochasticity_blind()).unwrap();
        let next = update_estimates(sb, 5.0, 4.0);
        assert!((next.v_hat - (0.9 * 2.0 + 0.1 * 21.0)).abs() < 1e-12);
        assert_eq!(next.s_hat, 10.0);
        let vb = init_estimates(&[2.0], &[10.0], LesionProfile::volatility_blind()).unwrap();
        let next = update_estimates(vb, 5.0, 4.0);
        assert!((next.s_hat - (0.9 * 10.0 + 0.1 * 21.0)).abs() < 1e-12);
        assert_eq!(next.v_hat, 2.0);
    }

    /// Simulation oracle for the error moments of a fixed-gain tracker.
    #[test]
    fn fixed_gain_error_moments_match_closed_form() {
        let (v, s, k) = (2.0f64, 9.0f64, 0.3f64);
        let n = 400_000u64;
        let (mut x, mut m) = (0.0, 0.0);
        let mut prev: Option<f64> = None;
        let (mut c0, mut c1) = (0.0, 0.0);
        for t in 0..n {
            x += v.sqrt() * StreamKey::new(3, 0, 0, t, Channel::LesionInnovation).standard_normal();
            let d = x + s.sqrt() * StreamKey::new(3, 0, 0, t, Channel::LesionObservation).standard_normal() - m;
            c0 += d * d;
            if let Some(p) = prev {
                c1 += d * p;
            }
            m += k * d;
            prev = Some(d);
        }
        let (c0, c1) = (c0 / n as f64, c1 / (n - 1) as f64);
        // tracking-error variance q solves q = (1-k)^2 q + k^2 s + v
        let q = (k * k * s + v) / (1.0 - (1.0 - k).powi(2));
        assert!((c0 - (q + s)).abs() < 0.02 * (q + s), "{c0} vs {}", q + s);
        assert!((c1 - ((1.0 - k) * q - k * s)).abs() < 0.1, "{c1}");
        let s_back = (1.0 - k) * c0 - c1;
        let v_back = (k * c0 + c1) * k * (2.0 - k) - k * k * s_back;
        assert!((s_back - s).abs() < 0.3 && (v_back - v).abs() < 0.15, "{s_back} {v_back}");
    }

    #[test]
    fn healthy_agent_tracks_true_noise_on_average() {
        let cfg = LesionConfig::default();
        let mean = |v: f64, s: f64| {
            let runs: Vec<NoiseEstimates> = (0..100)
                .map(|seed| run_stream(&cfg, 0, seed, v, s, LesionProfile::healthy()).unwrap())
                .collect();
            (
                runs.iter().map(|e| e.v_hat).sum::<f64>() / 100.0,
                runs.iter().map(|e| e.s_hat).sum::<f64>() / 100.0,
            )
        };
        let (_, s_low) = mean(1.0, 9.0);
        let (_, s_high) = mean(1.0, 25.0);
        assert!(s_high > s_low);
        let (v_low, _) = mean(1.0, 25.0);
        let (v_high, _) = mean(4.0, 25.0);
        assert!(v_high > v_low);
    }

    #[test]
    fn reference_variance_is_median_stationary_variance() {
        let cfg = LesionConfig::default();
        let p = cfg.reference_variance();
        let expected = 0.5 * (stationary_posterior_variance(4.0, 9.0) + stationary_posterior_variance(1.0, 25.0));
        assert_eq!(p, expected);
        assert!((p - 4.42).abs() < 0.01);
        let prior = LesionConfig {
            reference: ReferenceVariance::Prior,
            ..cfg
        };
        assert_eq!(prior.reference_variance(), 25.0);
    }

    #[test]
    fn surface_shape_and_determinism() {
        let cfg = LesionConfig {
            seeds: 8,
            trials: 30,
            ..LesionConfig::default()
        };
        let a = lesion_experiment(&cfg, &LesionProfile::all()).unwrap();
        assert_eq!(a.rows.len(), 12);
        assert_eq!(a, lesion_experiment(&cfg, &LesionProfile::all()).unwrap());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("profile,v_true,s_true,v_hat,s_hat,learning_rate,bonus\n"));
        assert_eq!(text.lines().count(), 13);
        assert_eq!(text.lines().nth(5).unwrap().split(',').next(), Some("stochasticity_blind"));
        // blind channels keep their initial value
        for r in &a.rows {
            match r.profile {
                ProfileKind::StochasticityBlind => assert_eq!(r.s_hat, 17.0),
                ProfileKind::VolatilityBlind => assert_eq!(r.v_hat, 2.5),
                ProfileKind::Healthy => {}
            }
        }
    }

    #[test]
    fn cell_pair_differences() {
        let row = |v, s, bonus| SurfaceRow {
            profile: ProfileKind::Healthy,
            v_true: v,
            s_true: s,
            v_hat: 0.0,
            s_hat: 0.0,
            learning_rate: 0.0,
            bonus,
        };
        let t = SurfaceTable {
            p_ref: 1.0,
            rows: vec![row(1.0, 9.0, 1.0), row(1.0, 25.0, 0.5), row(4.0, 9.0, 3.0), row(4.0, 25.0, 2.0)],
        };
        assert_eq!(t.differences(ProfileKind::Healthy, Axis::S, |r| r.bonus), [-0.5, -1.0]);
        assert_eq!(t.differences(ProfileKind::Healthy, Axis::V, |r| r.bonus), [2.0, 1.5]);
        assert!(t.differences(ProfileKind::VolatilityBlind, Axis::V, |r| r.bonus).is_empty());
    }

    proptest! {
        #[test]
        fn pinned_channels_never_move(
            deltas in prop::collection::vec(-50.0f64..50.0, 1..60),
            p in 0.0f64..30.0,
        ) {
            let mut sb = init_estimates(&[1.0, 4.0], &[9.0, 25.0], LesionProfile::stochasticity_blind()).unwrap();
            let mut vb = init_estimates(&[1.0, 4.0], &[9.0, 25.0], LesionProfile::volatility_blind()).unwrap();
            let mut frozen = init_estimates(&[1.0, 4.0], &[9.0, 25.0], LesionProfile { lambda_v: 0.0, lambda_s: 0.0, ..LesionProfile::healthy() }).unwrap();
            for &d in &deltas {
                sb = update_estimates(sb, d, p);
                vb = update_estimates(vb, d, p);
                frozen = update_estimates(frozen, d, p);
                prop_assert_eq!(sb.s_hat, 17.0);
                prop_assert_eq!(vb.v_hat, 2.5);
                prop_assert_eq!((frozen.v_hat, frozen.s_hat), (2.5, 17.0));
            }
        }

        #[test]
        fn estimates_stay_above_floor(
            deltas in prop::collection::vec(-1e3f64..1e3, 1..80),
            p in 0.0f64..1e3,
            which in 0usize..3,
        ) {
            let mut e = init_estimates(&[1.0, 4.0], &[9.0, 25.0], LesionProfile::all()[which]).unwrap();
            for &d in &deltas {
                e = update_estimates(e, d, p);
                prop_assert!(e.v_hat >= ESTIMATE_FLOOR && e.s_hat >= ESTIMATE_FLOOR);
                prop_assert!(e.v_hat.is_finite() && e.s_hat.is_finite());
            }
        }
    }
}
