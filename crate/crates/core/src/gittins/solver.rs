//! Value iteration for the rested retirement problem and bisection on the
//! retirement salary.
//!
//! The state is the posterior `(m, P)` of a single arm. Pulling pays `m` and
//! moves the posterior to `(m', P')` with `P' = (P + v) s / (P + v + s)` and
//! `m' ~ N(m, (P + v)² / (P + v + s))`; retiring pays `λ` forever. The Gittins
//! bonus at `P` is the smallest salary for which retiring at `m = 0` is optimal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::quadrature::GaussHermiteRule;
use crate::cause::check_gamma;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GittinsConfig {
    pub m_grid_points: usize,
    pub p_grid_points: usize,
    pub quad_nodes: usize,
    pub vi_tol: f64,
    pub vi_max_iters: usize,
    pub bisect_iters: usize,
    pub bisect_tol: f64,
    pub p_min: f64,
}

impl Default for GittinsConfig {
    fn default() -> Self {
        Self {
            m_grid_points: 251,
            p_grid_points: 30,
            quad_nodes: 15,
            vi_tol: 1e-4,
            vi_max_iters: 300,
            bisect_iters: 20,
            bisect_tol: 1e-3,
            p_min: 0.01,
        }
    }
}

impl GittinsConfig {
    /// Coarser settings used for bonus sweeps along a noise axis.
    pub fn reduced() -> Self {
        Self {
            m_grid_points: 121,
            p_grid_points: 20,
            quad_nodes: 11,
            vi_max_iters: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("m_grid_points", self.m_grid_points),
            ("p_grid_points", self.p_grid_points),
            ("quad_nodes", self.quad_nodes),
            ("vi_max_iters", self.vi_max_iters),
            ("bisect_iters", self.bisect_iters),
        ];
        for (name, n) in counts {
            if n < 2 {
                return Err(Error::SolverConfig(format!("{name} must be >= 2, got {n}")));
            }
        }
        for (name, x) in [("vi_tol", self.vi_tol), ("bisect_tol", self.bisect_tol), ("p_min", self.p_min)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::SolverConfig(format!("{name} must be positive and finite, got {x}")));
            }
        }
        Ok(())
    }
}

/// Largest tabulated variance: `max(50 + 10 v_max / (1 - γ), 5 (v_max + s_max))`.
pub fn default_p_max(v_max: f64, s_max: f64, gamma: f64) -> f64 {
    let horizon = 1.0 / (1.0 - gamma);
    (50.0 + 10.0 * horizon * v_max).max(5.0 * (v_max + s_max))
}

/// Mean/variance grids of one retirement problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverGrid {
    pub m: Vec<f64>,
    pub p: Vec<f64>,
    pub m_range: f64,
    /// Largest salary tried by bisection.
    pub lambda_max: f64,
}

impl SolverGrid {
    /// Log-spaced variance grid on `[p_min, P_max]` with `P_max` from the
    /// largest noise levels the table must serve.
    pub fn standard(v: f64, v_max: f64, s_max: f64, gamma: f64, cfg: &GittinsConfig) -> Result<Self> {
        if !(v_max >= v) {
            return Err(invalid(format!("v_max {v_max} below the arm's v {v}")));
        }
        let p_max = default_p_max(v_max, s_max, gamma);
        if !(p_max > cfg.p_min) {
            return Err(Error::SolverConfig(format!("P_max {p_max} must exceed p_min {}", cfg.p_min)));
        }
        Self::build(log_space(cfg.p_min, p_max, cfg.p_grid_points), v, gamma, cfg)
    }

    /// Linear variance grid on `[P_ref / 2, 2 P_ref]`.
    pub fn local(p_ref: f64, v: f64, gamma: f64, cfg: &GittinsConfig) -> Result<Self> {
        if !(p_ref > 0.0 && p_ref.is_finite()) {
            return Err(invalid(format!("reference variance must be positive, got {p_ref}")));
        }
        let (lo, hi) = (0.5 * p_ref, 2.0 * p_ref);
        let n = cfg.p_grid_points;
        let p = (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect();
        Self::build(p, v, gamma, cfg)
    }

    fn build(p: Vec<f64>, v: f64, gamma: f64, cfg: &GittinsConfig) -> Result<Self> {
        cfg.validate()?;
        check_gamma(gamma)?;
        let p_max = *p.last().expect("grid has at least two rows");
        let scale = (p_max + v).sqrt() / (1.0 - gamma).sqrt();
        let m_range = 6.0 * scale;
        let n = cfg.m_grid_points;
        let m = (0..n)
            .map(|i| m_range * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
            .collect();
        Ok(Self {
            m,
            p,
            m_range,
            lambda_max: 10.0 * scale,
        })
    }

    pub fn step(&self) -> f64 {
        self.m[1] - self.m[0]
    }
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|j| {
            if j == 0 {
                lo
            } else if j + 1 == n {
                hi
            } else {
                (a + (b - a) * j as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Position of `x` in an increasing grid as `(lower index, weight of upper)`,
/// clamped at both ends.
fn bracket(grid: &[f64], x: f64) -> (usize, f64, bool) {
    let n = grid.len();
    if x <= grid[0] {
        return (0, 0.0, x < grid[0]);
    }
    if x >= grid[n - 1] {
        return (n - 2, 1.0, x > grid[n - 1]);
    }
    let k = grid.partition_point(|&g| g <= x) - 1;
    let k = k.min(n - 2);
    (k, (x - grid[k]) / (grid[k + 1] - grid[k]), false)
}

/// Precomputed expectation operator for one variance row.
#[derive(Debug, Clone)]
struct RowStencil {
    // V(., P') = (1 - w) V(., p[lo]) + w V(., p[lo + 1]) in log P
    lo: usize,
    w: f64,
    /// Merged `(m-index offset, weight)` pairs of quadrature nodes with linear
    /// interpolation in `m`.
    taps: Vec<(isize, f64)>,
    min_off: isize,
    max_off: isize,
    /// Quadrature nodes landing outside the m-grid per sweep of this row.
    m_clamps: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solves: u64,
    pub sweeps: u64,
    pub cap_hits: u64,
    pub early_exits: u64,
    pub m_clamps: u64,
    /// Rows whose successor variance falls outside the variance grid.
    pub p_clamps: u64,
}

impl SolveStats {
    pub fn merge(&mut self, other: &SolveStats) {
        self.solves += other.solves;
        self.sweeps += other.sweeps;
        self.cap_hits += other.cap_hits;
        self.early_exits += other.early_exits;
        self.m_clamps += other.m_clamps;
        self.p_clamps = self.p_clamps.max(other.p_clamps);
    }
}

/// Converged (or capped) value function on the solver grid.
#[derive(Debug, Clone)]
pub struct ValueGrid {
    /// Row-major: `values[j * m.len() + i]` is `V(m_i, p_j)`.
    pub values: Vec<f64>,
    pub m: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_change: f64,
    pub clamp_count: u64,
}

impl ValueGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.m.len() + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.m.len();
        &self.values[j * n..(j + 1) * n]
    }

    /// Linear in `m`, linear in `log P`, clamped to the grid.
    pub fn interpolate(&self, m: f64, p: f64) -> f64 {
        interpolate(&self.values, &self.m, &log_grid(&self.p), m, p)
    }
}

fn log_grid(p: &[f64]) -> Vec<f64> {
    p.iter().map(|x| x.ln()).collect()
}

fn interpolate(values: &[f64], m_grid: &[f64], log_p: &[f64], m: f64, p: f64) -> f64 {
    excess_over(values, m_grid, log_p, m, p, 0.0)
}

/// Interpolated `V(m, p) - base`; exactly zero where all neighbours equal `base`.
fn excess_over(values: &[f64], m_grid: &[f64], log_p: &[f64], m: f64, p: f64, base: f64) -> f64 {
    let n = m_grid.len();
    let (i, wm, _) = bracket(m_grid, m);
    let (j, wp, _) = bracket(log_p, p.ln());
    let row = |j: usize| (1.0 - wm) * (values[j * n + i] - base) + wm * (values[j * n + i + 1] - base);
    (1.0 - wp) * row(j) + wp * row(j + 1)
}

/// Retirement problem for one arm at fixed `(v, s, γ)` on a fixed grid.
#[derive(Debug, Clone)]
pub struct RetirementProblem {
    pub v: f64,
    pub s: f64,
    pub gamma: f64,
    pub cfg: GittinsConfig,
    pub grid: SolverGrid,
    log_p: Vec<f64>,
    rows: Vec<RowStencil>,
    p_clamps: u64,
    never_retire: Vec<f64>,
}

const NEVER_RETIRE_MAX_SWEEPS: usize = 5000;
const NEVER_RETIRE_RTOL: f64 = 1e-13;

/// Bounds on the value function carried across bisection steps. `lower`
/// is a subsolution for every salary above the last "continue" verdict and
/// `upper` a supersolution for every salary below the last "retire" verdict.
#[derive(Default)]
struct Bracket {
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
}

impl RetirementProblem {
    pub fn new(v: f64, s: f64, gamma: f64, cfg: GittinsConfig, grid: SolverGrid) -> Result<Self> {
        cfg.validate()?;
        check_gamma(gamma)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(format!("innovation variance must be finite and >= 0, got {v}")));
        }
        if !(s >= 0.0) {
            return Err(invalid(format!("observation variance must be >= 0, got {s}")));
        }
        let rule = GaussHermiteRule::new(cfg.quad_nodes)?;
        let log_p = log_grid(&grid.p);
        let h = grid.step();
        let n = grid.m.len() as isize;
        let mut p_clamps = 0;
        let rows = grid
            .p
            .iter()
            .map(|&p| {
                let total = p + v;
                let (p_next, std) = if s.is_infinite() {
                    (total, 0.0)
                } else {
                    (total * s / (total + s), total / (total + s).sqrt())
                };
                let (lo, w, clamped) = bracket(&log_p, p_next.ln());
                p_clamps += u64::from(clamped);
                let mut merged: BTreeMap<isize, f64> = BTreeMap::new();
                let mut m_clamps = 0u64;
                for (z, wq) in rule.iter() {
                    let pos = std * z / h;
                    let fl = pos.floor();
                    let frac = pos - fl;
                    let fl = fl as isize;
                    *merged.entry(fl).or_default() += wq * (1.0 - frac);
                    if frac > 0.0 {
                        *merged.entry(fl + 1).or_default() += wq * frac;
                    }
                    m_clamps += (0..n).filter(|&i| {
                        let x = i as f64 + pos;
                        x < 0.0 || x > (n - 1) as f64
                    }).count() as u64;
                }
                let taps: Vec<(isize, f64)> = merged.into_iter().filter(|&(_, w)| w != 0.0).collect();
                RowStencil {
                    lo,
                    w,
                    min_off: taps.first().map_or(0, |t| t.0),
                    max_off: taps.last().map_or(0, |t| t.0),
                    taps,
                    m_clamps,
                }
            })
            .collect();
        let mut problem = Self {
            v,
            s,
            gamma,
            cfg,
            grid,
            log_p,
            rows,
            p_clamps,
            never_retire: Vec::new(),
        };
        problem.never_retire = Self::never_retire_value(&problem.grid, gamma, |c, n, x| {
            problem.sweep(c, n, x, f64::NEG_INFINITY)
        });
        Ok(problem)
    }

    /// Problem on the standard log grid sized for this arm alone.
    pub fn standard(v: f64, s: f64, gamma: f64, cfg: GittinsConfig) -> Result<Self> {
        let grid = SolverGrid::standard(v, v, s, gamma, &cfg)?;
        Self::new(v, s, gamma, cfg, grid)
    }

    pub fn value_iteration(&self, lambda: f64) -> Result<ValueGrid> {
        if !lambda.is_finite() {
            return Err(invalid(format!("salary must be finite, got {lambda}")));
        }
        Ok(self.solve(lambda))
    }

    /// One Bellman sweep `next = max(floor, m + γ E[cur])`; returns the largest change.
    fn sweep(&self, cur: &[f64], next: &mut [f64], mixed: &mut [f64], floor: f64) -> f64 {
        let nm = self.grid.m.len();
        let mut max_change: f64 = 0.0;
        for (j, row) in self.rows.iter().enumerate() {
            let (a, b) = (&cur[row.lo * nm..(row.lo + 1) * nm], &cur[(row.lo + 1) * nm..(row.lo + 2) * nm]);
            for ((x, &ya), &yb) in mixed.iter_mut().zip(a).zip(b) {
                *x = (1.0 - row.w) * ya + row.w * yb;
            }
            let out = &mut next[j * nm..(j + 1) * nm];
            let first = (-row.min_off).max(0) as usize;
            let last = nm as isize - 1 - row.max_off;
            for (i, slot) in out.iter_mut().enumerate() {
                let expect = if i >= first && (i as isize) <= last {
                    row.taps
                        .iter()
                        .map(|&(o, w)| w * mixed[(i as isize + o) as usize])
                        .sum::<f64>()
                } else {
                    row.taps
                        .iter()
                        .map(|&(o, w)| w * mixed[(i as isize + o).clamp(0, nm as isize - 1) as usize])
                        .sum::<f64>()
                };
                *slot = (self.grid.m[i] + self.gamma * expect).max(floor);
            }
            let old = &cur[j * nm..(j + 1) * nm];
            for (o, n) in old.iter().zip(out.iter()) {
                max_change = max_change.max((n - o).abs());
            }
        }
        max_change
    }

    /// Value of never retiring on the grid, iterated to a tight residual.
    fn never_retire_value(grid: &SolverGrid, gamma: f64, sweep: impl Fn(&[f64], &mut [f64], &mut [f64]) -> f64) -> Vec<f64> {
        let nm = grid.m.len();
        let mut cur: Vec<f64> = (0..grid.p.len())
            .flat_map(|_| grid.m.iter().map(|&m| m / (1.0 - gamma)))
            .collect();
        let mut next = vec![0.0; cur.len()];
        let mut mixed = vec![0.0; nm];
        let scale = grid.m_range / (1.0 - gamma);
        for _ in 0..NEVER_RETIRE_MAX_SWEEPS {
            let change = sweep(&cur, &mut next, &mut mixed);
            std::mem::swap(&mut cur, &mut next);
            if change <= NEVER_RETIRE_RTOL * scale {
                break;
            }
        }
        cur
    }

    fn solve(&self, lambda: f64) -> ValueGrid {
        let retire = lambda / (1.0 - self.gamma);
        let nm = self.grid.m.len();
        // max(retire, never-retire value) is a subsolution, so iterates rise
        // monotonically towards the fixed point
        let mut cur: Vec<f64> = self.never_retire.iter().map(|&w| w.max(retire)).collect();
        let mut next = vec![0.0; cur.len()];
        let mut mixed = vec![0.0; nm];
        let mut max_change = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.cfg.vi_max_iters {
            iterations += 1;
            max_change = self.sweep(&cur, &mut next, &mut mixed, retire);
            std::mem::swap(&mut cur, &mut next);
            if max_change < self.cfg.vi_tol {
                converged = true;
                break;
            }
        }
        ValueGrid {
            values: cur,
            m: self.grid.m.clone(),
            p: self.grid.p.clone(),
            iterations,
            converged,
            max_change,
            clamp_count: self.per_sweep_clamps() * iterations as u64,
        }
    }

    fn per_sweep_clamps(&self) -> u64 {
        self.rows.iter().map(|r| r.m_clamps).sum()
    }

    /// Whether retiring at `(m, p)` is optimal for salary `lambda`.
    ///
    /// Value iteration runs from below until it converges. A rising iterate
    /// that exceeds the retirement value at `(m, p)` settles "continue"; a
    /// falling iterate from `bracket.upper` that reaches it settles "retire".
    fn retirement_optimal(&self, lambda: f64, m: f64, p: f64, bracket: &mut Bracket, stats: &mut SolveStats) -> bool {
        stats.solves += 1;
        stats.p_clamps = stats.p_clamps.max(self.p_clamps);
        let retire = lambda / (1.0 - self.gamma);
        let nm = self.grid.m.len();
        let start = bracket.lower.as_deref().unwrap_or(&self.never_retire);
        let mut low: Vec<f64> = start.iter().map(|&w| w.max(retire)).collect();
        let mut high = bracket.upper.clone();
        let mut scratch = vec![0.0; low.len()];
        let mut mixed = vec![0.0; nm];
        let excess = |values: &[f64]| excess_over(values, &self.grid.m, &self.log_p, m, p, retire);
        let mut change = f64::INFINITY;
        let mut sweeps = 0;
        let verdict = loop {
            if sweeps == self.cfg.vi_max_iters {
                stats.cap_hits += 1;
                break None;
            }
            sweeps += 1;
            change = self.sweep(&low, &mut scratch, &mut mixed, retire);
            std::mem::swap(&mut low, &mut scratch);
            if excess(&low) > 0.0 {
                break Some(false);
            }
            if let Some(high) = high.as_mut() {
                self.sweep(high, &mut scratch, &mut mixed, retire);
                std::mem::swap(high, &mut scratch);
                stats.sweeps += 1;
                stats.m_clamps += self.per_sweep_clamps();
                if excess(high) <= 0.0 {
                    break Some(true);
                }
            }
            if change < self.cfg.vi_tol {
                break None;
            }
        };
        stats.sweeps += sweeps as u64;
        stats.m_clamps += self.per_sweep_clamps() * sweeps as u64;
        if verdict.is_some() {
            stats.early_exits += 1;
        }
        let retire_optimal = verdict.unwrap_or_else(|| excess(&low) <= 0.0);
        if retire_optimal {
            bracket.upper = Some(match (verdict, high) {
                (Some(true), Some(high)) => high,
                // T(L + c) <= L + c once c >= change / (1 - γ)
                _ => {
                    let lift = change / (1.0 - self.gamma);
                    low.iter().map(|x| x + lift).collect()
                }
            });
        } else {
            bracket.lower = Some(low);
        }
        retire_optimal
    }

    /// Copy of the problem with the mean grid shifted by `offset`.
    fn recentred(&self, offset: f64) -> Self {
        let mut shifted = self.clone();
        shifted.grid.m.iter_mut().for_each(|m| *m += offset);
        let lift = offset / (1.0 - self.gamma);
        shifted.never_retire.iter_mut().for_each(|w| *w += lift);
        shifted
    }

    /// Break-even salary at `(m, p)`: smallest salary making retirement
    /// optimal, bisected on `[m, m + λ_max]`. The mean grid is recentred on
    /// `m` so that `m` is a grid node.
    pub fn break_even_salary(&self, m: f64, p: f64) -> Result<BonusEstimate> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(invalid(format!("posterior variance must be positive, got {p}")));
        }
        if !m.is_finite() {
            return Err(invalid(format!("mean must be finite, got {m}")));
        }
        let shifted;
        let problem = if m == 0.0 {
            self
        } else {
            shifted = self.recentred(m);
            &shifted
        };
        let mut stats = SolveStats::default();
        let mut bracket = Bracket::default();
        let (mut lo, mut hi) = (m, m + self.grid.lambda_max);
        if !problem.retirement_optimal(hi, m, p, &mut bracket, &mut stats) {
            return Err(Error::SolverConfig(format!(
                "salary bracket does not contain the break-even point: retiring at m={m}, P={p} \
                 is still suboptimal at λ_max={} (v={}, s={}, γ={})",
                self.grid.lambda_max, self.v, self.s, self.gamma
            )));
        }
        for _ in 0..self.cfg.bisect_iters {
            if hi - lo < self.cfg.bisect_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if problem.retirement_optimal(mid, m, p, &mut bracket, &mut stats) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(BonusEstimate {
            salary: 0.5 * (lo + hi),
            width: hi - lo,
            stats,
        })
    }

    /// Exploration bonus at posterior variance `p`.
    pub fn bonus(&self, p: f64) -> Result<BonusEstimate> {
        self.break_even_salary(0.0, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusEstimate {
    /// Midpoint of the final bracket; equals the bonus when solved at `m = 0`.
    pub salary: f64,
    pub width: f64,
    pub stats: SolveStats,
}

pub fn value_iteration(lambda: f64, v: f64, s: f64, gamma: f64, cfg: &GittinsConfig) -> Result<ValueGrid> {
    RetirementProblem::standard(v, s, gamma, *cfg)?.value_iteration(lambda)
}

pub fn gittins_bonus(p: f64, v: f64, s: f64, gamma: f64, cfg: &GittinsConfig) -> Result<f64> {
    Ok(RetirementProblem::standard(v, s, gamma, *cfg)?.bonus(p)?.salary)
}
