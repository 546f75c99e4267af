//! Numerical monotonicity checks of the Gittins bonus in `s`, `v` and `P`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{GittinsConfig, RetirementProblem, SolveStats, SolverGrid};
use crate::cause::{cause_bonus, CauseConfig};
use crate::error::{invalid, Result};
use crate::output::fmt_f64;

/// Violations up to bisection width plus interpolation error are tolerated.
pub const DEFAULT_SLACK: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationGrid {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub gamma: f64,
    pub slack: f64,
}

impl Default for CertificationGrid {
    fn default() -> Self {
        Self {
            s: vec![10.0, 30.0, 100.0, 300.0, 1000.0],
            v: vec![0.0, 1.0, 4.0, 100.0],
            p: vec![2.0, 8.0, 25.0],
            gamma: 0.95,
            slack: DEFAULT_SLACK,
        }
    }
}

impl CertificationGrid {
    pub fn len(&self) -> usize {
        self.s.len() * self.v.len() * self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        for (name, axis) in [("s", &self.s), ("v", &self.v), ("p", &self.p)] {
            if axis.is_empty() || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(invalid(format!("{name} axis must be nonempty and strictly increasing")));
            }
        }
        if !(self.slack >= 0.0) {
            return Err(invalid(format!("slack must be >= 0, got {}", self.slack)));
        }
        Ok(())
    }
}

/// Source of bonus values; the solver in production, a stub in fault-injection tests.
pub trait BonusEvaluator: Sync {
    /// Gittins bonus at each of `p` for one `(v, s)` pair.
    fn gittins(&self, p: &[f64], v: f64, s: f64, grid: &CertificationGrid) -> Result<(Vec<f64>, SolveStats)>;

    fn cause(&self, p: f64, v: f64, s: f64, gamma: f64) -> Result<f64> {
        cause_bonus(p, v, s, &CauseConfig::new(gamma)?)
    }
}

/// Solves every `(v, s)` on one variance/mean grid sized for the largest
/// `v` and `s` of the certification grid, so bonuses differ only through
/// the dynamics and not through the discretization.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolverEvaluator {
    pub cfg: GittinsConfig,
}

impl BonusEvaluator for SolverEvaluator {
    fn gittins(&self, p: &[f64], v: f64, s: f64, grid: &CertificationGrid) -> Result<(Vec<f64>, SolveStats)> {
        let v_max = grid.v.iter().copied().fold(0.0, f64::max);
        let s_max = grid.s.iter().copied().fold(0.0, f64::max);
        let solver_grid = SolverGrid::standard(v, v_max, s_max, grid.gamma, &self.cfg)?;
        let problem = RetirementProblem::new(v, s, grid.gamma, self.cfg, solver_grid)?;
        let mut stats = SolveStats::default();
        let mut out = Vec::with_capacity(p.len());
        for &pp in p {
            let est = problem.bonus(pp)?;
            stats.merge(&est.stats);
            out.push(est.salary);
        }
        Ok((out, stats))
    }
}

/// One grid point. Margins compare against the previous grid value along
/// each axis and are positive when the expected direction holds: Gittins
/// nonincreasing in `s`, nondecreasing in `v` and `P`; CAUSE decreasing in
/// `s`, increasing in `P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificationRow {
    pub v: f64,
    pub s: f64,
    pub p: f64,
    pub gittins: f64,
    pub cause: f64,
    pub s_margin: Option<f64>,
    pub v_margin: Option<f64>,
    pub p_margin: Option<f64>,
    pub cause_s_margin: Option<f64>,
    pub cause_p_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub grid: CertificationGrid,
    pub rows: Vec<CertificationRow>,
    pub stats: SolveStats,
}

impl CertificationReport {
    fn margins<'a>(&'a self, f: impl Fn(&CertificationRow) -> Option<f64> + 'a) -> impl Iterator<Item = f64> + 'a {
        self.rows.iter().filter_map(f)
    }

    /// Smallest Gittins margin along `s`, `v` and `P`.
    pub fn worst_margins(&self) -> (f64, f64, f64) {
        let min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
        (
            min(&mut self.margins(|r| r.s_margin)),
            min(&mut self.margins(|r| r.v_margin)),
            min(&mut self.margins(|r| r.p_margin)),
        )
    }

    /// Grid points whose Gittins margin falls below `-slack` on any axis.
    pub fn violations(&self) -> Vec<&CertificationRow> {
        let bad = |m: Option<f64>| m.is_some_and(|m| m < -self.grid.slack);
        self.rows
            .iter()
            .filter(|r| bad(r.s_margin) || bad(r.v_margin) || bad(r.p_margin))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.violations().is_empty()
    }

    /// Whether CAUSE is strictly decreasing in `s` and strictly increasing in `P`.
    pub fn cause_strict(&self) -> (bool, bool) {
        (
            self.margins(|r| r.cause_s_margin).all(|m| m > 0.0),
            self.margins(|r| r.cause_p_margin).all(|m| m > 0.0),
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "v",
            "s",
            "p",
            "gittins",
            "cause",
            "s_margin",
            "v_margin",
            "p_margin",
            "cause_s_margin",
            "cause_p_margin",
            "within_slack",
        ])?;
        let opt = |m: Option<f64>| m.map(fmt_f64).unwrap_or_default();
        let slack = self.grid.slack;
        for r in &self.rows {
            let ok = [r.s_margin, r.v_margin, r.p_margin].iter().all(|m| m.is_none_or(|m| m >= -slack));
            w.write_record([
                fmt_f64(r.v),
                fmt_f64(r.s),
                fmt_f64(r.p),
                fmt_f64(r.gittins),
                fmt_f64(r.cause),
                opt(r.s_margin),
                opt(r.v_margin),
                opt(r.p_margin),
                opt(r.cause_s_margin),
                opt(r.cause_p_margin),
                ok.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn certify(grid: &CertificationGrid, evaluator: &dyn BonusEvaluator) -> Result<CertificationReport> {
    grid.validate()?;
    let pairs: Vec<(usize, usize)> = (0..grid.v.len())
        .flat_map(|iv| (0..grid.s.len()).map(move |is| (iv, is)))
        .collect();
    let solved = pairs
        .par_iter()
        .map(|&(iv, is)| evaluator.gittins(&grid.p, grid.v[iv], grid.s[is], grid))
        .collect::<Result<Vec<_>>>()?;
    let (ns, np) = (grid.s.len(), grid.p.len());
    let gittins = |iv: usize, is: usize, ip: usize| solved[iv * ns + is].0[ip];
    let cause = |iv: usize, is: usize, ip: usize| evaluator.cause(grid.p[ip], grid.v[iv], grid.s[is], grid.gamma);
    let mut stats = SolveStats::default();
    for (_, st) in &solved {
        stats.merge(st);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for iv in 0..grid.v.len() {
        for is in 0..ns {
            for ip in 0..np {
                let g = gittins(iv, is, ip);
                let c = cause(iv, is, ip)?;
                rows.push(CertificationRow {
                    v: grid.v[iv],
                    s: grid.s[is],
                    p: grid.p[ip],
                    gittins: g,
                    cause: c,
                    s_margin: (is > 0).then(|| gittins(iv, is - 1, ip) - g),
                    v_margin: (iv > 0).then(|| g - gittins(iv - 1, is, ip)),
                    p_margin: (ip > 0).then(|| g - gittins(iv, is, ip - 1)),
                    cause_s_margin: if is > 0 { Some(cause(iv, is - 1, ip)? - c) } else { None },
                    cause_p_margin: if ip > 0 { Some(c - cause(iv, is, ip - 1)?) } else { None },
                });
            }
        }
    }
    Ok(CertificationReport {
        grid: grid.clone(),
        rows,
        stats,
    })
}
