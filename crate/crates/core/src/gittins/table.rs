//! Gittins bonus tabulated along the variance grid.

use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::solver::{GittinsConfig, RetirementProblem, SolveStats, SolverGrid};
use crate::error::{invalid, Result};
use crate::output::fmt_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusTable {
    pub p_grid: Vec<f64>,
    pub bonus: Vec<f64>,
    pub v: f64,
    pub s: f64,
    pub gamma: f64,
    pub stats: SolveStats,
}

impl BonusTable {
    /// Bonus at every variance node of `problem`'s grid.
    pub fn from_problem(problem: &RetirementProblem) -> Result<Self> {
        let estimates = problem
            .grid
            .p
            .par_iter()
            .map(|&p| problem.bonus(p))
            .collect::<Result<Vec<_>>>()?;
        let mut stats = SolveStats::default();
        for e in &estimates {
            stats.merge(&e.stats);
        }
        if stats.cap_hits > 0 {
            warn!(
                "value iteration hit the {}-sweep cap {} times (v={}, s={}, γ={})",
                problem.cfg.vi_max_iters, stats.cap_hits, problem.v, problem.s, problem.gamma
            );
        }
        Ok(Self {
            p_grid: problem.grid.p.clone(),
            bonus: estimates.iter().map(|e| e.salary).collect(),
            v: problem.v,
            s: problem.s,
            gamma: problem.gamma,
            stats,
        })
    }

    /// Linear in `P` between nodes; clamped outside the grid with a warning.
    pub fn bonus_at(&self, p: f64) -> f64 {
        let (first, last) = (self.p_grid[0], self.p_grid[self.p_grid.len() - 1]);
        if p <= first {
            if p < first {
                warn!("P={p} below table range [{first}, {last}] (v={}, s={}); clamped", self.v, self.s);
            }
            return self.bonus[0];
        }
        if p >= last {
            if p > last {
                warn!("P={p} above table range [{first}, {last}] (v={}, s={}); clamped", self.v, self.s);
            }
            return self.bonus[self.bonus.len() - 1];
        }
        let k = self.p_grid.partition_point(|&g| g <= p) - 1;
        let w = (p - self.p_grid[k]) / (self.p_grid[k + 1] - self.p_grid[k]);
        (1.0 - w) * self.bonus[k] + w * self.bonus[k + 1]
    }

    /// Largest drop of the bonus between consecutive variance nodes.
    pub fn max_decrease(&self) -> f64 {
        self.bonus.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["p", "bonus", "v", "s", "gamma"])?;
        for (p, b) in self.p_grid.iter().zip(&self.bonus) {
            w.write_record([fmt_f64(*p), fmt_f64(*b), fmt_f64(self.v), fmt_f64(self.s), fmt_f64(self.gamma)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Table on the standard grid sized for this arm alone.
pub fn build_bonus_table(v: f64, s: f64, gamma: f64, cfg: &GittinsConfig) -> Result<BonusTable> {
    BonusTable::from_problem(&RetirementProblem::standard(v, s, gamma, *cfg)?)
}

/// Table whose variance grid covers the largest noise levels `(v_max, s_max)`
/// of a set of arms, so every arm's table spans the same posterior range.
pub fn build_shared_range_table(
    v: f64,
    s: f64,
    v_max: f64,
    s_max: f64,
    gamma: f64,
    cfg: &GittinsConfig,
) -> Result<BonusTable> {
    if !(s <= s_max) {
        return Err(invalid(format!("s={s} exceeds s_max={s_max}")));
    }
    let grid = SolverGrid::standard(v, v_max, s_max, gamma, cfg)?;
    BonusTable::from_problem(&RetirementProblem::new(v, s, gamma, *cfg, grid)?)
}
