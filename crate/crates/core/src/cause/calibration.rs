//! Closed-form `S` against the exact backward recursion.
//!
//! The closed form stacks several approximations and comes with no error
//! bound, so its relative error is measured once over a fixed grid and frozen
//! in `data/cause_calibration.csv`. The invariant tolerance is 1.25 times the
//! worst frozen error.

use serde::{Deserialize, Serialize};

use super::{backward_precision, recursion_oracle, recursion_oracle_converged, PROBIT_PHI};
use crate::error::Result;

pub const CALIBRATION_GAMMAS: [f64; 4] = [0.8, 0.9, 0.95, 0.98];
pub const CALIBRATION_NOISE: [f64; 6] = [0.0, 0.1, 1.0, 10.0, 100.0, 1000.0];
pub const TOLERANCE_FACTOR: f64 = 1.25;
/// Horizon used for the rested (`v = 0`) comparison.
pub const RESTED_HORIZON: usize = 10_000;

pub const FROZEN_TABLE: &str = include_str!("../../data/cause_calibration.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub gamma: f64,
    pub v: f64,
    pub s: f64,
    pub closed_form: f64,
    pub oracle: f64,
    pub rel_error: f64,
}

pub fn measure(v: f64, s: f64, gamma: f64) -> Result<CalibrationPoint> {
    let closed_form = backward_precision(v, s, gamma, PROBIT_PHI)?.s_inf;
    let oracle = if v == 0.0 {
        recursion_oracle(v, s, gamma, PROBIT_PHI, RESTED_HORIZON)?
    } else {
        recursion_oracle_converged(v, s, gamma, PROBIT_PHI, 1e-12)?.0
    };
    Ok(CalibrationPoint {
        gamma,
        v,
        s,
        closed_form,
        oracle,
        rel_error: (closed_form - oracle).abs() / oracle,
    })
}

pub fn measure_grid() -> Result<Vec<CalibrationPoint>> {
    let mut out = Vec::new();
    for &gamma in &CALIBRATION_GAMMAS {
        for &v in &CALIBRATION_NOISE {
            for &s in &CALIBRATION_NOISE {
                out.push(measure(v, s, gamma)?);
            }
        }
    }
    Ok(out)
}

pub fn frozen_points() -> Result<Vec<CalibrationPoint>> {
    let mut rdr = csv::Reader::from_reader(FROZEN_TABLE.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn worst_error(points: &[CalibrationPoint]) -> f64 {
    points.iter().map(|p| p.rel_error).fold(0.0, f64::max)
}

/// Tolerance pinned from the frozen table.
pub fn tolerance() -> Result<f64> {
    Ok(TOLERANCE_FACTOR * worst_error(&frozen_points()?))
}

/// Tolerance for the rested slice of the grid.
pub fn rested_tolerance() -> Result<f64> {
    let rested: Vec<_> = frozen_points()?.into_iter().filter(|p| p.v == 0.0).collect();
    Ok(TOLERANCE_FACTOR * worst_error(&rested))
}

pub fn write_table<W: std::io::Write>(points: &[CalibrationPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "v", "s", "closed_form", "oracle", "rel_error"])?;
    for p in points {
        w.write_record([
            crate::output::fmt_f64(p.gamma),
            crate::output::fmt_f64(p.v),
            crate::output::fmt_f64(p.s),
            crate::output::fmt_f64(p.closed_form),
            crate::output::fmt_f64(p.oracle),
            crate::output::fmt_f64(p.rel_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_table_covers_grid() {
        let frozen = frozen_points().unwrap();
        assert_eq!(frozen.len(), CALIBRATION_GAMMAS.len() * CALIBRATION_NOISE.len().pow(2));
    }

    #[test]
    fn measured_errors_within_frozen_tolerance() {
        if std::env::var_os("CAUSE_BANDITS_REGENERATE").is_some() {
            let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/cause_calibration.csv");
            let file = std::fs::File::create(path).unwrap();
            write_table(&measure_grid().unwrap(), file).unwrap();
        }
        let tol = tolerance().unwrap();
        let frozen = frozen_points().unwrap();
        for (now, then) in measure_grid().unwrap().iter().zip(&frozen) {
            assert_eq!((now.gamma, now.v, now.s), (then.gamma, then.v, then.s));
            assert!(now.rel_error <= tol, "{now:?} exceeds {tol}");
            assert!(
                now.rel_error <= TOLERANCE_FACTOR * then.rel_error + 1e-12,
                "{now:?} drifted from {then:?}"
            );
        }
    }
}
