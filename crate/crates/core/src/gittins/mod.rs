//! Numerical Gittins index of the rested Gaussian arm.

pub mod certify;
pub mod quadrature;
pub mod solver;
pub mod sweep;
pub mod table;

pub use quadrature::{gauss_hermite_expectation, GaussHermiteRule};
pub use solver::{
    default_p_max, gittins_bonus, value_iteration, BonusEstimate, GittinsConfig, RetirementProblem, SolveStats,
    SolverGrid, ValueGrid,
};
pub use sweep::{bonus_sweep, SweepAxis, SweepPoint, SweepSpec, SweepTable};
pub use table::{build_bonus_table, build_shared_range_table, BonusTable};
pub use certify::{certify, BonusEvaluator, CertificationGrid, CertificationReport, CertificationRow, SolverEvaluator};
