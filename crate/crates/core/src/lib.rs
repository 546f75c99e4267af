pub mod cause;
pub mod cli;
pub mod error;
pub mod gittins;
pub mod model;
pub mod noise_inference;
pub mod output;
pub mod policies;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
