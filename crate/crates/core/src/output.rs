//! CSV and JSON emission shared by the experiment drivers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::Command;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.16e}")
}

/// SHA-256 of the value's JSON encoding, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `git describe` of the source tree, or the package version outside a checkout.
pub fn code_version() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

pub const PAIRING_NOTE: &str = "paired: in run i every policy faces the same pre-drawn initial states, \
innovations and observation noise; policy randomness is keyed by (run, step, arm)";

/// Sidecar written next to every CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata<C: Serialize, E: Serialize> {
    pub command: String,
    pub config: C,
    pub base_seed: u64,
    pub config_hash: String,
    pub wall_time_seconds: f64,
    pub code_version: String,
    pub pairing: &'static str,
    pub details: E,
}

impl<C: Serialize, E: Serialize> Metadata<C, E> {
    pub fn new(command: &str, config: C, base_seed: u64, wall_time_seconds: f64, details: E) -> Result<Self> {
        let config_hash = config_hash(&(command, &config))?;
        Ok(Self {
            command: command.to_string(),
            config,
            base_seed,
            config_hash,
            wall_time_seconds,
            code_version: code_version(),
            pairing: PAIRING_NOTE,
            details,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
