//! Frozen calibration constants for the inequality regression suite.
//!
//! The analysis constants (C_d, C_{d,s}) are non-explicit; they are estimated
//! once as max empirical ratios over a seeded random-configuration suite,
//! inflated by a small margin, and frozen into a JSON file that the bound
//! checks and the acceptance suite read back.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationConstants {
    /// Suite name the constants were calibrated on.
    pub suite: String,
    /// Master seed of the configuration suite.
    pub seed: u64,
    /// Number of sampled configurations.
    pub samples: usize,
    /// Multiplicative safety margin applied to the max empirical ratios.
    pub margin: f64,
    /// Smeared lower bound (monotonicity of the truncated energy).
    pub c_melb: f64,
    /// Truncated-field energy control by F_N.
    pub c_mect_hlb: f64,
    /// Self-interaction control by F_N.
    pub c_mect_si: f64,
    /// Dual Sobolev (W^{1,inf})* control of the charge defect.
    pub c_mesob: f64,
    /// Renormalized commutator bound.
    pub c_com: f64,
    /// Gronwall envelope constant of the modulated-energy estimate.
    pub c_gronwall: f64,
    /// L^inf bound on grad g * f for unit L^{2d} data.
    pub c_gnab: f64,
}

impl CalibrationConstants {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidParameter(format!("bad calibration file: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidParameter(format!("calibration encode: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Repository-relative location of the frozen constants.
pub const CONSTANTS_FILE: &str = "calibration/constants.json";

/// Locate the frozen constants from a crate inside the workspace.
pub fn workspace_constants_path() -> std::path::PathBuf {
    let manifest = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    manifest.parent().and_then(|p| p.parent()).map(|ws| ws.join(CONSTANTS_FILE)).unwrap_or_else(
        || std::path::PathBuf::from(CONSTANTS_FILE),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = CalibrationConstants {
            suite: "default".into(),
            seed: 1,
            samples: 10,
            margin: 1.05,
            c_melb: 1.0,
            c_mect_hlb: 2.0,
            c_mect_si: 3.0,
            c_mesob: 4.0,
            c_com: 5.0,
            c_gronwall: 6.0,
            c_gnab: 7.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        c.save(&path).unwrap();
        let back = CalibrationConstants::load(&path).unwrap();
        assert_eq!(back.samples, 10);
        assert_eq!(back.c_com, 5.0);
    }

    #[test]
    fn frozen_constants_exist_in_repo() {
        let path = workspace_constants_path();
        assert!(path.exists(), "expected frozen constants at {path:?}; run `mflab calibrate`");
        let c = CalibrationConstants::load(&path).unwrap();
        assert!(c.c_com > 0.0 && c.c_gronwall > 0.0);
    }
}
