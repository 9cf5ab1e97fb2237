//! Scenario configuration: a single strict JSON document (unknown keys are
//! rejected so scaling mistakes cannot pass silently).

use anyhow::{bail, Context, Result};
use mflab_core::nbody::{InitMode, InitialDataSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Spatial dimension; the dynamics are 2D.
    pub d: usize,
    /// Particle counts (one entry for `run`, a list for `sweep`).
    pub n: Vec<usize>,
    /// Supercritical exponents theta with eps^2 N = N^theta.
    pub theta: Vec<f64>,
    /// Time horizon.
    pub horizon: f64,
    /// Time step.
    pub dt: f64,
    /// Spectral grid size per dimension.
    pub grid_m: usize,
    /// Particle initial data.
    pub initial_data: InitialDataConfig,
    /// Initial vorticity preset.
    pub vorticity: VorticityConfig,
    /// Velocity amplitude multiplier applied to the preset (default 1).
    #[serde(default = "default_amplitude")]
    pub velocity_amplitude: f64,
    /// Sampling stride in steps.
    pub sample_stride: usize,
    /// Truncation cap; omitted means the balanced choice N^{-1/d} / 8.
    #[serde(default)]
    pub epsilon_cap: Option<f64>,
    /// Seeds for repeated runs per (N, theta) cell (default: the initial-data
    /// seed only).
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDataConfig {
    pub mode: InitMode,
    pub velocity_noise: f64,
    pub rng_seed: u64,
}

impl InitialDataConfig {
    pub fn to_spec(self, seed_override: Option<u64>) -> InitialDataSpec {
        InitialDataSpec {
            mode: self.mode,
            velocity_noise: self.velocity_noise,
            rng_seed: seed_override.unwrap_or(self.rng_seed),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum VorticityConfig {
    TaylorGreen,
    Shear,
    RandomBandlimited { seed: u64, max_mode: i64 },
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ScenarioConfig =
            serde_json::from_str(&text).with_context(|| "parsing scenario config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 2 {
            bail!("dynamics are two-dimensional (d = 2), got d = {}", self.d);
        }
        if self.n.is_empty() || self.theta.is_empty() {
            bail!("need at least one N and one theta");
        }
        if self.n.iter().any(|&n| n < 2) {
            bail!("every N must be at least 2");
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            bail!("horizon and dt must be positive");
        }
        if self.sample_stride == 0 {
            bail!("sample stride must be positive");
        }
        if self.grid_m < 8 || !self.grid_m.is_power_of_two() {
            bail!("grid_m must be a power of two >= 8");
        }
        if let Some(cap) = self.epsilon_cap {
            if !(cap > 0.0 && cap < 0.125) {
                bail!("epsilon_cap must lie in (0, 1/8)");
            }
        }
        if self.velocity_amplitude <= 0.0 || !self.velocity_amplitude.is_finite() {
            bail!("velocity amplitude must be positive and finite");
        }
        let lower = 1.0 - 2.0 / self.d as f64;
        for &theta in &self.theta {
            if !(0.0 < theta && theta < 1.0) {
                bail!("theta must lie in (0, 1), got {theta}");
            }
            if theta <= lower {
                eprintln!(
                    "warning: theta = {theta} is at or below the supercritical threshold \
                     1 - 2/d = {lower}; convergence is not expected there"
                );
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.initial_data.rng_seed])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "d": 2,
            "n": [64],
            "theta": [0.5],
            "horizon": 0.05,
            "dt": 1e-3,
            "grid_m": 32,
            "initial_data": {"mode": "iid_uniform", "velocity_noise": 0.0, "rng_seed": 1},
            "vorticity": {"preset": "taylor_green"},
            "sample_stride": 10
        })
    }

    #[test]
    fn parses_minimal_config() {
        let config: ScenarioConfig = serde_json::from_value(minimal_json()).unwrap();
        config.validate().unwrap();
        assert_eq!(config.velocity_amplitude, 1.0);
        assert!(config.epsilon_cap.is_none());
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut v = minimal_json();
        v["coupling"] = serde_json::json!(1.0);
        assert!(serde_json::from_value::<ScenarioConfig>(v).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut v = minimal_json();
        v["theta"] = serde_json::json!([1.5]);
        let config: ScenarioConfig = serde_json::from_value(v).unwrap();
        assert!(config.validate().is_err());
        let mut v = minimal_json();
        v["grid_m"] = serde_json::json!(48);
        let config: ScenarioConfig = serde_json::from_value(v).unwrap();
        assert!(config.validate().is_err());
    }
}
