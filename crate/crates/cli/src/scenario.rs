//! Scenario files: a model, a market and run controls, in TOML or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use ltsens::estimate::McConfig;
use ltsens::models::validate_model;
use ltsens::{Family, MarketParams, ModelSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub k: f64,
    pub sigma: f64,
    /// Stock drift, Black–Scholes only.
    #[serde(default)]
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    #[serde(default)]
    pub r: f64,
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default = "one")]
    pub xi: f64,
    pub nu: f64,
    #[serde(default)]
    pub rho_bar: f64,
    #[serde(default)]
    pub rho_sq: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Horizons; each command has its own default.
    pub horizons: Option<Vec<f64>>,
    pub n_paths: usize,
    /// Time steps per unit of horizon.
    pub steps_per_unit_time: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Default for RunSection {
    fn default() -> Self {
        let mc = McConfig::default();
        Self {
            horizons: None,
            n_paths: mc.n_paths,
            steps_per_unit_time: mc.steps_per_unit_time,
            seed: mc.seed,
            out: None,
            format: None,
        }
    }
}

/// Grids for `compare`. The remaining parameters come from the scenario's
/// model (`b`, `k`, `sigma`) and market (`nu`, `rho_bar`, `rho_sq`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub nu_grid: Vec<f64>,
    pub k_grid: Vec<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            nu_grid: grid(-5.0, -0.1, 50),
            k_grid: grid(0.5, 5.0, 46),
        }
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelSection,
    pub market: MarketSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub compare: CompareSection,
}

impl Scenario {
    /// Reads a scenario; `.json` files are JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn spec(&self) -> ModelSpec {
        let m = &self.model;
        ModelSpec {
            family: m.family,
            b: m.b,
            k: m.k,
            sigma: m.sigma,
            mu: m.mu,
        }
    }

    pub fn market(&self) -> MarketParams {
        let m = &self.market;
        MarketParams {
            r: m.r,
            omega: m.omega,
            xi: m.xi,
            nu: m.nu,
            rho_bar: m.rho_bar,
            rho_sq: m.rho_sq,
        }
    }

    /// Model and market after domain validation.
    pub fn validated(&self) -> Result<(ModelSpec, MarketParams), CliError> {
        Ok(validate_model(&self.spec(), &self.market())?)
    }

    pub fn mc_config(&self) -> Result<McConfig, CliError> {
        let r = &self.run;
        if r.n_paths < 2 {
            return Err(CliError::Input("run.n_paths must be at least 2".into()));
        }
        if !(r.steps_per_unit_time > 0.0) || !r.steps_per_unit_time.is_finite() {
            return Err(CliError::Input("run.steps_per_unit_time must be positive".into()));
        }
        Ok(McConfig {
            n_paths: r.n_paths,
            steps_per_unit_time: r.steps_per_unit_time,
            seed: r.seed,
            ..McConfig::default()
        })
    }

    pub fn horizons_or(&self, default: &[f64]) -> Result<Vec<f64>, CliError> {
        let t = self.run.horizons.clone().unwrap_or_else(|| default.to_vec());
        if t.is_empty() {
            return Err(CliError::Input("run.horizons is empty".into()));
        }
        if let Some(bad) = t.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(CliError::Input(format!("horizon {bad} is not positive and finite")));
        }
        Ok(t)
    }
}
