use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use stationary_lab::martingale::Functional;
use stationary_lab::models::ModelSpec;
use stationary_lab::stats::BoundednessFlag;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// How the approximation error is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    Exact,
    Mc,
    #[default]
    Both,
}

/// One experiment of a `report-data` bundle.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRef {
    pub name: String,
    pub command: String,
    /// Relative to the bundle config.
    pub config: PathBuf,
}

/// Expected condition verdicts, keyed by condition name (`GL`, `H`, `MW`, `LemmaLHS`).
pub type ExpectedVerdicts = BTreeMap<String, String>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Truncation `N` of the martingale increment.
    #[serde(default)]
    pub truncation: Option<usize>,
    /// `N` values for the remote-covariance and tail-supremum statistics.
    #[serde(default)]
    pub truncation_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub pasts: Option<usize>,
    /// Exponent of the lemma series in `check`.
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub functionals: Option<Vec<Functional>>,
    #[serde(default)]
    pub method: Option<MethodChoice>,
    #[serde(default)]
    pub min_pass_fraction: Option<f64>,
    #[serde(default)]
    pub decay_ratio: Option<f64>,
    #[serde(default)]
    pub expect_verdicts: Option<ExpectedVerdicts>,
    #[serde(default)]
    pub expect_flag: Option<BoundednessFlag>,
    #[serde(default)]
    pub experiments: Option<Vec<ExperimentRef>>,
}

/// A parsed config with the bytes its hash is taken over.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
    pub path: PathBuf,
}

pub fn parse(bytes: &[u8]) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner()))
    })?;
    if cfg.schema != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "at `schema`: unsupported version {} (expected {SCHEMA_VERSION})",
            cfg.schema
        )));
    }
    if let Some(a) = cfg.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::Config("at `alpha`: must lie in (0, 1)".into()));
        }
    }
    if let Some(f) = cfg.min_pass_fraction {
        if !(0.0..=1.0).contains(&f) {
            return Err(CliError::Config("at `min_pass_fraction`: must lie in [0, 1]".into()));
        }
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(LoadedConfig {
        config: parse(&bytes)?,
        sha256: crate::output::sha256_hex(&bytes),
        path: path.to_path_buf(),
    })
}

impl ExperimentConfig {
    pub fn model_spec(&self) -> Result<&ModelSpec, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Config("at `model`: required for this command".into()))
    }

    pub fn require_n(&self) -> Result<usize, CliError> {
        match self.n {
            Some(n) if n >= 1 => Ok(n),
            Some(_) => Err(CliError::Config("at `n`: must be ≥ 1".into())),
            None => Err(CliError::Config("at `n`: required for this command".into())),
        }
    }

    pub fn grid(&self, default: &[usize]) -> Result<Vec<usize>, CliError> {
        let g = self.n_grid.clone().unwrap_or_else(|| default.to_vec());
        if g.is_empty() || g.contains(&0) {
            return Err(CliError::Config("at `n_grid`: horizons must be ≥ 1 and the grid non-empty".into()));
        }
        Ok(g)
    }

    pub fn replicates_or(&self, default: usize) -> usize {
        self.replicates.unwrap_or(default)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.01)
    }
}
