//! Experiment configuration: a TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::TrainConfig;
use crate::init::InitCovariance;
use crate::kernels::KernelSpec;
use crate::likelihoods::LikelihoodFamily;
use crate::quadrature::{Integrator, McRule, DEFAULT_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    SurvivalSynthetic,
    AdditivePoisson,
    BetaSynthetic,
    MotorcycleStandin,
    /// Corrupts `base` (or the stand-in when no base is given).
    CorruptMotorcycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file with a header row. Exclusive with `generator`.
    pub path: Option<PathBuf>,
    pub generator: Option<Generator>,
    /// Row count for generators (defaults: survival 1000, Poisson 350, Beta 500).
    pub n: Option<usize>,
    pub censor_frac: f64,
    /// Base CSV for `corrupt_motorcycle`.
    pub base: Option<PathBuf>,
    /// Standardize targets before corruption.
    pub standardize_y: bool,
    /// Standardize every input column to mean 0, variance 1.
    pub standardize_inputs: bool,
    /// Input column names; by default every column other than y and delta.
    pub x_columns: Option<Vec<String>>,
    pub y_column: String,
    pub delta_column: String,
    /// Generator seed; defaults to the experiment seed.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            generator: None,
            n: None,
            censor_frac: 0.2,
            base: None,
            standardize_y: true,
            standardize_inputs: true,
            x_columns: None,
            y_column: "y".into(),
            delta_column: "delta".into(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Inducing point count (clipped to the training size).
    pub m: usize,
    pub quadrature_order: usize,
    /// Monte Carlo sample count; when set it replaces quadrature.
    pub mc_samples: Option<usize>,
    /// Freeze g to a learnable constant (homoscedastic / shape-homogeneous baseline).
    pub constant_g: bool,
    pub kernel_f: Option<KernelSpec>,
    pub kernel_g: Option<KernelSpec>,
    /// Starting q(u) covariance: `identity` or `prior`.
    pub init_covariance: InitCovariance,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            m: 100,
            quadrature_order: DEFAULT_ORDER,
            mc_samples: None,
            constant_g: false,
            kernel_f: None,
            kernel_g: None,
            init_covariance: InitCovariance::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub restarts: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 5, restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Checkpoint read by `predict`; defaults to `<output_dir>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Points per axis of the plot grid for 1-D inputs.
    pub grid_points: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            grid_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadcheckConfig {
    pub orders: Vec<usize>,
    pub samples: Vec<usize>,
    pub reruns: usize,
    pub nu: f64,
}

impl Default for QuadcheckConfig {
    fn default() -> Self {
        Self {
            orders: vec![2, 3, 5, 10, 20, 50],
            samples: vec![10, 100, 1000, 10000],
            reruns: 1000,
            nu: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Leading rows of the dataset used for the check.
    pub n: usize,
    pub m: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            n: 10,
            m: 3,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Label for the model configuration in metric tables.
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub likelihood: LikelihoodFamily,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub predict: PredictConfig,
    #[serde(default)]
    pub quadcheck: QuadcheckConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Sets `path` (dot-separated) in `table` to `raw`, parsed as a TOML value
/// when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{path}`")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a section")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(spec: &str) -> Result<(String, String)> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl ExperimentConfig {
    /// Parses TOML text, applies overrides, resolves relative data paths
    /// against `base_dir` and validates.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut table, &k, &v)?;
        }
        let mut cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(dir) = base_dir {
            for p in [&mut cfg.data.path, &mut cfg.data.base, &mut cfg.predict.checkpoint]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, overrides, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.generator) {
            (Some(_), Some(_)) => return Err(Error::Config("data: give either `path` or `generator`, not both".into())),
            (None, None) => return Err(Error::Config("data: one of `path` or `generator` is required".into())),
            _ => {}
        }
        for p in [&self.data.path, &self.data.base].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        if self.model.m == 0 {
            return Err(Error::Config("model.m must be at least 1".into()));
        }
        if self.model.mc_samples == Some(0) {
            return Err(Error::Config("model.mc_samples must be at least 1".into()));
        }
        if self.cv.folds < 2 {
            return Err(Error::Config("cv.folds must be at least 2".into()));
        }
        if self.cv.restarts == 0 {
            return Err(Error::Config("cv.restarts must be at least 1".into()));
        }
        if let LikelihoodFamily::HetStudentT { nu, .. } = self.likelihood {
            if !(nu > 0.0) {
                return Err(Error::Config(format!("likelihood.nu must be positive, got {nu}")));
            }
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn integrator(&self) -> Result<Integrator> {
        match self.model.mc_samples {
            Some(s) => Ok(Integrator::monte_carlo(McRule::new(s, self.seed)?)),
            None => Integrator::gauss_hermite(self.model.quadrature_order).map_err(|e| Error::Config(e.to_string())),
        }
    }

    pub fn kernels(&self) -> Option<[KernelSpec; 2]> {
        match (&self.model.kernel_f, &self.model.kernel_g) {
            (Some(f), Some(g)) => Some([f.clone(), g.clone()]),
            _ => None,
        }
    }

    /// Label used in metric tables.
    pub fn label(&self) -> String {
        if !self.name.is_empty() {
            return self.name.clone();
        }
        use crate::likelihoods::Likelihood;
        let base = self.likelihood.name();
        if self.model.constant_g {
            format!("{base}_constant_g")
        } else {
            base.to_string()
        }
    }
}
