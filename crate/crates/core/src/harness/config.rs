use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::flow::IntegratorConfig;
use crate::lcn::Architecture;
use crate::losses::LossSpec;

/// One experiment, read from a single JSON file.
///
/// ```json
/// {
///   "architecture": {"d0": 8, "k": [3, 2], "s": [1, 1]},
///   "loss": {"kind": "square"},
///   "data": {"source": "synthetic", "seed": 7, "m": 12, "distribution": "normal", "teacher": true},
///   "init": {"seed": 1, "mode": "uniform"},
///   "integrator": {"rel_tol": 1e-9},
///   "output_dir": "runs/example"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub architecture: Architecture,
    pub loss: LossSpec,
    pub data: DataSource,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Row-major matrices: `x` is `d0 x m`, `y` is `d_N x m`.
    Inline { x: Vec<Vec<f64>>, y: Vec<Vec<f64>> },
    /// Headerless CSV files, one matrix row per line. Relative paths are
    /// resolved against the config file's directory.
    Csv { x_path: PathBuf, y_path: PathBuf },
    Synthetic {
        seed: u64,
        m: usize,
        #[serde(default)]
        distribution: Distribution,
        /// Labels `Y = W* X` from a random planted network instead of noise.
        #[serde(default)]
        teacher: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    #[default]
    Normal,
    /// Uniform on `[-1, 1]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: InitMode,
    /// Required for `explicit`, ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<Vec<Vec<f64>>>,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { seed: 0, mode: InitMode::Uniform, filters: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Entries uniform on `[-1, 1] / sqrt(k_i)`.
    #[default]
    Uniform,
    /// Uniform draw, then every filter rescaled to the mean filter norm so
    /// all `delta_ij(0) = 0`. This changes the represented function.
    Balanced,
    Explicit,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub init_seed: Option<u64>,
    pub data_seed: Option<u64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub grad_tol: Option<f64>,
    pub max_t: Option<f64>,
    pub max_steps: Option<u64>,
    pub sample_every: Option<u64>,
    pub min_step: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file; relative CSV paths become relative to its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config = Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let DataSource::Csv { x_path, y_path } = &mut config.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [x_path, y_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.output_dir {
            self.output_dir = Some(dir.clone());
        }
        if let Some(seed) = o.init_seed {
            self.init.seed = seed;
        }
        if let (Some(seed), DataSource::Synthetic { seed: s, .. }) = (o.data_seed, &mut self.data) {
            *s = seed;
        }
        let ic = &mut self.integrator;
        if let Some(v) = o.rel_tol {
            ic.rel_tol = v;
        }
        if let Some(v) = o.abs_tol {
            ic.abs_tol = v;
        }
        if let Some(v) = o.grad_tol {
            ic.grad_tol = Some(v);
        }
        if let Some(v) = o.max_t {
            ic.max_t = v;
        }
        if let Some(v) = o.max_steps {
            ic.max_steps = v;
        }
        if let Some(v) = o.sample_every {
            ic.sample_every = v;
        }
        if let Some(v) = o.min_step {
            ic.min_step = v;
        }
    }

    /// Output directory: an absolute `output_dir` as is, a relative one under
    /// `root`, otherwise `root/<name>`.
    pub fn resolve_output_dir(&self, root: &Path, name: &str) -> PathBuf {
        match &self.output_dir {
            Some(dir) if dir.is_absolute() => dir.clone(),
            Some(dir) => root.join(dir),
            None => root.join(name),
        }
    }
}
