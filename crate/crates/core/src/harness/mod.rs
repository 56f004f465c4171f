//! Experiment plumbing behind the `lcnflow` binary: JSON configs, datasets
//! and initializations, run artifacts, the loss-figure table and artifact
//! verification.
//!
//! A run directory holds
//! - `trajectory.csv`: `t, loss, grad_norm, delta_i_j..., layer_norm_sq_i..., final_filter_l1`
//! - `summary.json`: status, final point, certificate values, verification report
//! - `certificate.json`: `T`, `tau` and the observed maxima
//! - `timings.json`: wall-clock only, kept apart so the other files are reproducible

pub mod config;
pub mod data;
pub mod figure;
pub mod run;
pub mod verify;

use std::path::Path;

use thiserror::Error;

pub use config::{DataSource, Distribution, ExperimentConfig, InitMode, InitSpec, Overrides};
pub use figure::{emit_loss_figure, loss_figure_rows, parse_specs};
pub use run::{run_batch, run_experiment, BatchRow, RunOutcome, RunStatus, RunSummary};
pub use verify::{verify_dir, DirReport};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LCN_FLOW_OUT";

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const BATCH_FILE: &str = "batch_summary.csv";

pub mod exit {
    pub const CONVERGED: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const BUDGET: i32 = 2;
    pub const VERIFICATION: i32 = 3;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error("malformed artifact {path}: {msg}")]
    Malformed { path: String, msg: String },
    #[error(transparent)]
    Loss(#[from] crate::losses::LossError),
    #[error(transparent)]
    Arch(#[from] crate::lcn::ArchError),
    #[error(transparent)]
    Flow(#[from] crate::flow::FlowError),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingArtifact(path.display().to_string())
        } else {
            HarnessError::Io(format!("{}: {e}", path.display()))
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, -0.0, 1.0 / 3.0, 2.0 - 2.0 * (-10f64).exp(), 1e-300, f64::MAX, 5e-324] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(2.0), "2.0000000000000000e0");
    }
}
