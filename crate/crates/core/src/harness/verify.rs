use std::fs;
use std::path::Path;

use serde::Serialize;

use super::run::{trajectory_header, CertificateFile, RunSummary};
use super::{exit, HarnessError, CERTIFICATE_FILE, SUMMARY_FILE, TRAJECTORY_FILE};
use crate::flow::{verify_trajectory, BalancednessLedger, Sample, VerificationReport};

/// Verification of a run directory, recomputed from its files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirReport {
    pub dir: String,
    pub status: String,
    pub samples: usize,
    pub report: VerificationReport,
}

impl DirReport {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            exit::CONVERGED
        } else {
            exit::VERIFICATION
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{}: {} ({} samples, run status {})\n{}",
            self.dir,
            if self.passed() { "PASS" } else { "FAIL" },
            self.samples,
            self.status,
            self.report.render()
        )
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn malformed(path: &Path, msg: impl ToString) -> HarnessError {
    HarnessError::Malformed { path: path.display().to_string(), msg: msg.to_string() }
}

/// Reads `trajectory.csv` for a network of the given depth.
pub fn read_trajectory(path: &Path, depth: usize) -> Result<Vec<Sample>, HarnessError> {
    let text = read(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(|e| malformed(path, e))?.iter().map(String::from).collect();
    if header != trajectory_header(depth) {
        return Err(malformed(path, format!("unexpected columns {}", header.join(","))));
    }
    let pairs = depth * (depth - 1) / 2;
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(path, e))?;
        let v = record
            .iter()
            .map(str::parse::<f64>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| malformed(path, format!("row {}: {e}", row + 1)))?;
        samples.push(Sample {
            t: v[0],
            loss: v[1],
            grad_norm: v[2],
            deltas: v[3..3 + pairs].to_vec(),
            layer_norms_sq: v[3 + pairs..3 + pairs + depth].to_vec(),
            final_filter_l1: v[3 + pairs + depth],
        });
    }
    if samples.is_empty() {
        return Err(malformed(path, "no samples"));
    }
    Ok(samples)
}

/// Re-runs the trajectory checks on the artifacts in `dir`.
///
/// The conserved quantities are taken from the first row, the certificate
/// from `certificate.json` and the tolerances from `summary.json`.
pub fn verify_dir(dir: &Path) -> Result<DirReport, HarnessError> {
    let summary_path = dir.join(SUMMARY_FILE);
    let summary: RunSummary = serde_json::from_str(&read(&summary_path)?).map_err(|e| malformed(&summary_path, e))?;
    let cert_path = dir.join(CERTIFICATE_FILE);
    let cert: CertificateFile = serde_json::from_str(&read(&cert_path)?).map_err(|e| malformed(&cert_path, e))?;
    let samples = read_trajectory(&dir.join(TRAJECTORY_FILE), summary.architecture.depth())?;

    let ledger = BalancednessLedger::new(&samples[0].layer_norms_sq);
    let report = verify_trajectory(&samples, &ledger, cert.certificate.as_ref(), &summary.integrator);
    Ok(DirReport {
        dir: dir.display().to_string(),
        status: summary.status.as_str().into(),
        samples: samples.len(),
        report,
    })
}
