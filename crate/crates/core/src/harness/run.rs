use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::{initial_filters, load_dataset};
use super::{exit, fmt_f64, HarnessError, BATCH_FILE, CERTIFICATE_FILE, SUMMARY_FILE, TIMINGS_FILE, TRAJECTORY_FILE};
use crate::flow::{
    classify_limit, integrate, pair_labels, verify_trajectory, BoundednessCertificate, FlowError, LimitClass, Sample,
    Termination, Trajectory, VerificationReport,
};
use crate::lcn::{final_filter, Architecture};
use crate::losses::LossSpec;

pub const UNAVAILABLE_RANK: &str = "unavailable (rank-deficient X)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxTime,
    MaxSteps,
    /// The trajectory left the certified region, or blew up without one.
    UncertifiedDivergence,
    Error,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxTime => "max_time",
            RunStatus::MaxSteps => "max_steps",
            RunStatus::UncertifiedDivergence => "uncertified_divergence",
            RunStatus::Error => "error",
        }
    }
}

/// `T` and `tau` in the summary, or why they are missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CertificateSummary {
    Available { t_bound: f64, tau: f64 },
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<BoundednessCertificate>,
    pub initial_loss: f64,
    pub observed_max_final_filter_l1: f64,
    pub observed_max_layer_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// `global_min_certificate`, `no_certificate`, `not_critical` or `skipped`.
    pub class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Shared roots as `[re, im]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witnesses: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub architecture: Architecture,
    pub loss: LossSpec,
    pub integrator: crate::flow::IntegratorConfig,
    pub initial_loss: Option<f64>,
    pub grad_tol: Option<f64>,
    pub final_t: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_grad_norm: Option<f64>,
    pub accepted_steps: Option<u64>,
    pub rejected_steps: Option<u64>,
    pub final_w: Option<Vec<Vec<f64>>>,
    pub final_filter: Option<Vec<f64>>,
    pub certificate: CertificateSummary,
    pub verification: Option<VerificationReport>,
    pub classification: Option<Classification>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub dir: PathBuf,
    pub trajectory: Option<Trajectory>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.summary.exit_code
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn trajectory_header(depth: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "loss", "grad_norm"].iter().map(|s| s.to_string()).collect();
    h.extend(pair_labels(depth).into_iter().map(|(i, j)| format!("delta_{i}_{j}")));
    h.extend((1..=depth).map(|i| format!("layer_norm_sq_{i}")));
    h.push("final_filter_l1".into());
    h
}

pub fn write_trajectory(path: &Path, depth: usize, samples: &[Sample]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(depth))?;
    for s in samples {
        let mut row = vec![fmt_f64(s.t), fmt_f64(s.loss), fmt_f64(s.grad_norm)];
        row.extend(s.deltas.iter().chain(&s.layer_norms_sq).map(|v| fmt_f64(*v)));
        row.push(fmt_f64(s.final_filter_l1));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn classification(class: Result<LimitClass, FlowError>) -> Classification {
    match class {
        Ok(LimitClass::GlobalMinCertificate) => {
            Classification { class: "global_min_certificate".into(), reason: None, witnesses: Vec::new() }
        }
        Ok(LimitClass::NoCertificate { reason, witnesses }) => Classification {
            class: "no_certificate".into(),
            reason: Some(reason),
            witnesses: witnesses.iter().map(|z| [z.re, z.im]).collect(),
        },
        Err(e @ FlowError::NotCritical { .. }) => {
            Classification { class: "not_critical".into(), reason: Some(e.to_string()), witnesses: Vec::new() }
        }
        Err(e) => Classification { class: "error".into(), reason: Some(e.to_string()), witnesses: Vec::new() },
    }
}

fn status_of(termination: Termination) -> RunStatus {
    match termination {
        Termination::Converged => RunStatus::Converged,
        Termination::MaxTime => RunStatus::MaxTime,
        Termination::MaxSteps => RunStatus::MaxSteps,
        Termination::CertificateViolation => RunStatus::UncertifiedDivergence,
        Termination::StepSizeUnderflow => RunStatus::Error,
    }
}

/// Exit code by severity: error, then verification failure, then budget.
fn exit_code_of(status: RunStatus, verified: bool) -> i32 {
    match status {
        RunStatus::Error => exit::ERROR,
        _ if !verified => exit::VERIFICATION,
        RunStatus::UncertifiedDivergence => exit::VERIFICATION,
        RunStatus::MaxTime | RunStatus::MaxSteps => exit::BUDGET,
        RunStatus::Converged => exit::CONVERGED,
    }
}

/// Runs one experiment and writes its artifacts into `dir`.
///
/// Config and I/O problems are returned as errors. A flow that fails
/// numerically still produces a `summary.json` with status `error` or
/// `uncertified_divergence`.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path) -> Result<RunOutcome, HarnessError> {
    let started = Instant::now();
    config.integrator.validate()?;
    let arch = &config.architecture;
    let data = load_dataset(config)?;
    let w0 = initial_filters(arch, &config.init)?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;

    let mut summary = RunSummary {
        status: RunStatus::Error,
        exit_code: exit::ERROR,
        termination: None,
        message: None,
        architecture: arch.clone(),
        loss: config.loss,
        integrator: config.integrator.clone(),
        initial_loss: None,
        grad_tol: None,
        final_t: None,
        final_loss: None,
        final_grad_norm: None,
        accepted_steps: None,
        rejected_steps: None,
        final_w: None,
        final_filter: None,
        certificate: CertificateSummary::Unavailable(UNAVAILABLE_RANK.into()),
        verification: None,
        classification: None,
    };

    let traj = match integrate(&config.loss, arch, &data, &w0, &config.integrator) {
        Ok(t) => t,
        Err(e @ FlowError::NonFiniteState { .. }) => {
            let uncertified = crate::losses::BoundFactors::new(&data).is_err();
            summary.status = if uncertified { RunStatus::UncertifiedDivergence } else { RunStatus::Error };
            summary.exit_code = exit::ERROR;
            summary.message = Some(e.to_string());
            write_json(&dir.join(SUMMARY_FILE), &summary)?;
            write_timings(dir, started)?;
            return Ok(RunOutcome { summary, dir: dir.to_path_buf(), trajectory: None });
        }
        Err(e) => return Err(e.into()),
    };

    write_trajectory(&dir.join(TRAJECTORY_FILE), arch.depth(), &traj.samples)?;
    let report = verify_trajectory(&traj.samples, &traj.ledger, traj.certificate.as_ref(), &config.integrator);

    let max_v = traj.samples.iter().map(|s| s.final_filter_l1).fold(0.0, f64::max);
    let max_beta = traj.samples.iter().flat_map(|s| s.layer_norms_sq.iter().copied()).fold(0.0, f64::max);
    let cert_file = CertificateFile {
        available: traj.certificate.is_some(),
        reason: traj.uncertified_reason.clone(),
        certificate: traj.certificate.clone(),
        initial_loss: traj.initial.loss,
        observed_max_final_filter_l1: max_v,
        observed_max_layer_norm_sq: max_beta,
    };
    write_json(&dir.join(CERTIFICATE_FILE), &cert_file)?;

    let status = status_of(traj.termination);
    summary.status = status;
    summary.exit_code = exit_code_of(status, report.passed());
    summary.termination = Some(traj.termination);
    summary.initial_loss = Some(traj.initial.loss);
    summary.grad_tol = Some(traj.grad_tol);
    summary.final_t = Some(traj.last.t);
    summary.final_loss = Some(traj.last.loss);
    summary.final_grad_norm = Some(traj.last.grad_norm);
    summary.accepted_steps = Some(traj.accepted_steps);
    summary.rejected_steps = Some(traj.rejected_steps);
    summary.final_w = Some(traj.last.w.layers().to_vec());
    summary.final_filter = Some(final_filter(arch, &traj.last.w)?.coeffs);
    if let Some(c) = &traj.certificate {
        summary.certificate = CertificateSummary::Available { t_bound: c.t_bound, tau: c.tau };
    }
    summary.classification = Some(if traj.termination == Termination::Converged {
        classification(classify_limit(&config.loss, arch, &data, &traj.last.w, traj.grad_tol))
    } else {
        Classification { class: "skipped".into(), reason: Some("flow did not converge".into()), witnesses: Vec::new() }
    });
    summary.verification = Some(report);
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    write_timings(dir, started)?;
    Ok(RunOutcome { summary, dir: dir.to_path_buf(), trajectory: Some(traj) })
}

fn write_timings(dir: &Path, started: Instant) -> Result<(), HarnessError> {
    #[derive(Serialize)]
    struct Timings {
        wall_seconds: f64,
    }
    write_json(&dir.join(TIMINGS_FILE), &Timings { wall_seconds: started.elapsed().as_secs_f64() })
}

/// One line of `batch_summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub seed: u64,
    pub status: String,
    pub exit_code: i32,
    pub final_t: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_grad_norm: Option<f64>,
    pub t_bound: Option<f64>,
    pub tau: Option<f64>,
    pub verified: bool,
    pub classification: String,
    pub dir: String,
}

/// Runs `seeds` copies of `config` with init seeds `init.seed + i` on a
/// pool of `jobs` threads, each into `root/seed_<seed>`, and writes
/// `root/batch_summary.csv`. Rows are in seed order.
pub fn run_batch(
    config: &ExperimentConfig,
    root: &Path,
    seeds: u64,
    jobs: usize,
) -> Result<Vec<BatchRow>, HarnessError> {
    fs::create_dir_all(root).map_err(|e| HarnessError::io(root, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Io(e.to_string()))?;
    let base = config.init.seed;
    let rows: Vec<BatchRow> = pool.install(|| {
        (0..seeds)
            .into_par_iter()
            .map(|i| {
                let seed = base + i;
                let mut c = config.clone();
                c.init.seed = seed;
                let dir = root.join(format!("seed_{seed}"));
                let dir_str = dir.display().to_string();
                match run_experiment(&c, &dir) {
                    Ok(out) => {
                        let s = &out.summary;
                        let (t_bound, tau) = match s.certificate {
                            CertificateSummary::Available { t_bound, tau } => (Some(t_bound), Some(tau)),
                            CertificateSummary::Unavailable(_) => (None, None),
                        };
                        BatchRow {
                            seed,
                            status: s.status.as_str().into(),
                            exit_code: s.exit_code,
                            final_t: s.final_t,
                            final_loss: s.final_loss,
                            final_grad_norm: s.final_grad_norm,
                            t_bound,
                            tau,
                            verified: s.verification.as_ref().is_some_and(VerificationReport::passed),
                            classification: s.classification.as_ref().map_or(String::new(), |c| c.class.clone()),
                            dir: dir_str,
                        }
                    }
                    Err(e) => BatchRow {
                        seed,
                        status: RunStatus::Error.as_str().into(),
                        exit_code: exit::ERROR,
                        final_t: None,
                        final_loss: None,
                        final_grad_norm: None,
                        t_bound: None,
                        tau: None,
                        verified: false,
                        classification: e.to_string(),
                        dir: dir_str,
                    },
                }
            })
            .collect()
    });

    let path = root.join(BATCH_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "seed",
        "status",
        "exit_code",
        "final_t",
        "final_loss",
        "final_grad_norm",
        "t_bound",
        "tau",
        "verified",
        "classification",
        "dir",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in &rows {
        w.write_record([
            r.seed.to_string(),
            r.status.clone(),
            r.exit_code.to_string(),
            opt(r.final_t),
            opt(r.final_loss),
            opt(r.final_grad_norm),
            opt(r.t_bound),
            opt(r.tau),
            r.verified.to_string(),
            r.classification.clone(),
            r.dir.clone(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    Ok(rows)
}

/// Worst exit code of a batch.
pub fn batch_exit_code(rows: &[BatchRow]) -> i32 {
    let rank = |c: i32| match c {
        exit::ERROR => 3,
        exit::VERIFICATION => 2,
        exit::BUDGET => 1,
        _ => 0,
    };
    rows.iter().map(|r| r.exit_code).max_by_key(|&c| rank(c)).unwrap_or(exit::CONVERGED)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "architecture": {"d0": 1, "k": [1], "s": [1]},
                "loss": {"kind": "square"},
                "data": {"source": "inline", "x": [[1.0]], "y": [[2.0]]},
                "init": {"mode": "explicit", "filters": [[0.0]]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn scalar_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&scalar(), dir.path()).unwrap();
        assert_eq!(out.exit_code(), exit::CONVERGED);
        let text = fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        let s: RunSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(s.status, RunStatus::Converged);
        assert!((s.final_w.unwrap()[0][0] - 2.0).abs() < 1e-4);
        assert_eq!(s.classification.unwrap().class, "global_min_certificate");
        let csv = fs::read_to_string(dir.path().join(TRAJECTORY_FILE)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "t,loss,grad_norm,layer_norm_sq_1,final_filter_l1");
        for f in [CERTIFICATE_FILE, TIMINGS_FILE] {
            assert!(dir.path().join(f).exists());
        }
    }

    #[test]
    fn budget_exhaustion_exit_code() {
        let mut c = scalar();
        c.integrator.max_t = 0.5;
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&c, dir.path()).unwrap();
        assert_eq!(out.summary.status, RunStatus::MaxTime);
        assert_eq!(out.exit_code(), exit::BUDGET);
        assert_eq!(out.summary.classification.unwrap().class, "skipped");
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            trajectory_header(3).join(","),
            "t,loss,grad_norm,delta_1_2,delta_1_3,delta_2_3,layer_norm_sq_1,layer_norm_sq_2,layer_norm_sq_3,final_filter_l1"
        );
    }

    #[test]
    fn exit_code_severity() {
        assert_eq!(exit_code_of(RunStatus::Converged, true), 0);
        assert_eq!(exit_code_of(RunStatus::Converged, false), 3);
        assert_eq!(exit_code_of(RunStatus::MaxSteps, true), 2);
        assert_eq!(exit_code_of(RunStatus::MaxSteps, false), 3);
        assert_eq!(exit_code_of(RunStatus::Error, false), 1);
        let row = |c| BatchRow {
            seed: 0,
            status: String::new(),
            exit_code: c,
            final_t: None,
            final_loss: None,
            final_grad_norm: None,
            t_bound: None,
            tau: None,
            verified: true,
            classification: String::new(),
            dir: String::new(),
        };
        assert_eq!(batch_exit_code(&[row(0), row(2), row(3)]), 3);
        assert_eq!(batch_exit_code(&[row(0), row(1), row(3)]), 1);
        assert_eq!(batch_exit_code(&[]), 0);
    }
}
