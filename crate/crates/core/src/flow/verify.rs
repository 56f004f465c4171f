use serde::{Deserialize, Serialize};

use super::{BalancednessLedger, BoundednessCertificate, IntegratorConfig, Sample};

/// Slack on `||v(t)||_1 <= T`.
pub const FINAL_FILTER_SLACK: f64 = 1e-6;
/// Allowed loss increase between samples, in units of the local tolerance.
const DESCENT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub limit: f64,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    fn compare(name: &str, observed: f64, limit: f64, detail: String) -> Self {
        let status = if observed <= limit { CheckStatus::Pass } else { CheckStatus::Fail };
        Self { name: name.into(), observed, limit, status, detail }
    }

    fn skipped(name: &str, detail: &str) -> Self {
        Self { name: name.into(), observed: 0.0, limit: 0.0, status: CheckStatus::Skipped, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::Skipped => "SKIP",
            };
            out.push_str(&format!(
                "{tag}  {:<14} observed {:.6e}  limit {:.6e}  {}\n",
                c.name, c.observed, c.limit, c.detail
            ));
        }
        out
    }
}

/// Checks recorded samples against balancedness, descent and, when a
/// certificate exists, the final-filter and layer-norm bounds.
pub fn verify_trajectory(
    samples: &[Sample],
    ledger: &BalancednessLedger,
    certificate: Option<&BoundednessCertificate>,
    config: &IntegratorConfig,
) -> VerificationReport {
    let mut checks = Vec::new();

    let (mut drift, mut at) = (0.0f64, 0.0);
    for s in samples {
        let d = ledger.drift(&s.deltas);
        if d > drift {
            drift = d;
            at = s.t;
        }
    }
    checks.push(Check::compare(
        "balancedness",
        drift,
        ledger.drift_limit(),
        format!("max |delta_ij(t) - delta_ij(0)| (worst at t = {at:.6e})"),
    ));

    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_increase = 0.0f64;
    let mut limit_at_worst = 0.0;
    for pair in samples.windows(2) {
        let allowed = DESCENT_FACTOR * (config.abs_tol + config.rel_tol * pair[0].param_norm());
        let increase = pair[1].loss - pair[0].loss;
        if increase - allowed > worst_excess {
            worst_excess = increase - allowed;
            worst_increase = increase;
            limit_at_worst = allowed;
        }
    }
    if samples.len() < 2 {
        checks.push(Check::skipped("descent", "fewer than two samples"));
    } else {
        checks.push(Check::compare(
            "descent",
            worst_increase,
            limit_at_worst,
            "largest L(t_k+1) - L(t_k) relative to its allowance".into(),
        ));
    }

    match certificate {
        Some(cert) => {
            let v_max = samples.iter().map(|s| s.final_filter_l1).fold(0.0, f64::max);
            checks.push(Check::compare(
                "final_filter",
                v_max,
                cert.t_bound + FINAL_FILTER_SLACK,
                "max ||v(t)||_1 vs T = g(L(w0))".into(),
            ));
            let beta_max = samples.iter().flat_map(|s| s.layer_norms_sq.iter().copied()).fold(0.0, f64::max);
            checks.push(Check::compare("layer_norms", beta_max, cert.tau, "max ||w^(i)(t)||_2^2 vs tau".into()));
        }
        None => {
            checks.push(Check::skipped("final_filter", "no certificate (rank-deficient X)"));
            checks.push(Check::skipped("layer_norms", "no certificate (rank-deficient X)"));
        }
    }
    VerificationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossSpec;

    fn sample(t: f64, loss: f64, norms: [f64; 2]) -> Sample {
        Sample {
            t,
            loss,
            grad_norm: 1.0,
            deltas: vec![norms[0] - norms[1]],
            layer_norms_sq: norms.to_vec(),
            final_filter_l1: 1.0,
        }
    }

    #[test]
    fn clean_samples_pass() {
        let samples = vec![sample(0.0, 3.0, [1.0, 2.0]), sample(1.0, 2.0, [1.5, 2.5]), sample(2.0, 1.0, [2.0, 3.0])];
        let ledger = BalancednessLedger::new(&[1.0, 2.0]);
        let cert = BoundednessCertificate {
            t_bound: 2.0,
            tau: 10.0,
            final_width: 3,
            deltas: vec![1.0],
            loss: LossSpec::Square,
        };
        let report = verify_trajectory(&samples, &ledger, Some(&cert), &IntegratorConfig::default());
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.checks.len(), 4);
    }

    #[test]
    fn corrupted_delta_fails_balancedness_only() {
        let mut samples = vec![sample(0.0, 3.0, [1.0, 2.0]), sample(1.0, 2.0, [1.5, 2.5])];
        samples[1].deltas[0] += 1e-3;
        let ledger = BalancednessLedger::new(&[1.0, 2.0]);
        let report = verify_trajectory(&samples, &ledger, None, &IntegratorConfig::default());
        assert!(!report.passed());
        assert_eq!(report.check("balancedness").unwrap().status, CheckStatus::Fail);
        assert_eq!(report.check("descent").unwrap().status, CheckStatus::Pass);
        assert_eq!(report.check("final_filter").unwrap().status, CheckStatus::Skipped);
    }

    #[test]
    fn loss_increase_fails_descent() {
        let samples = vec![sample(0.0, 1.0, [1.0, 2.0]), sample(1.0, 1.1, [1.0, 2.0])];
        let ledger = BalancednessLedger::new(&[1.0, 2.0]);
        let report = verify_trajectory(&samples, &ledger, None, &IntegratorConfig::default());
        assert_eq!(report.check("descent").unwrap().status, CheckStatus::Fail);
    }
}
