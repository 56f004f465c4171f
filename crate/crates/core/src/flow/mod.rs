//! Gradient flow `dw/dt = -grad L(w)` for linear convolutional networks.
//!
//! [`integrate`] runs an adaptive Dormand–Prince integration, tracks the
//! conserved norm differences between layers on every accepted step,
//! computes the boundedness certificate when `X X^T` is invertible and
//! records diagnostics at a fixed cadence of accepted steps.

mod certificate;
mod classify;
pub mod integrator;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use certificate::{
    adjacent_deltas, balancedness_deltas, filter_norm_bound, pair_deltas, pair_labels, BalancednessLedger,
    BoundednessCertificate, DRIFT_FACTOR,
};
pub use classify::{classify_limit, LimitClass};
pub use verify::{verify_trajectory, Check, CheckStatus, VerificationReport, FINAL_FILTER_SLACK};

use crate::lcn::{final_filter, ArchError, Architecture, FilterStack};
use crate::losses::{risk_and_grad, BoundFactors, Dataset, LossError, LossSpec};
use integrator::{Dopri5, StepControl, StepError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("point is not critical: gradient norm {grad_norm:e} > {tol:e}")]
    NotCritical { grad_norm: f64, tol: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// Integrator settings. `grad_tol = None` means `1e-8 (1 + L(w_0))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub grad_tol: Option<f64>,
    pub max_t: f64,
    pub max_steps: u64,
    pub sample_every: u64,
    /// Minimum step as a fraction of `max(1, t)`.
    pub min_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            grad_tol: None,
            max_t: 1e6,
            max_steps: 5_000_000,
            sample_every: 50,
            min_step: 1e-14,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(FlowError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.rel_tol, "rel_tol")?;
        positive(self.abs_tol, "abs_tol")?;
        positive(self.max_t, "max_t")?;
        positive(self.min_step, "min_step")?;
        if let Some(g) = self.grad_tol {
            positive(g, "grad_tol")?;
        }
        if self.sample_every == 0 || self.max_steps == 0 {
            return Err(FlowError::InvalidConfig("sample_every and max_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn grad_tol_for(&self, initial_loss: f64) -> f64 {
        self.grad_tol.unwrap_or(1e-8 * (1.0 + initial_loss))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxTime,
    MaxSteps,
    StepSizeUnderflow,
    CertificateViolation,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxTime => "max_time",
            Termination::MaxSteps => "max_steps",
            Termination::StepSizeUnderflow => "step_size_underflow",
            Termination::CertificateViolation => "certificate_violation",
        }
    }
}

/// Point on the flow with its cached risk and gradient norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub w: FilterStack,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Diagnostics recorded at one sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// `delta_ij`, `i < j`, lexicographic.
    pub deltas: Vec<f64>,
    pub layer_norms_sq: Vec<f64>,
    pub final_filter_l1: f64,
}

impl Sample {
    pub fn param_norm(&self) -> f64 {
        self.layer_norms_sq.iter().sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub initial: FlowState,
    pub last: FlowState,
    pub termination: Termination,
    pub grad_tol: f64,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub ledger: BalancednessLedger,
    pub certificate: Option<BoundednessCertificate>,
    /// Why no certificate was computed, if none was.
    pub uncertified_reason: Option<String>,
}

/// Computes `T = g(L(w_0))` and `tau`; fails when `X X^T` is singular.
pub fn certificate_for(
    spec: &LossSpec,
    arch: &Architecture,
    data: &Dataset,
    w0: &FilterStack,
    initial_loss: f64,
) -> Result<BoundednessCertificate, LossError> {
    let factors = BoundFactors::new(data)?;
    let t_bound = factors.g(spec, initial_loss)?;
    let deltas = adjacent_deltas(&w0.layer_norms_sq());
    let final_width = arch.final_width();
    Ok(BoundednessCertificate {
        t_bound,
        tau: filter_norm_bound(final_width, t_bound, &deltas),
        final_width,
        deltas,
        loss: *spec,
    })
}

fn sample(arch: &Architecture, w: &FilterStack, t: f64, loss: f64, grad_norm: f64) -> Result<Sample, FlowError> {
    let norms = w.layer_norms_sq();
    Ok(Sample {
        t,
        loss,
        grad_norm,
        deltas: pair_deltas(&norms),
        layer_norms_sq: norms,
        final_filter_l1: final_filter(arch, w)?.l1_norm(),
    })
}

fn violates(cert: &BoundednessCertificate, s: &Sample) -> bool {
    s.final_filter_l1 > cert.t_bound + FINAL_FILTER_SLACK || s.layer_norms_sq.iter().any(|&b| b > cert.tau)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Integrates the gradient flow from `w0`.
///
/// Terminates with `Converged` once `||grad L|| <= grad_tol`, or when the
/// time or step budget runs out, the step size underflows, or a recorded
/// sample breaks the boundedness certificate. A non-finite state aborts
/// with [`FlowError::NonFiniteState`].
pub fn integrate(
    spec: &LossSpec,
    arch: &Architecture,
    data: &Dataset,
    w0: &FilterStack,
    config: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    config.validate()?;
    data.check(arch)?;
    w0.check(arch)?;

    let (loss0, grad0) = risk_and_grad(spec, arch, w0, data)?;
    let grad_tol = config.grad_tol_for(loss0);
    let (certificate, uncertified_reason) = match certificate_for(spec, arch, data, w0, loss0) {
        Ok(c) => (Some(c), None),
        Err(e @ LossError::RankDeficientInput { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };

    let mut ledger = BalancednessLedger::new(&w0.layer_norms_sq());
    let y0 = w0.flatten();
    let mut dy0: Vec<f64> = grad0.flatten().iter().map(|g| -g).collect();
    let grad_norm0 = norm(&dy0);
    let initial = FlowState { t: 0.0, w: w0.clone(), loss: loss0, grad_norm: grad_norm0 };
    let mut samples = vec![sample(arch, w0, 0.0, loss0, grad_norm0)?];
    if !loss0.is_finite() || !grad_norm0.is_finite() {
        return Err(FlowError::NonFiniteState { t: 0.0 });
    }

    let finish = |samples: Vec<Sample>, last: FlowState, termination, accepted, rejected, ledger| Trajectory {
        samples,
        initial: initial.clone(),
        last,
        termination,
        grad_tol,
        accepted_steps: accepted,
        rejected_steps: rejected,
        ledger,
        certificate: certificate.clone(),
        uncertified_reason: uncertified_reason.clone(),
    };

    if grad_norm0 <= grad_tol {
        return Ok(finish(samples, initial.clone(), Termination::Converged, 0, 0, ledger));
    }

    let mut rhs = |y: &[f64], out: &mut [f64]| {
        let w = FilterStack::from_flat(arch, y).expect("state length matches architecture");
        match risk_and_grad(spec, arch, &w, data) {
            Ok((_, g)) => {
                for (o, gi) in out.iter_mut().zip(g.layers().iter().flatten()) {
                    *o = -gi;
                }
            }
            Err(_) => out.fill(f64::NAN),
        }
    };
    let control = StepControl {
        rel_tol: config.rel_tol,
        abs_tol: config.abs_tol,
        min_step: config.min_step,
        max_step: f64::INFINITY,
    };
    let mut stepper = match Dopri5::new(control, y0, std::mem::take(&mut dy0), &mut rhs) {
        Ok(s) => s,
        Err(_) => return Err(FlowError::NonFiniteState { t: 0.0 }),
    };

    let mut accepted: u64 = 0;
    let termination = loop {
        if stepper.t() >= config.max_t {
            break Termination::MaxTime;
        }
        if accepted >= config.max_steps {
            break Termination::MaxSteps;
        }
        match stepper.step(config.max_t - stepper.t(), &mut rhs) {
            Ok(_) => {}
            Err(StepError::StepSizeUnderflow { .. }) => break Termination::StepSizeUnderflow,
            Err(StepError::NonFinite { t }) => return Err(FlowError::NonFiniteState { t }),
        }
        accepted += 1;
        let w = FilterStack::from_flat(arch, stepper.y())?;
        ledger.observe(&w.layer_norms_sq());
        let grad_norm = norm(stepper.dy());
        let converged = grad_norm <= grad_tol;
        if converged || accepted.is_multiple_of(config.sample_every) {
            let loss = crate::losses::empirical_risk(spec, arch, &w, data)?;
            let s = sample(arch, &w, stepper.t(), loss, grad_norm)?;
            let broken = certificate.as_ref().is_some_and(|c| violates(c, &s));
            samples.push(s);
            if broken {
                break Termination::CertificateViolation;
            }
        }
        if converged {
            break Termination::Converged;
        }
    };

    let w = FilterStack::from_flat(arch, stepper.y())?;
    let grad_norm = norm(stepper.dy());
    let loss = crate::losses::empirical_risk(spec, arch, &w, data)?;
    if samples.last().is_some_and(|s| s.t < stepper.t()) {
        samples.push(sample(arch, &w, stepper.t(), loss, grad_norm)?);
    }
    let last = FlowState { t: stepper.t(), w, loss, grad_norm };
    let rejected = stepper.rejected_steps();
    Ok(finish(samples, last, termination, accepted, rejected, ledger))
}
