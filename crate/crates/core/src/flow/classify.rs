use num_complex::Complex64;
use serde::{Serialize, Serializer};

use super::FlowError;
use crate::lcn::{Architecture, FilterStack};
use crate::losses::{risk_grad, Dataset, LossSpec};
use crate::poly::{common_roots, stretch, DEFAULT_COMMON_ROOT_TOL};

/// What can be said about a critical point reached by the flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum LimitClass {
    /// Convex loss, unit strides and filter polynomials without a common
    /// root: the critical point is a global minimum.
    GlobalMinCertificate,
    NoCertificate {
        reason: String,
        #[serde(serialize_with = "complex_pairs")]
        witnesses: Vec<Complex64>,
    },
}

fn complex_pairs<S: Serializer>(zs: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(zs.iter().map(|z| [z.re, z.im]))
}

impl LimitClass {
    pub fn is_certified(&self) -> bool {
        matches!(self, LimitClass::GlobalMinCertificate)
    }
}

/// Classifies `w` after checking it is critical (`||grad L|| <= grad_tol`).
///
/// A single layer is certified whenever it is critical: with one filter
/// there are no distinct factors that could share a root.
pub fn classify_limit(
    spec: &LossSpec,
    arch: &Architecture,
    data: &Dataset,
    w: &FilterStack,
    grad_tol: f64,
) -> Result<LimitClass, FlowError> {
    let grad = risk_grad(spec, arch, w, data)?;
    let grad_norm = grad.flatten().iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm > grad_tol {
        return Err(FlowError::NotCritical { grad_norm, tol: grad_tol });
    }
    if !spec.is_convex() {
        return Ok(LimitClass::NoCertificate { reason: "loss is not convex".into(), witnesses: Vec::new() });
    }
    if arch.strides().iter().any(|&s| s != 1) {
        return Ok(LimitClass::NoCertificate {
            reason: "common-root criterion needs unit strides".into(),
            witnesses: Vec::new(),
        });
    }
    if arch.depth() == 1 {
        return Ok(LimitClass::GlobalMinCertificate);
    }

    let mut polys = Vec::with_capacity(arch.depth());
    for i in 0..arch.depth() {
        let p = stretch(w.layer(i), i + 1, arch.strides()).expect("layer index in range");
        // Evolved filters: treat leading coefficients at rounding level as zero.
        let p = p.trimmed(1e-14 * p.l1_norm());
        if p.is_zero() {
            return Ok(LimitClass::NoCertificate {
                reason: format!("layer {} filter is zero", i + 1),
                witnesses: Vec::new(),
            });
        }
        polys.push(p);
    }
    let shared = common_roots(&polys, DEFAULT_COMMON_ROOT_TOL)
        .map_err(|e| FlowError::InvalidConfig(format!("common-root search failed: {e}")))?;
    if shared.is_empty() {
        Ok(LimitClass::GlobalMinCertificate)
    } else {
        Ok(LimitClass::NoCertificate { reason: "filter polynomials share a root".into(), witnesses: shared })
    }
}
