//! Balancedness bookkeeping and the a-priori bound on individual filter
//! norms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::lcn::FilterStack;
use crate::losses::LossSpec;
use crate::poly::{root_bound, ComplexPoly, RealPoly};

/// `delta_ij = ||w^(i)||^2 - ||w^(j)||^2` as an antisymmetric `N x N` matrix.
pub fn balancedness_deltas(w: &FilterStack) -> DMatrix<f64> {
    let norms = w.layer_norms_sq();
    let n = norms.len();
    DMatrix::from_fn(n, n, |i, j| norms[i] - norms[j])
}

/// The upper-triangle entries `delta_ij`, `i < j`, in lexicographic order.
pub fn pair_deltas(norms_sq: &[f64]) -> Vec<f64> {
    let n = norms_sq.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(norms_sq[i] - norms_sq[j]);
        }
    }
    out
}

/// 1-based `(i, j)` labels matching [`pair_deltas`].
pub fn pair_labels(depth: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 1..=depth {
        for j in i + 1..=depth {
            out.push((i, j));
        }
    }
    out
}

/// Adjacent differences `||w^(i+1)||^2 - ||w^(i)||^2`, `i = 1..N-1`.
pub fn adjacent_deltas(norms_sq: &[f64]) -> Vec<f64> {
    norms_sq.windows(2).map(|p| p[1] - p[0]).collect()
}

/// Conserved norm differences at `t = 0` and the worst drift seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancednessLedger {
    /// `delta_ij(0)` for `i < j`, lexicographic.
    pub initial: Vec<f64>,
    /// `max_i ||w^(i)(0)||^2`.
    pub initial_max_norm_sq: f64,
    pub max_drift: f64,
}

impl BalancednessLedger {
    pub fn new(initial_norms_sq: &[f64]) -> Self {
        Self {
            initial: pair_deltas(initial_norms_sq),
            initial_max_norm_sq: initial_norms_sq.iter().copied().fold(0.0, f64::max),
            max_drift: 0.0,
        }
    }

    /// Records the drift of the current norms and returns it.
    pub fn observe(&mut self, norms_sq: &[f64]) -> f64 {
        let drift = self.drift(&pair_deltas(norms_sq));
        self.max_drift = self.max_drift.max(drift);
        drift
    }

    pub fn drift(&self, deltas: &[f64]) -> f64 {
        self.initial.iter().zip(deltas).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Allowed drift `1e-6 (1 + max_i ||w^(i)(0)||^2)`.
    pub fn drift_limit(&self) -> f64 {
        DRIFT_FACTOR * (1.0 + self.initial_max_norm_sq)
    }
}

pub const DRIFT_FACTOR: f64 = 1e-6;

/// A-priori bounds along a gradient flow: `||v(t)||_1 <= t_bound` and
/// `||w^(i)(t)||^2 <= tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessCertificate {
    /// `T = g(L(w_0))`.
    pub t_bound: f64,
    pub tau: f64,
    pub final_width: usize,
    /// Adjacent norm differences `||w^(i+1)||^2 - ||w^(i)||^2`.
    pub deltas: Vec<f64>,
    pub loss: LossSpec,
}

/// Constructive `tau(k_v, T, delta_1..delta_{N-1})` bounding every
/// `||w^(i)||^2` for filters whose final filter has 1-norm at most `T`.
///
/// `beta_1 = ||w^(1)||^2` is a root of
/// `z (z + S_1) ... (z + S_{N-1}) - K` with `S_i = delta_1 + ... + delta_i`
/// and `0 <= K < (6 T' k_v)^{2 k_v}`, `T' = max(T, 1)`. Replacing `K` by
/// that upper bound can only raise the Cauchy bound, so the Cauchy bound of
/// the substituted polynomial bounds `beta_1`. A vanishing final filter
/// gives `beta_i <= (N-1) max |delta|` instead. The remaining layers follow
/// from `beta_i = beta_1 + S_{i-1}`.
pub fn filter_norm_bound(final_width: usize, t_bound: f64, deltas: &[f64]) -> f64 {
    let t_eff = t_bound.max(1.0);
    let kv = final_width.max(1) as f64;
    let constant = (6.0 * t_eff * kv).powf(2.0 * kv);

    let partial: Vec<f64> = deltas
        .iter()
        .scan(0.0, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect();
    let mut q = RealPoly::new(vec![0.0, 1.0]);
    for &s in &partial {
        q = q.multiply(&RealPoly::new(vec![s, 1.0]));
    }
    let mut coeffs = q.coeffs().to_vec();
    coeffs[0] -= constant;
    let cauchy = root_bound(&ComplexPoly::from(&RealPoly::new(coeffs))).unwrap_or(f64::INFINITY);

    let n = deltas.len() as f64 + 1.0;
    let degenerate = (n - 1.0) * deltas.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let shift: f64 = partial.iter().map(|s| s.max(0.0)).sum();
    cauchy.max(degenerate) + shift
}
