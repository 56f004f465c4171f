//! Loss families, the empirical risk of a network and its exact gradient,
//! and the bounding functions `h` and `g` behind the boundedness
//! certificate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lcn::{network_matrix, ArchError, Architecture, FilterStack};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("invalid loss parameters: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("risk value {0} is negative")]
    NegativeRisk(f64),
    #[error("X is rank deficient (smallest singular value {sigma_min:e} <= {tol:e}); no certificate")]
    RankDeficientInput { sigma_min: f64, tol: f64 },
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// One of the five loss families, with validated parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossSpecRaw", into = "LossSpecRaw")]
pub enum LossSpec {
    /// `||z - y||_2^2`, without a factor 1/2.
    Square,
    /// `(1/p) sum |z_j - y_j|^p` for even `p >= 2`.
    Lp { p: u32 },
    /// `delta sum sqrt(1 + (z_j - y_j)^2 / delta^2)`.
    PseudoHuber { delta: f64 },
    /// `(1/alpha) sum log(e^{alpha t} + e^{-alpha t} + beta)`.
    GeneralizedHuber { alpha: f64, beta: f64 },
    /// `(1/alpha) sum log cosh(alpha t)`.
    LogCosh { alpha: f64 },
}

/// Wire form: `{"kind": "generalized_huber", "alpha": 1.0, "beta": -0.5}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LossSpecRaw {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
}

impl TryFrom<LossSpecRaw> for LossSpec {
    type Error = LossError;

    fn try_from(raw: LossSpecRaw) -> Result<Self, Self::Error> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| LossError::InvalidParameter(format!("{} loss needs \"{name}\"", raw.kind)))
        };
        match raw.kind.as_str() {
            "square" => Ok(LossSpec::Square),
            "lp" => LossSpec::lp(raw.p.ok_or_else(|| LossError::InvalidParameter("lp loss needs \"p\"".into()))?),
            "pseudo_huber" => LossSpec::pseudo_huber(need(raw.delta, "delta")?),
            "generalized_huber" => LossSpec::generalized_huber(need(raw.alpha, "alpha")?, raw.beta.unwrap_or(0.0)),
            "log_cosh" => LossSpec::log_cosh(need(raw.alpha, "alpha")?),
            other => Err(LossError::InvalidParameter(format!("unknown loss kind {other:?}"))),
        }
    }
}

impl From<LossSpec> for LossSpecRaw {
    fn from(spec: LossSpec) -> Self {
        let mut raw = LossSpecRaw { kind: spec.kind().to_string(), p: None, delta: None, alpha: None, beta: None };
        match spec {
            LossSpec::Square => {}
            LossSpec::Lp { p } => raw.p = Some(p),
            LossSpec::PseudoHuber { delta } => raw.delta = Some(delta),
            LossSpec::GeneralizedHuber { alpha, beta } => {
                raw.alpha = Some(alpha);
                raw.beta = Some(beta);
            }
            LossSpec::LogCosh { alpha } => raw.alpha = Some(alpha),
        }
        raw
    }
}

/// Above this `|alpha t|` the exponentials are factored out of the log.
const EXP_GUARD: f64 = 30.0;

impl LossSpec {
    /// Even `p >= 2` only: odd or fractional exponents are refused.
    pub fn lp(p: u32) -> Result<Self, LossError> {
        if p < 2 || !p.is_multiple_of(2) {
            return Err(LossError::InvalidParameter(format!("lp loss needs an even p >= 2, got {p}")));
        }
        Ok(LossSpec::Lp { p })
    }

    pub fn pseudo_huber(delta: f64) -> Result<Self, LossError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(LossError::InvalidParameter(format!("pseudo-Huber needs delta > 0, got {delta}")));
        }
        Ok(LossSpec::PseudoHuber { delta })
    }

    pub fn generalized_huber(alpha: f64, beta: f64) -> Result<Self, LossError> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > -2.0 && beta.is_finite()) {
            return Err(LossError::InvalidParameter(format!(
                "generalized Huber needs alpha > 0 and beta > -2, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(LossSpec::GeneralizedHuber { alpha, beta })
    }

    pub fn log_cosh(alpha: f64) -> Result<Self, LossError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(LossError::InvalidParameter(format!("log-cosh needs alpha > 0, got {alpha}")));
        }
        Ok(LossSpec::LogCosh { alpha })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LossSpec::Square => "square",
            LossSpec::Lp { .. } => "lp",
            LossSpec::PseudoHuber { .. } => "pseudo_huber",
            LossSpec::GeneralizedHuber { .. } => "generalized_huber",
            LossSpec::LogCosh { .. } => "log_cosh",
        }
    }

    /// Short column label, e.g. `lp_p4` or `generalized_huber_a1_b-0.5`.
    pub fn label(&self) -> String {
        match *self {
            LossSpec::Square => "square".into(),
            LossSpec::Lp { p } => format!("lp_p{p}"),
            LossSpec::PseudoHuber { delta } => format!("pseudo_huber_d{delta}"),
            LossSpec::GeneralizedHuber { alpha, beta } => format!("generalized_huber_a{alpha}_b{beta}"),
            LossSpec::LogCosh { alpha } => format!("log_cosh_a{alpha}"),
        }
    }

    /// Every family here is convex in the prediction.
    pub fn is_convex(&self) -> bool {
        true
    }

    /// Loss contribution of a single residual component `t = z_j - y_j`.
    pub fn component(&self, t: f64) -> f64 {
        match *self {
            LossSpec::Square => t * t,
            LossSpec::Lp { p } => t.powi(p as i32) / p as f64,
            LossSpec::PseudoHuber { delta } => delta * (1.0 + (t / delta).powi(2)).sqrt(),
            LossSpec::GeneralizedHuber { alpha, beta } => {
                let a = alpha * t;
                let lg = if a.abs() > EXP_GUARD {
                    let e = (-a.abs()).exp();
                    a.abs() + (e * e + beta * e).ln_1p()
                } else {
                    (a.exp() + (-a).exp() + beta).ln()
                };
                lg / alpha
            }
            LossSpec::LogCosh { alpha } => {
                let a = (alpha * t).abs();
                let lg =
                    if a > EXP_GUARD { a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2 } else { a.cosh().ln() };
                lg / alpha
            }
        }
    }

    /// Derivative of [`component`](Self::component) with respect to `t`.
    pub fn component_grad(&self, t: f64) -> f64 {
        match *self {
            LossSpec::Square => 2.0 * t,
            LossSpec::Lp { p } => t.powi(p as i32 - 1),
            LossSpec::PseudoHuber { delta } => t / (delta * (1.0 + (t / delta).powi(2)).sqrt()),
            LossSpec::GeneralizedHuber { alpha, beta } => {
                let a = alpha * t;
                if a.abs() > EXP_GUARD {
                    let e = (-a.abs()).exp();
                    a.signum() * (1.0 - e * e) / (1.0 + e * e + beta * e)
                } else {
                    (a.exp() - (-a).exp()) / (a.exp() + (-a).exp() + beta)
                }
            }
            LossSpec::LogCosh { alpha } => (alpha * t).tanh(),
        }
    }
}

fn check_len(z: &[f64], y: &[f64]) -> Result<(), LossError> {
    if z.len() != y.len() {
        return Err(LossError::DimensionMismatch(format!("prediction has {} entries, label {}", z.len(), y.len())));
    }
    Ok(())
}

/// `l(z, y)` summed over components.
pub fn loss_value(spec: &LossSpec, z: &[f64], y: &[f64]) -> Result<f64, LossError> {
    check_len(z, y)?;
    Ok(z.iter().zip(y).map(|(a, b)| spec.component(a - b)).sum())
}

/// Gradient of `l(z, y)` with respect to `z`.
pub fn loss_grad(spec: &LossSpec, z: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError> {
    check_len(z, y)?;
    Ok(z.iter().zip(y).map(|(a, b)| spec.component_grad(a - b)).collect())
}

/// Training data: inputs `X` (`d_0 x m`, one sample per column) and
/// labels `Y` (`d_N x m`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self, LossError> {
        if x.ncols() == 0 {
            return Err(LossError::DimensionMismatch("dataset has no samples".into()));
        }
        if x.ncols() != y.ncols() {
            return Err(LossError::DimensionMismatch(format!("X has {} samples, Y has {}", x.ncols(), y.ncols())));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn check(&self, arch: &Architecture) -> Result<(), LossError> {
        if self.x.nrows() != arch.input_dim() || self.y.nrows() != arch.output_dim() {
            return Err(LossError::DimensionMismatch(format!(
                "data is {}x{} -> {}x{}, architecture maps R^{} -> R^{}",
                self.x.nrows(),
                self.x.ncols(),
                self.y.nrows(),
                self.y.ncols(),
                arch.input_dim(),
                arch.output_dim()
            )));
        }
        Ok(())
    }
}

/// Sum of `spec.component` over all entries of `Z - Y`.
pub fn matrix_loss(spec: &LossSpec, z: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    z.iter().zip(y.iter()).map(|(a, b)| spec.component(a - b)).sum()
}

/// `L(w) = sum_i l(V x_i, y_i)` with `V` the network matrix.
pub fn empirical_risk(spec: &LossSpec, arch: &Architecture, w: &FilterStack, data: &Dataset) -> Result<f64, LossError> {
    data.check(arch)?;
    let v = network_matrix(arch, w)?;
    Ok(matrix_loss(spec, &(v * data.x()), data.y()))
}

/// Exact gradient of [`empirical_risk`] with respect to every filter entry.
pub fn risk_grad(
    spec: &LossSpec,
    arch: &Architecture,
    w: &FilterStack,
    data: &Dataset,
) -> Result<FilterStack, LossError> {
    risk_and_grad(spec, arch, w, data).map(|(_, g)| g)
}

/// `out[r, c] = sum_j f[j] a[r s + j, c]`.
fn conv_forward(f: &[f64], stride: usize, a: &DMatrix<f64>, d_out: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d_out, a.ncols());
    for c in 0..a.ncols() {
        let col = a.column(c);
        for r in 0..d_out {
            out[(r, c)] = f.iter().enumerate().map(|(j, fj)| fj * col[r * stride + j]).sum();
        }
    }
    out
}

/// [`empirical_risk`] and [`risk_grad`] sharing one forward pass.
///
/// Backpropagation through the layer activations `A_i = W^(i) A_{i-1}`,
/// `A_0 = X`: with `B_i = dL/dA_i`, the filter gradient is
/// `dL/dw^(i)_j = sum_{r,c} B_i[r, c] A_{i-1}[r s_i + j, c]` and
/// `B_{i-1} = W^(i)^T B_i`.
pub fn risk_and_grad(
    spec: &LossSpec,
    arch: &Architecture,
    w: &FilterStack,
    data: &Dataset,
) -> Result<(f64, FilterStack), LossError> {
    data.check(arch)?;
    w.check(arch)?;
    let n = arch.depth();
    let dims = arch.dims();
    let strides = arch.strides();

    let mut acts = Vec::with_capacity(n + 1);
    acts.push(data.x().clone());
    for i in 0..n {
        let next = conv_forward(w.layer(i), strides[i], &acts[i], dims[i + 1]);
        acts.push(next);
    }
    let z = &acts[n];
    let risk = matrix_loss(spec, z, data.y());
    let mut back = DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| spec.component_grad(z[(r, c)] - data.y()[(r, c)]));

    let mut grads = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let (f, s, a) = (w.layer(i), strides[i], &acts[i]);
        let mut gi = vec![0.0; f.len()];
        let mut prev = if i > 0 { Some(DMatrix::zeros(dims[i], a.ncols())) } else { None };
        for c in 0..a.ncols() {
            for r in 0..dims[i + 1] {
                let b = back[(r, c)];
                for (j, g) in gi.iter_mut().enumerate() {
                    *g += b * a[(r * s + j, c)];
                }
                if let Some(p) = prev.as_mut() {
                    for (j, fj) in f.iter().enumerate() {
                        p[(r * s + j, c)] += fj * b;
                    }
                }
            }
        }
        grads[i] = gi;
        if let Some(p) = prev {
            back = p;
        }
    }
    Ok((risk, FilterStack::new(arch, grads)?))
}

/// Monotone `h` with `||W X - Y||_1 <= h(sum_i l(W x_i, y_i))` for all `W`.
pub fn h_bound(spec: &LossSpec, risk: f64, d_out: usize, m: usize) -> Result<f64, LossError> {
    if risk < 0.0 || risk.is_nan() {
        return Err(LossError::NegativeRisk(risk));
    }
    let dm = (d_out * m) as f64;
    let h = match *spec {
        LossSpec::Square => dm * 2f64.sqrt() * (risk / 2.0).sqrt(),
        LossSpec::Lp { p } => {
            let p = p as f64;
            dm * p.powf(1.0 / p) * risk.powf(1.0 / p)
        }
        _ => risk + m as f64 * additive_constant(spec, d_out),
    };
    Ok(h)
}

/// The per-sample slack `c` in `||W x - y||_1 <= l(W x, y) + c`.
fn additive_constant(spec: &LossSpec, d_out: usize) -> f64 {
    match *spec {
        LossSpec::GeneralizedHuber { alpha, beta } if beta < 0.0 => d_out as f64 / alpha * (2.0 / (2.0 + beta)).ln(),
        LossSpec::LogCosh { alpha } => d_out as f64 * std::f64::consts::LN_2 / alpha,
        _ => 0.0,
    }
}

/// Relative threshold for the smallest singular value of `X`.
pub const RANK_TOL: f64 = 1e-10;

/// The data-dependent parts of `g`: `||X^T (X X^T)^{-1}||_1` and `||Y||_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundFactors {
    pub pinv_l1: f64,
    pub labels_l1: f64,
    pub d_out: usize,
    pub samples: usize,
}

impl BoundFactors {
    pub fn new(data: &Dataset) -> Result<Self, LossError> {
        let x = data.x();
        let (d0, m) = x.shape();
        let svd = x.clone().svd(false, false);
        let sigma_max = svd.singular_values.max();
        let tol = RANK_TOL * sigma_max;
        let sigma_min = if d0 > m { 0.0 } else { svd.singular_values.min() };
        if sigma_min <= tol {
            return Err(LossError::RankDeficientInput { sigma_min, tol });
        }
        let gram = x * x.transpose();
        let chol = gram.cholesky().ok_or(LossError::RankDeficientInput { sigma_min, tol })?;
        // X^T (X X^T)^{-1} = (solve(X X^T, X))^T
        let pinv = chol.solve(x).transpose();
        Ok(Self {
            pinv_l1: pinv.iter().map(|v| v.abs()).sum(),
            labels_l1: data.y().iter().map(|v| v.abs()).sum(),
            d_out: data.y().nrows(),
            samples: m,
        })
    }

    pub fn g(&self, spec: &LossSpec, risk: f64) -> Result<f64, LossError> {
        let h = h_bound(spec, risk, self.d_out, self.samples)?;
        Ok((h + self.labels_l1) * self.pinv_l1 / self.d_out as f64)
    }
}

/// `g(L) = (h(L) + ||Y||_1) ||X^T (X X^T)^{-1}||_1 / d_N`, a bound on
/// `||pi(w)||_1` valid for every `w` with `L(w) = L`.
pub fn g_bound(spec: &LossSpec, data: &Dataset, risk: f64) -> Result<f64, LossError> {
    BoundFactors::new(data)?.g(spec, risk)
}

/// `||W X - Y||_1`.
pub fn residual_l1(w: &DMatrix<f64>, data: &Dataset) -> f64 {
    (w * data.x() - data.y()).iter().map(|v| v.abs()).sum()
}
