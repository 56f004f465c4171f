//! Polynomials as the algebraic mirror of filters.
//!
//! A filter `w` of length `k` corresponds to `w_1 + w_2 x + ... + w_k x^{k-1}`.
//! Composing strided convolutions multiplies the "stretched" polynomials
//! of the individual layers, so root locations and coefficient norms of
//! the final filter control the individual filters.
//!
//! Coefficients are stored in ascending powers throughout.

use std::f64::consts::TAU;

use num_complex::Complex64;
use num_traits::Zero;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("filter is empty")]
    EmptyFilter,
    #[error("layer index {index} out of range 1..={depth}")]
    IndexOutOfRange { index: usize, depth: usize },
    #[error("polynomial is identically zero")]
    ZeroPolynomial,
    #[error("polynomial is a nonzero constant")]
    ConstantPolynomial,
    #[error("root iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("zero polynomial in common-root query (it shares every root)")]
    ZeroPolynomialInput,
}

/// Cap on simultaneous root iterations.
pub const MAX_ROOT_ITERATIONS: usize = 1000;
/// Default tolerance for common-root detection.
pub const DEFAULT_COMMON_ROOT_TOL: f64 = 1e-7;

fn cauchy_product<T>(a: &[T], b: &[T]) -> Vec<T>
where
    T: Copy + Zero + std::ops::Mul<Output = T>,
{
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = out[i + j] + x * y;
        }
    }
    out
}

fn q_norm(abs: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q == f64::INFINITY {
        abs.fold(0.0, f64::max)
    } else if q == 1.0 {
        abs.sum()
    } else {
        abs.map(|a| a.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// Real polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPoly {
    coeffs: Vec<f64>,
}

impl RealPoly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Index of the highest nonzero coefficient, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|&c| c != 0.0)
    }

    /// Drops trailing coefficients with `|c| <= tol`.
    pub fn trimmed(&self, tol: f64) -> Self {
        let end = self.coeffs.iter().rposition(|c| c.abs() > tol).map_or(0, |i| i + 1);
        Self { coeffs: self.coeffs[..end].to_vec() }
    }

    pub fn is_zero(&self) -> bool {
        self.degree().is_none()
    }

    /// Vector `q`-norm of the coefficients (`q = f64::INFINITY` allowed).
    pub fn norm(&self, q: f64) -> f64 {
        q_norm(self.coeffs.iter().map(|c| c.abs()), q)
    }

    pub fn l1_norm(&self) -> f64 {
        self.norm(1.0)
    }

    pub fn eval(&self, x: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::zero(), |acc, &c| acc * x + c)
    }

    pub fn multiply(&self, other: &Self) -> Self {
        Self { coeffs: cauchy_product(&self.coeffs, &other.coeffs) }
    }

    pub fn to_complex(&self) -> ComplexPoly {
        ComplexPoly::new(self.coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }
}

/// Complex polynomial with ascending coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPoly {
    coeffs: Vec<Complex64>,
}

impl ComplexPoly {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        Self { coeffs }
    }

    /// `x - root`.
    pub fn monic_linear(root: Complex64) -> Self {
        Self { coeffs: vec![-root, Complex64::new(1.0, 0.0)] }
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|c| !c.is_zero())
    }

    pub fn norm(&self, q: f64) -> f64 {
        q_norm(self.coeffs.iter().map(|c| c.norm()), q)
    }

    pub fn l1_norm(&self) -> f64 {
        self.norm(1.0)
    }

    pub fn eval(&self, x: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::zero(), |acc, &c| acc * x + c)
    }

    pub fn multiply(&self, other: &Self) -> Self {
        Self { coeffs: cauchy_product(&self.coeffs, &other.coeffs) }
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|&c| c * factor).collect() }
    }

    fn without_trailing_zeros(&self) -> Self {
        let end = self.degree().map_or(0, |d| d + 1);
        Self { coeffs: self.coeffs[..end].to_vec() }
    }
}

impl From<&RealPoly> for ComplexPoly {
    fn from(p: &RealPoly) -> Self {
        p.to_complex()
    }
}

/// `w_1 + w_2 x + ... + w_k x^{k-1}`.
pub fn from_filter(w: &[f64]) -> Result<RealPoly, PolyError> {
    if w.is_empty() {
        return Err(PolyError::EmptyFilter);
    }
    Ok(RealPoly::new(w.to_vec()))
}

/// Polynomial of filter `w` placed at layer `layer` (1-based) of a network
/// with the given strides: `sum_j w_{j+1} x^{j * prod_{n<layer} s_n}`.
pub fn stretch(w: &[f64], layer: usize, strides: &[usize]) -> Result<RealPoly, PolyError> {
    if w.is_empty() {
        return Err(PolyError::EmptyFilter);
    }
    if layer == 0 || layer > strides.len() {
        return Err(PolyError::IndexOutOfRange { index: layer, depth: strides.len() });
    }
    let step: usize = strides[..layer - 1].iter().product();
    let mut coeffs = vec![0.0; (w.len() - 1) * step + 1];
    for (j, &c) in w.iter().enumerate() {
        coeffs[j * step] = c;
    }
    Ok(RealPoly::new(coeffs))
}

/// Cauchy bound `A = (n / |a_n|) max_i |a_i|`: every root `z` has `|z| <= A`.
pub fn root_bound(p: &ComplexPoly) -> Result<f64, PolyError> {
    let n = p.degree().ok_or(PolyError::ZeroPolynomial)?;
    if n == 0 {
        return Err(PolyError::ConstantPolynomial);
    }
    let lead = p.coeffs[n].norm();
    let max = p.coeffs[..=n].iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(n as f64 / lead * max)
}

/// All `n` roots (with multiplicity) by Aberth–Ehrlich iteration.
///
/// Exact zero roots are split off first. The remaining roots start on a
/// circle of radius `root_bound / 2`. A root is frozen once its update
/// drops below `1e-13 max(1, |z|)` or its residual falls inside the
/// rounding-error envelope of Horner evaluation, which is what lets
/// clusters of multiple roots terminate. Returned roots satisfy
/// `|p(z)| <= tol ||p||_1 max(1, |z|)^n`.
pub fn roots(p: &ComplexPoly, tol: f64) -> Result<Vec<Complex64>, PolyError> {
    let p = p.without_trailing_zeros();
    let n = p.degree().ok_or(PolyError::ZeroPolynomial)?;
    if n == 0 {
        return Err(PolyError::ConstantPolynomial);
    }
    let zeros = p.coeffs.iter().position(|c| !c.is_zero()).unwrap_or(0);
    let mut out = vec![Complex64::zero(); zeros];
    let reduced = ComplexPoly::new(p.coeffs[zeros..].to_vec());
    let m = n - zeros;
    if m > 0 {
        out.extend(aberth(&reduced, m)?);
    }

    let norm1 = p.l1_norm();
    for z in &out {
        let allowed = tol * norm1 * z.norm().max(1.0).powi(n as i32);
        if p.eval(*z).norm() > allowed {
            return Err(PolyError::NoConvergence { iterations: MAX_ROOT_ITERATIONS });
        }
    }
    Ok(out)
}

fn aberth(p: &ComplexPoly, n: usize) -> Result<Vec<Complex64>, PolyError> {
    let a = &p.coeffs;
    if n == 1 {
        return Ok(vec![-a[0] / a[1]]);
    }
    let deriv: Vec<Complex64> = a.iter().enumerate().skip(1).map(|(k, &c)| c * k as f64).collect();
    let abs_coeffs: Vec<f64> = a.iter().map(|c| c.norm()).collect();
    let radius = 0.5 * root_bound(p)?;
    // The angular offset keeps the start off the real axis for real inputs.
    let mut z: Vec<Complex64> =
        (0..n).map(|k| Complex64::from_polar(radius, TAU * k as f64 / n as f64 + 0.4)).collect();
    let mut done = vec![false; n];
    let envelope = 8.0 * n as f64 * f64::EPSILON;

    for _ in 0..MAX_ROOT_ITERATIONS {
        for i in 0..n {
            if done[i] {
                continue;
            }
            let zi = z[i];
            let (val, dval, scale) = horner(a, &deriv, &abs_coeffs, zi);
            if val.norm() <= envelope * scale {
                done[i] = true;
                continue;
            }
            let ratio = val / dval;
            let repulsion: Complex64 = (0..n).filter(|&j| j != i).map(|j| (zi - z[j]).inv()).sum();
            let mut step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if !step.is_finite() {
                // p'(z) = 0 or coincident iterates: nudge instead of dividing by zero.
                step = Complex64::new(1e-8 * zi.norm().max(1.0), 1e-8);
            }
            z[i] = zi - step;
            if step.norm() < 1e-13 * z[i].norm().max(1.0) {
                done[i] = true;
            }
        }
        if done.iter().all(|&d| d) {
            return Ok(z);
        }
    }
    // Unconverged iterates may still satisfy the caller's residual check.
    Ok(z)
}

/// Returns `(p(z), p'(z), sum |a_k| |z|^k)`.
fn horner(a: &[Complex64], da: &[Complex64], abs_a: &[f64], z: Complex64) -> (Complex64, Complex64, f64) {
    let val = a.iter().rev().fold(Complex64::zero(), |acc, &c| acc * z + c);
    let dval = da.iter().rev().fold(Complex64::zero(), |acc, &c| acc * z + c);
    let r = z.norm();
    let scale = abs_a.iter().rev().fold(0.0, |acc, &c| acc * r + c);
    (val, dval, scale)
}

/// `p = sign * prod u_i` with every `||u_i||_1 <= 6 n T`, `T = max(||p||_1, 1)`.
#[derive(Debug, Clone)]
pub struct LinearFactorization {
    pub sign: f64,
    pub factors: Vec<ComplexPoly>,
    pub bound_t: f64,
}

impl LinearFactorization {
    pub fn degree(&self) -> usize {
        self.factors.len()
    }

    /// The guaranteed bound `6 n T` on every factor's 1-norm.
    pub fn factor_bound(&self) -> f64 {
        6.0 * self.degree() as f64 * self.bound_t
    }

    pub fn max_factor_norm(&self) -> f64 {
        self.factors.iter().map(ComplexPoly::l1_norm).fold(0.0, f64::max)
    }

    pub fn reconstruct(&self) -> ComplexPoly {
        let one = ComplexPoly::new(vec![Complex64::new(self.sign, 0.0)]);
        self.factors.iter().fold(one, |acc, u| acc.multiply(u))
    }
}

const UNIT_CIRCLE_SLACK: f64 = 1e-10;

/// Factors `p` into linear factors with controlled 1-norms.
///
/// Roots are sorted by descending modulus and `r` counts those with
/// `|z| >= 1`. For `r >= 1` the leading coefficient is spread over the
/// large-root factors, `u_i = (|a_n z_1 ... z_r|^{1/r} / |z_i|)(x - z_i)`,
/// and the small-root factors stay monic. For `r = 0` every factor gets
/// `|a_n|^{1/n}`.
pub fn factor_linear(p: &RealPoly) -> Result<LinearFactorization, PolyError> {
    let n = p.degree().ok_or(PolyError::ZeroPolynomial)?;
    if n == 0 {
        return Err(PolyError::ConstantPolynomial);
    }
    let lead = p.coeffs()[n];
    let bound_t = p.l1_norm().max(1.0);
    let mut zs = roots(&p.to_complex(), 1e-8)?;
    zs.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    // Unit-modulus roots come back within rounding of 1; count them as large.
    let r = zs.iter().take_while(|z| z.norm() >= 1.0 - UNIT_CIRCLE_SLACK).count();

    let factors = if r == 0 {
        let scale = lead.abs().powf(1.0 / n as f64);
        zs.iter().map(|&z| ComplexPoly::monic_linear(z).scale(scale.into())).collect()
    } else {
        let log_prod = lead.abs().ln() + zs[..r].iter().map(|z| z.norm().ln()).sum::<f64>();
        let common = (log_prod / r as f64).exp();
        zs.iter()
            .enumerate()
            .map(|(i, &z)| {
                let u = ComplexPoly::monic_linear(z);
                if i < r {
                    u.scale((common / z.norm()).into())
                } else {
                    u
                }
            })
            .collect()
    };
    Ok(LinearFactorization { sign: lead.signum(), factors, bound_t })
}

/// Approximate common complex roots of all `polys`.
///
/// Root lists are matched against the first polynomial's roots within
/// radius `sqrt(tol)`; a matched cluster's mean is kept when it passes the
/// residual test `|p_j(z)| <= tol ||p_j||_1 max(1, |z|)^{deg p_j}` for every
/// `j`. An empty result certifies "no common roots" at this tolerance.
pub fn common_roots(polys: &[RealPoly], tol: f64) -> Result<Vec<Complex64>, PolyError> {
    if polys.iter().any(RealPoly::is_zero) {
        return Err(PolyError::ZeroPolynomialInput);
    }
    if polys.is_empty() || polys.iter().any(|p| p.degree() == Some(0)) {
        return Ok(Vec::new());
    }
    let root_lists = polys.iter().map(|p| roots(&p.to_complex(), tol.max(1e-8))).collect::<Result<Vec<_>, _>>()?;
    let radius = tol.sqrt();

    let mut found: Vec<Complex64> = Vec::new();
    'candidates: for &z in &root_lists[0] {
        let mut sum = z;
        for list in &root_lists[1..] {
            let nearest = list.iter().min_by(|a, b| (**a - z).norm().total_cmp(&(**b - z).norm()));
            match nearest {
                Some(&w) if (w - z).norm() <= radius => sum += w,
                _ => continue 'candidates,
            }
        }
        let centre = sum / root_lists.len() as f64;
        let shared = polys.iter().all(|p| {
            let deg = p.degree().unwrap_or(0) as i32;
            p.eval(centre).norm() <= tol * p.l1_norm() * centre.norm().max(1.0).powi(deg)
        });
        if shared && found.iter().all(|f| (*f - centre).norm() > radius) {
            found.push(centre);
        }
    }
    Ok(found)
}
