//! Linear convolutional networks: architectures, strided convolution
//! matrices, and the maps from a stack of filters to the network matrix
//! and to the final (end-to-end) filter.
//!
//! Layers are 0-based internally. Everything that leaves the crate
//! (CSV headers, JSON reports, error messages) uses 1-based layer indices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("architecture needs at least one layer")]
    NoLayers,
    #[error("{widths} filter widths but {strides} strides")]
    LengthMismatch { widths: usize, strides: usize },
    #[error("layer {layer}: width and stride must be >= 1 (got k={width}, s={stride})")]
    NonPositiveParameter { layer: usize, width: usize, stride: usize },
    #[error("layer {layer}: filter width {width} exceeds input dimension {input}")]
    FilterTooWide { layer: usize, width: usize, input: usize },
    #[error("layer {layer}: (d_in - k) = {span} is not divisible by stride {stride}")]
    NonIntegerDimension { layer: usize, span: usize, stride: usize },
    #[error("layer {layer}: dimension {dim} is not positive")]
    NonPositiveDimension { layer: usize, dim: usize },
    #[error("filter stack does not match architecture: {0}")]
    ShapeMismatch(String),
}

/// Output dimension of a padding-free strided convolution, 1-based `layer`
/// only used for error reporting.
fn output_dim(layer: usize, d_in: usize, width: usize, stride: usize) -> Result<usize, ArchError> {
    if width == 0 || stride == 0 {
        return Err(ArchError::NonPositiveParameter { layer, width, stride });
    }
    if d_in == 0 {
        return Err(ArchError::NonPositiveDimension { layer: layer - 1, dim: d_in });
    }
    if width > d_in {
        return Err(ArchError::FilterTooWide { layer, width, input: d_in });
    }
    let span = d_in - width;
    if !span.is_multiple_of(stride) {
        return Err(ArchError::NonIntegerDimension { layer, span, stride });
    }
    Ok(span / stride + 1)
}

/// The shape `(d, k, s)` of a linear convolutional network.
///
/// Only `d0`, the widths and the strides are stored by the caller; the
/// intermediate dimensions are always derived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureSpec", into = "ArchitectureSpec")]
pub struct Architecture {
    dims: Vec<usize>,
    widths: Vec<usize>,
    strides: Vec<usize>,
}

/// Wire form of an [`Architecture`]: `{"d0": 8, "k": [4], "s": [2]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub d0: usize,
    pub k: Vec<usize>,
    pub s: Vec<usize>,
}

impl TryFrom<ArchitectureSpec> for Architecture {
    type Error = ArchError;

    fn try_from(spec: ArchitectureSpec) -> Result<Self, Self::Error> {
        Architecture::new(spec.d0, &spec.k, &spec.s)
    }
}

impl From<Architecture> for ArchitectureSpec {
    fn from(arch: Architecture) -> Self {
        ArchitectureSpec { d0: arch.dims[0], k: arch.widths, s: arch.strides }
    }
}

impl Architecture {
    /// Validates `(d0, k, s)` and derives `d_i = (d_{i-1} - k_i)/s_i + 1`.
    pub fn new(d0: usize, widths: &[usize], strides: &[usize]) -> Result<Self, ArchError> {
        if widths.is_empty() {
            return Err(ArchError::NoLayers);
        }
        if widths.len() != strides.len() {
            return Err(ArchError::LengthMismatch { widths: widths.len(), strides: strides.len() });
        }
        if d0 == 0 {
            return Err(ArchError::NonPositiveDimension { layer: 0, dim: 0 });
        }
        let mut dims = Vec::with_capacity(widths.len() + 1);
        dims.push(d0);
        for (i, (&k, &s)) in widths.iter().zip(strides).enumerate() {
            let next = output_dim(i + 1, dims[i], k, s)?;
            dims.push(next);
        }
        Ok(Self { dims, widths: widths.to_vec(), strides: strides.to_vec() })
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// `(d_0, ..., d_N)`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        self.dims[self.depth()]
    }

    /// Total number of trainable parameters, the sum of all widths.
    pub fn num_params(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Product of the strides of the layers before `layer` (0-based), i.e.
    /// the spacing at which filter `layer` acts on the network input.
    pub fn stride_before(&self, layer: usize) -> usize {
        self.strides[..layer].iter().product()
    }

    /// Width of the final filter: `k_1 + sum_{i>=2} (k_i - 1) prod_{m<i} s_m`.
    pub fn final_width(&self) -> usize {
        self.widths.iter().enumerate().map(|(i, &k)| (k - 1) * self.stride_before(i)).sum::<usize>() + 1
    }

    pub fn final_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Sufficient condition for the architecture to be filling: unit strides
    /// and at most one even filter width. A `false` does not prove the
    /// architecture is non-filling.
    pub fn is_filling_candidate(&self) -> bool {
        self.strides.iter().all(|&s| s == 1) && self.widths.iter().filter(|&&k| k % 2 == 0).count() <= 1
    }

    pub fn spec(&self) -> ArchitectureSpec {
        self.clone().into()
    }
}

/// The concatenated filters `(w^(1), ..., w^(N))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FilterStack {
    filters: Vec<Vec<f64>>,
}

impl FilterStack {
    pub fn new(arch: &Architecture, filters: Vec<Vec<f64>>) -> Result<Self, ArchError> {
        let stack = Self { filters };
        stack.check(arch)?;
        Ok(stack)
    }

    /// Splits a flat parameter vector according to `arch`'s widths.
    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self, ArchError> {
        if flat.len() != arch.num_params() {
            return Err(ArchError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                arch.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let filters = arch
            .widths()
            .iter()
            .map(|&k| {
                let f = flat[offset..offset + k].to_vec();
                offset += k;
                f
            })
            .collect();
        Ok(Self { filters })
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self { filters: arch.widths().iter().map(|&k| vec![0.0; k]).collect() }
    }

    pub fn check(&self, arch: &Architecture) -> Result<(), ArchError> {
        if self.filters.len() != arch.depth() {
            return Err(ArchError::ShapeMismatch(format!(
                "{} filters for a depth-{} architecture",
                self.filters.len(),
                arch.depth()
            )));
        }
        for (i, (f, &k)) in self.filters.iter().zip(arch.widths()).enumerate() {
            if f.len() != k {
                return Err(ArchError::ShapeMismatch(format!(
                    "layer {} filter has length {}, width is {}",
                    i + 1,
                    f.len(),
                    k
                )));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.filters.len()
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.filters[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.filters[i]
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.filters
    }

    pub fn into_layers(self) -> Vec<Vec<f64>> {
        self.filters
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.filters.iter().flatten().copied().collect()
    }

    /// `||w^(i)||_2^2` for every layer.
    pub fn layer_norms_sq(&self) -> Vec<f64> {
        self.filters.iter().map(|f| f.iter().map(|x| x * x).sum()).collect()
    }
}

/// A strided convolution `R^{d_in} -> R^{d_out}` in structured form.
///
/// Row `j` (0-based) holds the filter in columns `j*stride .. j*stride + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMatrix {
    filter: Vec<f64>,
    stride: usize,
    d_in: usize,
    d_out: usize,
}

impl ConvMatrix {
    pub fn new(filter: &[f64], d_in: usize, stride: usize) -> Result<Self, ArchError> {
        if filter.is_empty() {
            return Err(ArchError::NonPositiveParameter { layer: 1, width: 0, stride });
        }
        let d_out = output_dim(1, d_in, filter.len(), stride)?;
        Ok(Self { filter: filter.to_vec(), stride, d_in, d_out })
    }

    pub fn rows(&self) -> usize {
        self.d_out
    }

    pub fn cols(&self) -> usize {
        self.d_in
    }

    pub fn filter(&self) -> &[f64] {
        &self.filter
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let start = row * self.stride;
        if col >= start && col < start + self.filter.len() {
            self.filter[col - start]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d_out, self.d_in);
        for j in 0..self.d_out {
            for (n, &w) in self.filter.iter().enumerate() {
                m[(j, j * self.stride + n)] = w;
            }
        }
        m
    }

    /// `W x` without forming the dense matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d_in, "input length");
        (0..self.d_out)
            .map(|j| {
                let start = j * self.stride;
                self.filter.iter().zip(&x[start..]).map(|(w, v)| w * v).sum()
            })
            .collect()
    }
}

/// Convolution matrix of `filter` acting on inputs of length `d_in`.
pub fn to_matrix(filter: &[f64], d_in: usize, stride: usize) -> Result<ConvMatrix, ArchError> {
    ConvMatrix::new(filter, d_in, stride)
}

/// Per-layer convolution matrices `W^(1), ..., W^(N)`.
pub fn layer_matrices(arch: &Architecture, w: &FilterStack) -> Result<Vec<ConvMatrix>, ArchError> {
    w.check(arch)?;
    Ok((0..arch.depth())
        .map(|i| ConvMatrix {
            filter: w.layer(i).to_vec(),
            stride: arch.strides()[i],
            d_in: arch.dims()[i],
            d_out: arch.dims()[i + 1],
        })
        .collect())
}

/// The dense `d_N x d_0` product `W^(N) ... W^(1)`.
pub fn network_matrix(arch: &Architecture, w: &FilterStack) -> Result<DMatrix<f64>, ArchError> {
    let layers = layer_matrices(arch, w)?;
    let mut acc = layers[0].to_dense();
    for layer in &layers[1..] {
        acc = layer.to_dense() * acc;
    }
    Ok(acc)
}

/// The filter of the composed convolution together with its stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalFilter {
    pub coeffs: Vec<f64>,
    pub stride: usize,
}

impl FinalFilter {
    pub fn width(&self) -> usize {
        self.coeffs.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.abs()).sum()
    }
}

/// Final filter via the layer-by-layer recursion
/// `v_m = sum_{(n-1) s~ + l = m} w^(N)_n v~_l`, where `v~` and `s~` are the
/// filter and stride of the first `N-1` layers.
pub fn final_filter(arch: &Architecture, w: &FilterStack) -> Result<FinalFilter, ArchError> {
    w.check(arch)?;
    let mut v = w.layer(0).to_vec();
    let mut stride = arch.strides()[0];
    for i in 1..arch.depth() {
        let inner = arch.stride_before(i);
        let wi = w.layer(i);
        let mut next = vec![0.0; (wi.len() - 1) * inner + v.len()];
        for (n, &a) in wi.iter().enumerate() {
            for (l, &b) in v.iter().enumerate() {
                next[n * inner + l] += a * b;
            }
        }
        v = next;
        stride *= arch.strides()[i];
    }
    debug_assert_eq!(v.len(), arch.final_width());
    Ok(FinalFilter { coeffs: v, stride })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_are_derived() {
        assert_eq!(Architecture::new(8, &[4], &[2]).unwrap().dims(), &[8, 3]);
        assert_eq!(Architecture::new(5, &[1], &[1]).unwrap().dims(), &[5, 5]);
        assert_eq!(Architecture::new(10, &[2, 3], &[2, 2]).unwrap().dims(), &[10, 5, 2]);
    }

    #[test]
    fn invalid_architectures() {
        assert!(matches!(Architecture::new(8, &[3], &[2]), Err(ArchError::NonIntegerDimension { .. })));
        assert!(matches!(Architecture::new(3, &[4], &[1]), Err(ArchError::FilterTooWide { .. })));
        assert!(matches!(Architecture::new(4, &[2, 4], &[1, 1]), Err(ArchError::FilterTooWide { layer: 2, .. })));
        assert!(matches!(Architecture::new(0, &[1], &[1]), Err(ArchError::NonPositiveDimension { .. })));
        assert!(matches!(Architecture::new(4, &[], &[]), Err(ArchError::NoLayers)));
        assert!(matches!(Architecture::new(4, &[1], &[1, 1]), Err(ArchError::LengthMismatch { .. })));
        assert!(matches!(Architecture::new(4, &[0], &[1]), Err(ArchError::NonPositiveParameter { .. })));
    }

    #[test]
    fn json_rederives_dims() {
        let arch: Architecture = serde_json::from_str(r#"{"d0": 10, "k": [2, 3], "s": [2, 2]}"#).unwrap();
        assert_eq!(arch.dims(), &[10, 5, 2]);
        let bad = serde_json::from_str::<Architecture>(r#"{"d0": 9, "k": [2], "s": [2]}"#);
        assert!(bad.is_err());
        let round = serde_json::to_string(&arch).unwrap();
        assert_eq!(round, r#"{"d0":10,"k":[2,3],"s":[2,2]}"#);
    }

    #[test]
    fn conv_matrix_layout() {
        let m = to_matrix(&[1.0, 2.0, 3.0, 4.0], 8, 2).unwrap().to_dense();
        assert_eq!(m.shape(), (3, 8));
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(3, 8, &[
            1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0,
        ]);
        assert_eq!(m, expected);

        assert_eq!(to_matrix(&[1.0], 4, 1).unwrap().to_dense(), DMatrix::identity(4, 4));
        let band = to_matrix(&[1.0, 2.0], 3, 1).unwrap().to_dense();
        assert_eq!(band, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0]));
    }

    #[test]
    fn apply_matches_dense() {
        let c = to_matrix(&[0.5, -1.0, 2.0], 9, 3).unwrap();
        let x: Vec<f64> = (0..9).map(|i| i as f64 - 3.0).collect();
        let dense = c.to_dense() * nalgebra::DVector::from_column_slice(&x);
        assert_eq!(c.apply(&x), dense.as_slice());
        assert_eq!(c.entry(1, 3), 0.5);
        assert_eq!(c.entry(1, 2), 0.0);
    }

    #[test]
    fn two_layer_final_filter() {
        let arch = Architecture::new(10, &[2, 3], &[2, 2]).unwrap();
        let w = FilterStack::new(&arch, vec![vec![1.0, 2.0], vec![3.0, 4.0, 5.0]]).unwrap();
        let v = final_filter(&arch, &w).unwrap();
        assert_eq!(v.coeffs, vec![3.0, 6.0, 4.0, 8.0, 5.0, 10.0]);
        assert_eq!(v.stride, 4);
        assert_eq!(arch.final_width(), 6);

        let net = network_matrix(&arch, &w).unwrap();
        assert_eq!(net.shape(), (2, 10));
        assert_eq!(net, to_matrix(&v.coeffs, 10, 4).unwrap().to_dense());
    }

    #[test]
    fn binomial_final_filter() {
        let arch = Architecture::new(4, &[2, 2], &[1, 1]).unwrap();
        let w = FilterStack::new(&arch, vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(final_filter(&arch, &w).unwrap().coeffs, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn single_layer_and_zero_factor() {
        let arch = Architecture::new(6, &[3], &[1]).unwrap();
        let w = FilterStack::new(&arch, vec![vec![1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(final_filter(&arch, &w).unwrap().coeffs, vec![1.0, -2.0, 0.5]);
        assert_eq!(network_matrix(&arch, &w).unwrap(), to_matrix(&[1.0, -2.0, 0.5], 6, 1).unwrap().to_dense());

        let arch = Architecture::new(9, &[3, 2, 2], &[1, 1, 1]).unwrap();
        let w = FilterStack::new(&arch, vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.0], vec![4.0, 5.0]]).unwrap();
        assert!(final_filter(&arch, &w).unwrap().coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn filling_candidates() {
        assert!(Architecture::new(11, &[3, 5, 3], &[1, 1, 1]).unwrap().is_filling_candidate());
        assert!(!Architecture::new(4, &[2, 2], &[1, 1]).unwrap().is_filling_candidate());
        assert!(!Architecture::new(8, &[4], &[2]).unwrap().is_filling_candidate());
        assert!(Architecture::new(8, &[4, 3], &[1, 1]).unwrap().is_filling_candidate());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let arch = Architecture::new(10, &[2, 3], &[2, 2]).unwrap();
        assert!(FilterStack::new(&arch, vec![vec![1.0, 2.0]]).is_err());
        assert!(FilterStack::new(&arch, vec![vec![1.0], vec![3.0, 4.0, 5.0]]).is_err());
        assert!(FilterStack::from_flat(&arch, &[1.0; 4]).is_err());
        let w = FilterStack::from_flat(&arch, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(w.layer(1), &[3.0, 4.0, 5.0]);
        assert_eq!(w.flatten(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
