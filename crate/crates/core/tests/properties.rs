use nalgebra::DMatrix;
use proptest::prelude::*;

use lcn_flow::flow::{adjacent_deltas, filter_norm_bound, pair_deltas};
use lcn_flow::lcn::{final_filter, network_matrix, to_matrix, Architecture, FilterStack};
use lcn_flow::losses::{empirical_risk, risk_grad, Dataset, LossSpec};
use lcn_flow::poly::{factor_linear, root_bound, roots, stretch, ComplexPoly, RealPoly};

/// Widths, strides and an output dimension; `d0` is derived backwards.
fn arch_strategy(max_n: usize) -> impl Strategy<Value = Architecture> {
    (1..=max_n)
        .prop_flat_map(|n| (prop::collection::vec(1..=4usize, n), prop::collection::vec(1..=3usize, n), 1..=3usize))
        .prop_map(|(k, s, d_out)| {
            let d0 = (0..k.len()).rev().fold(d_out, |d, i| (d - 1) * s[i] + k[i]);
            Architecture::new(d0, &k, &s).unwrap()
        })
}

fn with_filters(max_n: usize) -> impl Strategy<Value = (Architecture, FilterStack)> {
    arch_strategy(max_n)
        .prop_flat_map(|arch| {
            let layers: Vec<_> = arch.widths().iter().map(|&k| prop::collection::vec(-2.0..2.0f64, k)).collect();
            (Just(arch), layers)
        })
        .prop_map(|(arch, layers)| {
            let w = FilterStack::new(&arch, layers).unwrap();
            (arch, w)
        })
}

fn poly_strategy() -> impl Strategy<Value = RealPoly> {
    (1..=8usize)
        .prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop_oneof![-10.0..-0.1f64, 0.1..10.0f64]))
        .prop_map(|(mut c, lead)| {
            c.push(lead);
            RealPoly::new(c)
        })
}

/// Direct strided convolution, independent of the matrix code.
fn convolve(f: &[f64], stride: usize, x: &[f64]) -> Vec<f64> {
    let d_out = (x.len() - f.len()) / stride + 1;
    (0..d_out).map(|r| f.iter().enumerate().map(|(j, fj)| fj * x[r * stride + j]).sum()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn network_is_one_convolution((arch, w) in with_filters(4)) {
        let v = final_filter(&arch, &w).unwrap();
        prop_assert_eq!(v.coeffs.len(), arch.final_width());
        prop_assert_eq!(v.stride, arch.strides().iter().product::<usize>());

        let product = (0..arch.depth())
            .map(|i| stretch(w.layer(i), i + 1, arch.strides()).unwrap())
            .fold(RealPoly::one(), |acc, p| acc.multiply(&p));
        for (a, b) in v.coeffs.iter().zip(product.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        let dense = network_matrix(&arch, &w).unwrap();
        let conv = to_matrix(&v.coeffs, arch.input_dim(), v.stride).unwrap().to_dense();
        prop_assert!((&dense - &conv).amax() <= 1e-12);

        // Layer by layer on each basis vector.
        for c in 0..arch.input_dim() {
            let mut x = vec![0.0; arch.input_dim()];
            x[c] = 1.0;
            for i in 0..arch.depth() {
                x = convolve(w.layer(i), arch.strides()[i], &x);
            }
            for (r, xr) in x.iter().enumerate() {
                prop_assert!((dense[(r, c)] - xr).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rescaling_layers_keeps_the_function(
        (arch, w) in with_filters(4),
        logs in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let n = arch.depth();
        // Scales with product one.
        let mut c: Vec<f64> = logs[..n].iter().map(|l| l.exp()).collect();
        let rest: f64 = c[..n - 1].iter().product();
        c[n - 1] = 1.0 / rest;
        let layers = (0..n).map(|i| w.layer(i).iter().map(|v| v * c[i]).collect()).collect();
        let scaled = FilterStack::new(&arch, layers).unwrap();
        let a = final_filter(&arch, &w).unwrap().coeffs;
        let b = final_filter(&arch, &scaled).unwrap().coeffs;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn one_norm_is_submultiplicative(p in poly_strategy(), q in poly_strategy()) {
        prop_assert!(p.multiply(&q).l1_norm() <= p.l1_norm() * q.l1_norm() + 1e-10);
    }

    #[test]
    fn roots_lie_inside_the_bound(p in poly_strategy()) {
        let cp = ComplexPoly::from(&p);
        let a = root_bound(&cp).unwrap();
        let zs = roots(&cp, 1e-8).unwrap();
        prop_assert_eq!(zs.len(), p.degree().unwrap());
        for z in zs {
            prop_assert!(z.norm() <= a * (1.0 + 1e-8));
            let scale = p.l1_norm() * z.norm().max(1.0).powi(p.degree().unwrap() as i32);
            prop_assert!(p.eval(z).norm() <= 1e-8 * scale);
        }
    }

    #[test]
    fn linear_factors_are_bounded(p in poly_strategy()) {
        let f = factor_linear(&p).unwrap();
        prop_assert_eq!(f.factors.len(), p.degree().unwrap());
        prop_assert!(f.max_factor_norm() <= f.factor_bound());
        let rec = f.reconstruct();
        let scale = p.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
        for (a, b) in rec.coeffs().iter().zip(p.coeffs()) {
            prop_assert!((a.re - b).abs() <= 1e-8 * scale && a.im.abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn gradient_matches_central_differences(
        (arch, w) in with_filters(3),
        seed in 0..1000u64,
        kind in 0..5usize,
    ) {
        let spec = [
            LossSpec::Square,
            LossSpec::lp(4).unwrap(),
            LossSpec::pseudo_huber(0.8).unwrap(),
            LossSpec::generalized_huber(1.2, -0.5).unwrap(),
            LossSpec::log_cosh(1.5).unwrap(),
        ][kind];
        let m = 3;
        let x = DMatrix::from_fn(arch.input_dim(), m, |r, c| ((seed as f64 + 1.0) * (r * m + c + 1) as f64).sin());
        let y = DMatrix::from_fn(arch.output_dim(), m, |r, c| ((seed as f64 + 2.0) * (r + 2 * c + 1) as f64).cos());
        let data = Dataset::new(x, y).unwrap();
        let g = risk_grad(&spec, &arch, &w, &data).unwrap().flatten();
        let flat = w.flatten();
        let scale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..flat.len() {
            let h = 1e-5;
            let at = |d: f64| {
                let mut p = flat.clone();
                p[i] += d;
                empirical_risk(&spec, &arch, &FilterStack::from_flat(&arch, &p).unwrap(), &data).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * scale, "entry {}: fd {} analytic {}", i, fd, g[i]);
        }
    }

    #[test]
    fn tau_bounds_every_layer((arch, w) in with_filters(3)) {
        let norms = w.layer_norms_sq();
        let t = final_filter(&arch, &w).unwrap().l1_norm();
        let tau = filter_norm_bound(arch.final_width(), t, &adjacent_deltas(&norms));
        prop_assert!(norms.iter().all(|b| *b <= tau));
        prop_assert_eq!(pair_deltas(&norms).len(), arch.depth() * (arch.depth() - 1) / 2);
    }
}
