//! Browser bindings: loss curves, small gradient-flow runs and filter
//! factorizations. Every export takes and returns JSON strings.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use lcn_flow::flow::{classify_limit, integrate, IntegratorConfig, Termination};
use lcn_flow::lcn::{final_filter, network_matrix, Architecture, FilterStack};
use lcn_flow::losses::{Dataset, LossSpec};
use lcn_flow::poly::{factor_linear, root_bound, roots, ComplexPoly, RealPoly};

/// Largest grid the page may request.
const MAX_POINTS: usize = 100_000;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn loss_curves_value(specs: &str, t_min: f64, t_max: f64, step: f64) -> Result<Value, String> {
    let specs: Vec<LossSpec> = serde_json::from_str(specs).map_err(err)?;
    if !(step > 0.0 && t_max >= t_min) {
        return Err(format!("bad grid [{t_min}, {t_max}] step {step}"));
    }
    let n = ((t_max - t_min) / step + 1e-9).floor() as usize + 1;
    if n > MAX_POINTS {
        return Err(format!("grid has {n} points, limit is {MAX_POINTS}"));
    }
    let t: Vec<f64> = (0..n).map(|i| t_min + i as f64 * step).collect();
    let series: Vec<Value> = specs
        .iter()
        .map(|s| json!({ "label": s.label(), "values": t.iter().map(|&x| s.component(x)).collect::<Vec<_>>() }))
        .collect();
    Ok(json!({ "t": t, "series": series }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowRequest {
    architecture: Architecture,
    loss: LossSpec,
    m: usize,
    #[serde(default)]
    data_seed: u64,
    #[serde(default)]
    init_seed: u64,
    /// Labels from a planted network instead of noise.
    #[serde(default)]
    teacher: bool,
    #[serde(default = "default_max_t")]
    max_t: f64,
    #[serde(default = "default_rel_tol")]
    rel_tol: f64,
}

fn default_max_t() -> f64 {
    1e4
}

fn default_rel_tol() -> f64 {
    1e-8
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn uniform_filters(rng: &mut ChaCha8Rng, arch: &Architecture) -> Result<FilterStack, String> {
    let layers = arch
        .widths()
        .iter()
        .map(|&k| {
            let scale = 1.0 / (k as f64).sqrt();
            (0..k).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
        })
        .collect();
    FilterStack::new(arch, layers).map_err(err)
}

pub fn simulate_flow_value(request: &str) -> Result<Value, String> {
    let req: FlowRequest = serde_json::from_str(request).map_err(err)?;
    let arch = &req.architecture;
    if req.m == 0 || req.m > 500 || arch.num_params() > 200 {
        return Err("keep m in 1..=500 and at most 200 parameters".into());
    }

    let mut data_rng = ChaCha8Rng::seed_from_u64(req.data_seed);
    let x = normal(&mut data_rng, arch.input_dim(), req.m);
    let y = if req.teacher {
        let planted = uniform_filters(&mut data_rng, arch)?;
        network_matrix(arch, &planted).map_err(err)? * &x
    } else {
        normal(&mut data_rng, arch.output_dim(), req.m)
    };
    let data = Dataset::new(x, y).map_err(err)?;
    let w0 = uniform_filters(&mut ChaCha8Rng::seed_from_u64(req.init_seed), arch)?;

    let config = IntegratorConfig {
        rel_tol: req.rel_tol,
        abs_tol: req.rel_tol * 1e-3,
        max_t: req.max_t,
        max_steps: 200_000,
        sample_every: 5,
        ..IntegratorConfig::default()
    };
    let traj = integrate(&req.loss, arch, &data, &w0, &config).map_err(err)?;
    let classification = match traj.termination {
        Termination::Converged => {
            serde_json::to_value(classify_limit(&req.loss, arch, &data, &traj.last.w, traj.grad_tol).map_err(err)?)
                .map_err(err)?
        }
        _ => Value::Null,
    };
    let v = final_filter(arch, &traj.last.w).map_err(err)?;
    Ok(json!({
        "termination": traj.termination.as_str(),
        "accepted_steps": traj.accepted_steps,
        "final_t": traj.last.t,
        "final_loss": traj.last.loss,
        "final_grad_norm": traj.last.grad_norm,
        "final_w": traj.last.w.layers(),
        "final_filter": v.coeffs,
        "max_balancedness_drift": traj.ledger.max_drift,
        "certificate": traj.certificate.as_ref().map(|c| json!({ "t_bound": c.t_bound, "tau": c.tau })),
        "uncertified_reason": traj.uncertified_reason,
        "classification": classification,
        "samples": traj.samples,
    }))
}

pub fn factor_filter_value(coeffs: &str) -> Result<Value, String> {
    let coeffs: Vec<f64> = serde_json::from_str(coeffs).map_err(err)?;
    let p = RealPoly::new(coeffs);
    let f = factor_linear(&p).map_err(err)?;
    let cp = ComplexPoly::from(&p);
    let zs = roots(&cp, 1e-12).map_err(err)?;
    let pair = |z: &num_complex::Complex64| [z.re, z.im];
    let factors: Vec<Value> = f
        .factors
        .iter()
        .map(|u| json!({ "coeffs": u.coeffs().iter().map(pair).collect::<Vec<_>>(), "l1": u.l1_norm() }))
        .collect();
    Ok(json!({
        "degree": f.degree(),
        "sign": f.sign,
        "roots": zs.iter().map(pair).collect::<Vec<_>>(),
        "root_bound": root_bound(&cp).map_err(err)?,
        "factors": factors,
        "max_factor_norm": f.max_factor_norm(),
        "factor_bound": f.factor_bound(),
    }))
}

fn to_js(v: Result<Value, String>) -> Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// `specs`: JSON array of loss specs. Returns `{t, series: [{label, values}]}`.
#[wasm_bindgen]
pub fn loss_curves(specs: &str, t_min: f64, t_max: f64, step: f64) -> Result<String, JsError> {
    to_js(loss_curves_value(specs, t_min, t_max, step))
}

#[wasm_bindgen]
pub fn simulate_flow(request: &str) -> Result<String, JsError> {
    to_js(simulate_flow_value(request))
}

/// `coeffs`: ascending coefficients of a real polynomial.
#[wasm_bindgen]
pub fn factor_filter(coeffs: &str) -> Result<String, JsError> {
    to_js(factor_filter_value(coeffs))
}
