//! Explicit Dormand–Prince 5(4) stepper for autonomous systems
//! `y' = f(y)`, with PI step-size control and FSAL reuse of the last stage.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("step size {h:e} fell below the minimum {min:e} at t = {t}")]
    StepSizeUnderflow { t: f64, h: f64, min: f64 },
    #[error("non-finite state or derivative at t = {t}")]
    NonFinite { t: f64 },
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
/// Largest `h * rho` allowed, `rho` the stiffness estimate. On the negative
/// real axis the stability polynomial is about 0.24 here, so a stiff mode
/// keeps decaying instead of idling at the tolerance level.
const STABLE_H_RHO: f64 = 2.5;

/// Tolerances for [`Dopri5`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Minimum step is `min_step * max(1, t)`.
    pub min_step: f64,
    pub max_step: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Adaptive stepper holding the current state, its derivative and the
/// proposed next step size.
pub struct Dopri5 {
    control: StepControl,
    t: f64,
    y: Vec<f64>,
    dy: Vec<f64>,
    h: f64,
    err_old: f64,
    last_rejected: bool,
    rejected: u64,
    /// `||f(y_new) - f(stage 6)|| / ||y_new - stage 6||` from the last attempt.
    rho: f64,
    k: [Vec<f64>; 6],
    stage: Vec<f64>,
    y_new: Vec<f64>,
    dy_new: Vec<f64>,
}

impl Dopri5 {
    /// `dy0` must be `f(y0)`.
    pub fn new<F>(control: StepControl, y0: Vec<f64>, dy0: Vec<f64>, rhs: &mut F) -> Result<Self, StepError>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = y0.len();
        let mut s = Self {
            control,
            t: 0.0,
            y: y0,
            dy: dy0,
            h: 0.0,
            err_old: 1e-4,
            last_rejected: false,
            rejected: 0,
            rho: 0.0,
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            y_new: vec![0.0; n],
            dy_new: vec![0.0; n],
        };
        s.h = s.initial_step(rhs)?;
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `f(y)` at the current state.
    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn rejected_steps(&self) -> u64 {
        self.rejected
    }

    fn scale(&self, y_norm: f64) -> f64 {
        self.control.abs_tol + self.control.rel_tol * y_norm
    }

    /// Two-evaluation starting step heuristic.
    fn initial_step<F>(&mut self, rhs: &mut F) -> Result<f64, StepError>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let sk = self.scale(norm(&self.y));
        let d0 = norm(&self.y) / sk;
        let d1 = norm(&self.dy) / sk;
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.control.max_step);
        for ((s, y), f) in self.stage.iter_mut().zip(&self.y).zip(&self.dy) {
            *s = y + h0 * f;
        }
        rhs(&self.stage, &mut self.k[0]);
        if !finite(&self.k[0]) {
            return Err(StepError::NonFinite { t: 0.0 });
        }
        let diff: f64 = self.k[0].iter().zip(&self.dy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let d2 = diff / sk / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dm).powf(0.2) };
        Ok((100.0 * h0).min(h1).min(self.control.max_step))
    }

    /// Takes one accepted step of at most `h_cap`, retrying with smaller
    /// steps after rejections. Returns the accepted step size.
    pub fn step<F>(&mut self, h_cap: f64, rhs: &mut F) -> Result<f64, StepError>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        loop {
            let capped = h_cap < self.h;
            let h = self.h.min(h_cap);
            let min = self.control.min_step * self.t.abs().max(1.0);
            if h < min && h < h_cap {
                return Err(StepError::StepSizeUnderflow { t: self.t, h, min });
            }
            let err = self.attempt(h, rhs)?;

            let fac11 = err.powf(EXPO);
            if err <= 1.0 {
                let mut fac = fac11 / self.err_old.powf(BETA);
                fac = (fac / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = (h / fac).min(self.control.max_step);
                if self.last_rejected {
                    h_new = h_new.min(h);
                }
                self.err_old = err.max(1e-4);
                self.last_rejected = false;
                self.t += h;
                std::mem::swap(&mut self.y, &mut self.y_new);
                std::mem::swap(&mut self.dy, &mut self.dy_new);
                // A step shortened only by the cap should not shrink the next one.
                self.h = if capped { h_new.max(self.h) } else { h_new };
                if self.rho > 0.0 {
                    self.h = self.h.min(STABLE_H_RHO / self.rho);
                }
                return Ok(h);
            }
            self.rejected += 1;
            self.last_rejected = true;
            self.h = h / (fac11 / SAFETY).min(1.0 / FAC_MIN);
        }
    }

    /// One trial step of size `h`; fills `y_new`/`dy_new` and returns the
    /// scaled error estimate.
    fn attempt<F>(&mut self, h: f64, rhs: &mut F) -> Result<f64, StepError>
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = self.y.len();
        let y = &self.y;
        let k1 = &self.dy;
        let [k2, k3, k4, k5, k6, k7] = &mut self.k;
        let stage = &mut self.stage;

        for i in 0..n {
            stage[i] = y[i] + h * A21 * k1[i];
        }
        rhs(stage, k2);
        for i in 0..n {
            stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(stage, k3);
        for i in 0..n {
            stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(stage, k4);
        for i in 0..n {
            stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(stage, k5);
        for i in 0..n {
            stage[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(stage, k6);
        for i in 0..n {
            self.y_new[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(&self.y_new, &mut self.dy_new);
        k7.copy_from_slice(&self.dy_new);

        // Stage 6 and the new state share the abscissa t + h.
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            num += (k7[i] - k6[i]).powi(2);
            den += (self.y_new[i] - stage[i]).powi(2);
        }
        self.rho = if den > 0.0 { (num / den).sqrt() } else { 0.0 };

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err_sq += e * e;
        }
        if !finite(&self.y_new) || !finite(&self.dy_new) || !err_sq.is_finite() {
            return Err(StepError::NonFinite { t: self.t + h });
        }
        let sk = self.scale(norm(&self.y).max(norm(&self.y_new)));
        Ok(err_sq.sqrt() / sk)
    }
}
