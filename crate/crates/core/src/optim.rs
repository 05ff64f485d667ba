//! Quasi-Newton minimization.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsSettings {
    pub max_iter: usize,
    /// Convergence when the max-norm of the gradient drops below this.
    pub grad_tol: f64,
    /// Also stop when the relative objective change stays below this for two steps.
    pub f_rel_tol: f64,
    /// Cap on the Euclidean length of a single step.
    pub max_step: f64,
}

impl Default for BfgsSettings {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6, f_rel_tol: 0.0, max_step: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
    /// Final inverse-Hessian approximation.
    pub inverse_hessian: Option<DMatrix<f64>>,
}

impl OptimReport {
    pub fn grad_max_norm(&self) -> f64 {
        max_norm(&self.grad)
    }
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Central-difference gradient with step `h · max(1, |x_j|)`.
pub fn central_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let hj = h * x[j].abs().max(1.0);
            xp[j] = x[j] + hj;
            let fp = f(&xp);
            xp[j] = x[j] - hj;
            let fm = f(&xp);
            xp[j] = x[j];
            (fp - fm) / (2.0 * hj)
        })
        .collect()
}

/// Minimizes `f`, where `fg(x, g)` returns `f(x)` and writes its gradient into `g`.
/// Non-finite objective values are treated as infeasible and shrink the step.
pub fn bfgs_minimize<F>(fg: F, x0: &[f64], settings: &BfgsSettings) -> OptimReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    bfgs_minimize_from(fg, x0, settings, None)
}

/// As [`bfgs_minimize`], starting from the inverse-Hessian guess `h0`
/// (identity when `None`).
pub fn bfgs_minimize_from<F>(
    mut fg: F,
    x0: &[f64],
    settings: &BfgsSettings,
    h0: Option<&DMatrix<f64>>,
) -> OptimReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut g = vec![0.0; n];
    let mut f = fg(x.as_slice(), &mut g);
    let report = |x: &DVector<f64>, f: f64, g: &[f64], it: usize, ok: bool, msg: &str, h: Option<&DMatrix<f64>>| {
        OptimReport {
            x: x.as_slice().to_vec(),
            f,
            grad: g.to_vec(),
            iterations: it,
            converged: ok,
            message: msg.to_string(),
            inverse_hessian: h.cloned(),
        }
    };
    if !f.is_finite() {
        return report(&x, f, &g, 0, false, "non-finite objective at start", None);
    }
    if n == 0 {
        return report(&x, f, &g, 0, true, "empty parameter vector", None);
    }
    let start = match h0 {
        Some(h) if h.nrows() == n && h.ncols() == n && h.iter().all(|v| v.is_finite()) => Some(h.clone()),
        _ => None,
    };
    let reset = start.clone().unwrap_or_else(|| DMatrix::identity(n, n));
    let mut hinv = reset.clone();
    let mut scaled = start.is_some();
    let mut small_changes = 0;
    let mut failures = 0;
    let mut g_new = vec![0.0; n];
    for it in 0..settings.max_iter {
        if max_norm(&g) < settings.grad_tol {
            return report(&x, f, &g, it, true, "gradient tolerance reached", Some(&hinv));
        }
        let gv = DVector::from_column_slice(&g);
        let mut d = -(&hinv * &gv);
        let mut slope = d.dot(&gv);
        if slope >= 0.0 {
            hinv = reset.clone();
            d = -(&hinv * &gv);
            slope = d.dot(&gv);
            if slope >= 0.0 {
                hinv = DMatrix::identity(n, n);
                d = -gv.clone();
                slope = d.dot(&gv);
            }
        }
        let len = d.norm();
        if len > settings.max_step {
            d *= settings.max_step / len;
            slope *= settings.max_step / len;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * step;
            let fn_ = fg(xn.as_slice(), &mut g_new);
            if fn_.is_finite() && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            // below the rounding level of f, judge the step by the slope instead
            let noise = 1e-11 * f.abs().max(1.0);
            if fn_.is_finite() && fn_ <= f + noise && -slope * step < 10.0 * noise {
                let slope_new: f64 = g_new.iter().zip(d.iter()).map(|(a, b)| a * b).sum();
                if slope_new >= 0.9 * slope && slope_new <= -0.5 * slope {
                    accepted = Some((xn, fn_));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            failures += 1;
            if failures == 1 && hinv != reset {
                hinv = reset.clone();
                scaled = start.is_some();
                continue;
            }
            if failures <= 2 && hinv != DMatrix::identity(n, n) {
                hinv = DMatrix::identity(n, n);
                scaled = false;
                continue;
            }
            return report(&x, f, &g, it, false, "line search failed", Some(&hinv));
        };
        failures = 0;
        let s = &xn - &x;
        let y = DVector::from_column_slice(&g_new) - &gv;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if !scaled {
                hinv *= sy / y.dot(&y);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let rel = (f - fn_).abs() / f.abs().max(1.0);
        x = xn;
        f = fn_;
        g.copy_from_slice(&g_new);
        if settings.f_rel_tol > 0.0 && rel < settings.f_rel_tol {
            small_changes += 1;
            if small_changes >= 2 {
                return report(&x, f, &g, it + 1, true, "relative objective change below tolerance", Some(&hinv));
            }
        } else {
            small_changes = 0;
        }
    }
    let ok = max_norm(&g) < settings.grad_tol;
    report(&x, f, &g, settings.max_iter, ok, "iteration limit reached", Some(&hinv))
}
