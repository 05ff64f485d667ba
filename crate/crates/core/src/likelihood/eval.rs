use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::workspace::Point;
use super::{dot, JointModel, Prepared, SubjectWorkspace};
use crate::domain::Parameters;
use crate::numerics::{gauss_hermite, pseudo_adaptive_nodes, AdaptedGrid, QuadratureRule};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Linear predictor pieces at each evaluation point: `log λ = fix + a·b`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Linear {
    pub fix: Vec<f64>,
    pub a: Vec<f64>,
    pub lev: Vec<f64>,
    pub slo: Vec<f64>,
}

fn linear(model: &JointModel, th: &Prepared, ws: &SubjectWorkspace, pts: &[Point]) -> Linear {
    let q = model.q();
    let mut out = Linear {
        fix: Vec::with_capacity(pts.len()),
        a: Vec::with_capacity(pts.len() * q),
        lev: Vec::with_capacity(pts.len()),
        slo: Vec::with_capacity(pts.len()),
    };
    let beta = th.beta.as_slice();
    for p in pts {
        let k = p.trans;
        let coefs = &th.params.spline_coefs[model.layout.group_of[k]];
        let base: f64 = p.spl.iter().zip(&coefs[p.first..]).map(|(s, c)| s * c).sum();
        let lev = dot(&p.xl, beta);
        let slo = dot(&p.dx, beta);
        let (el, es) = (th.eta_l[k], th.eta_s[k]);
        out.fix
            .push(base + th.zeta[k] + dot(&ws.xs[k], &th.params.gamma) + el * lev + es * slo);
        for j in 0..q {
            out.a.push(el * p.z[j] + es * p.dz[j]);
        }
        out.lev.push(lev);
        out.slo.push(slo);
    }
    out
}

/// Per-subject quantities that depend on the parameters but not on `b`.
#[derive(Debug, Clone)]
pub(crate) struct SubjectTerms {
    pub cum: Linear,
    pub ev: Linear,
    /// `r = y − Xβ`
    pub rr: f64,
    pub ztr: DVector<f64>,
    pub xtr: DVector<f64>,
    /// Constant part of the marker and prior log-densities.
    pub konst: f64,
}

pub(crate) fn subject_terms(model: &JointModel, th: &Prepared, ws: &SubjectWorkspace) -> SubjectTerms {
    let r = &ws.y - &ws.x * &th.beta;
    let q = model.q() as f64;
    SubjectTerms {
        cum: linear(model, th, ws, &ws.cum),
        ev: linear(model, th, ws, &ws.events),
        rr: r.dot(&r),
        ztr: ws.z.transpose() * &r,
        xtr: ws.x.transpose() * &r,
        konst: -0.5 * ws.n_obs as f64 * (LN_2PI + th.sigma2.ln()) - 0.5 * q * LN_2PI
            - 0.5 * th.logdet_d,
    }
}

fn quad_form(m: &DMatrix<f64>, b: &[f64]) -> f64 {
    let q = b.len();
    let mut s = 0.0;
    for i in 0..q {
        for j in 0..q {
            s += b[i] * m[(i, j)] * b[j];
        }
    }
    s
}

fn vdot(v: &DVector<f64>, b: &[f64]) -> f64 {
    v.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum of squared marker residuals `‖r − Zb‖²`.
fn sq_resid(terms: &SubjectTerms, ws: &SubjectWorkspace, b: &[f64]) -> f64 {
    (terms.rr - 2.0 * vdot(&terms.ztr, b) + quad_form(&ws.ztz, b)).max(0.0)
}

pub(crate) fn log_longit(th: &Prepared, ws: &SubjectWorkspace, b: &DVector<f64>) -> f64 {
    let r = &ws.y - &ws.x * &th.beta - &ws.z * b;
    -0.5 * ws.n_obs as f64 * (LN_2PI + th.sigma2.ln()) - r.dot(&r) / (2.0 * th.sigma2)
}

pub(crate) fn log_mstate(model: &JointModel, th: &Prepared, ws: &SubjectWorkspace, b: &[f64]) -> f64 {
    let cum = linear(model, th, ws, &ws.cum);
    let ev = linear(model, th, ws, &ws.events);
    log_mstate_linear(&cum, &ev, &ws.cum, b).0
}

/// Returns `log f(E | b)` and writes nothing else; also the per-point intensities.
fn log_mstate_linear(cum: &Linear, ev: &Linear, pts: &[Point], b: &[f64]) -> (f64, Vec<f64>) {
    let q = b.len();
    let mut v = 0.0;
    for (i, f) in ev.fix.iter().enumerate() {
        v += f + dot(&ev.a[i * q..(i + 1) * q], b);
    }
    let mut lam = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let l = (cum.fix[i] + dot(&cum.a[i * q..(i + 1) * q], b)).exp();
        v -= p.w * l;
        lam.push(l);
    }
    (v, lam)
}

/// `log g(b) = log f(Y|b) + log f(E|b) + log f(b)` at every grid node, plus the
/// cumulative-point intensities (node-major).
fn node_logs(
    th: &Prepared,
    ws: &SubjectWorkspace,
    terms: &SubjectTerms,
    grid: &AdaptedGrid<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let nc = ws.cum.len();
    let n = grid.n_nodes();
    let mut lg = Vec::with_capacity(n);
    let mut lam = Vec::with_capacity(n * nc);
    for j in 0..n {
        let b = grid.node(j);
        let (le, l) = log_mstate_linear(&terms.cum, &terms.ev, &ws.cum, b);
        lam.extend_from_slice(&l);
        let v = terms.konst - sq_resid(terms, ws, b) / (2.0 * th.sigma2) - 0.5 * quad_form(&th.dinv, b)
            + le;
        lg.push(if v.is_nan() { f64::NEG_INFINITY } else { v });
    }
    (lg, lam)
}

pub(crate) fn grid_for(ws: &SubjectWorkspace, rule: &QuadratureRule<f64>) -> Result<AdaptedGrid<f64>> {
    pseudo_adaptive_nodes(rule, &ws.mode, &ws.scale)
}

/// Log-likelihood of one subject and its posterior node weights.
pub(crate) fn node_weights(
    model: &JointModel,
    th: &Prepared,
    ws: &SubjectWorkspace,
    rule: &QuadratureRule<f64>,
) -> Result<(f64, Vec<f64>)> {
    let terms = subject_terms(model, th, ws);
    let grid = grid_for(ws, rule)?;
    let (lg, _) = node_logs(th, ws, &terms, &grid);
    posterior(ws, &grid, &lg)
}

fn posterior(ws: &SubjectWorkspace, grid: &AdaptedGrid<f64>, lg: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tot: Vec<f64> = lg.iter().zip(&grid.log_weights).map(|(a, b)| a + b).collect();
    let ll = crate::numerics::log_sum_exp(&tot);
    if !ll.is_finite() {
        return Err(Error::Underflow { id: ws.id.clone() });
    }
    Ok((ll, tot.iter().map(|v| (v - ll).exp()).collect()))
}

/// Adds `Σ_n π_n ∇_θ log g(b_n)` to `grad` and returns the posterior moments.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    model: &JointModel,
    th: &Prepared,
    ws: &SubjectWorkspace,
    terms: &SubjectTerms,
    grid: &AdaptedGrid<f64>,
    pi: &[f64],
    lam: &[f64],
    grad: &mut [f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let q = model.q();
    let lay = &model.layout;
    let nc = ws.cum.len();
    let mut eb = DVector::zeros(q);
    let mut ebb = DMatrix::zeros(q, q);
    let mut elam = vec![0.0; nc];
    let mut elamb = vec![0.0; nc * q];
    for (j, &w) in pi.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let b = grid.node(j);
        for r in 0..q {
            eb[r] += w * b[r];
            for c in 0..q {
                ebb[(r, c)] += w * b[r] * b[c];
            }
        }
        let l = &lam[j * nc..(j + 1) * nc];
        for p in 0..nc {
            let wl = w * l[p];
            elam[p] += wl;
            for r in 0..q {
                elamb[p * q + r] += wl * b[r];
            }
        }
    }

    let s2 = th.sigma2;
    let g_beta = (&terms.xtr - &ws.xtz * &eb) / s2;
    for (i, v) in lay.beta().zip(g_beta.iter()) {
        grad[i] += v;
    }
    let e_sq = terms.rr - 2.0 * terms.ztr.dot(&eb) + (&ws.ztz * &ebb).trace();
    grad[lay.log_sigma()] += -(ws.n_obs as f64) + e_sq / s2;
    if q > 0 {
        let g = (&th.dinv * &ebb * &th.dinv - &th.dinv) * 0.5;
        let m = &g * &th.l * 2.0;
        let mut k = lay.chol().start;
        for r in 0..q {
            for c in 0..=r {
                grad[k] += if r == c { m[(r, c)] * th.l[(r, r)] } else { m[(r, c)] };
                k += 1;
            }
        }
    }

    for (i, p) in ws.cum.iter().enumerate() {
        let s = -p.w * elam[i];
        let sb: Vec<f64> = elamb[i * q..(i + 1) * q].iter().map(|v| -p.w * v).collect();
        point_grad(model, th, ws, p, terms.cum.lev[i], terms.cum.slo[i], s, &sb, grad);
    }
    for (i, p) in ws.events.iter().enumerate() {
        point_grad(model, th, ws, p, terms.ev.lev[i], terms.ev.slo[i], 1.0, eb.as_slice(), grad);
    }
    (eb, ebb)
}

/// Adds `s·∂fix/∂θ + ∂(a·b)/∂θ` evaluated with `E[b]`-like weights `sb`.
#[allow(clippy::too_many_arguments)]
fn point_grad(
    model: &JointModel,
    th: &Prepared,
    ws: &SubjectWorkspace,
    p: &Point,
    lev: f64,
    slo: f64,
    s: f64,
    sb: &[f64],
    grad: &mut [f64],
) {
    let lay = &model.layout;
    let k = p.trans;
    let (el, es) = (th.eta_l[k], th.eta_s[k]);
    let b0 = lay.beta().start;
    if el != 0.0 || es != 0.0 {
        for j in 0..lay.p {
            grad[b0 + j] += s * (el * p.xl[j] + es * p.dx[j]);
        }
    }
    let g0 = lay.gamma().start;
    for (j, x) in ws.xs[k].iter().enumerate() {
        grad[g0 + j] += s * x;
    }
    if let Some(z) = lay.zeta_index[k] {
        grad[lay.zeta().start + z] += s;
    }
    let (il, is) = lay.eta_index[k];
    if let Some(i) = il {
        grad[lay.eta().start + i] += s * lev + dot(&p.z, sb);
    }
    if let Some(i) = is {
        grad[lay.eta().start + i] += s * slo + dot(&p.dz, sb);
    }
    let sp = lay.spline(lay.group_of[k]).start + p.first;
    for (j, v) in p.spl.iter().enumerate() {
        grad[sp + j] += s * v;
    }
}

/// Pseudo-adaptive Gauss–Hermite log-likelihood of one subject.
pub fn subject_loglik(
    model: &JointModel,
    params: &Parameters,
    ws: &SubjectWorkspace,
    gh_order: usize,
) -> Result<f64> {
    let rule = gauss_hermite::<f64>(gh_order)?;
    let th = Prepared::from_params(model, params.clone())?;
    Ok(node_weights(model, &th, ws, &rule)?.0)
}

/// Sum of subject log-likelihoods, reduced in subject order.
pub fn total_loglik(
    model: &JointModel,
    params: &Parameters,
    workspaces: &[SubjectWorkspace],
    gh_order: usize,
) -> Result<f64> {
    let rule = gauss_hermite::<f64>(gh_order)?;
    let th = Prepared::from_params(model, params.clone())?;
    let parts: Vec<Result<f64>> = workspaces
        .par_iter()
        .map(|ws| node_weights(model, &th, ws, &rule).map(|r| r.0))
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Log-likelihood and its gradient with respect to the packed parameters,
/// holding the quadrature grids fixed.
pub fn total_loglik_grad(
    model: &JointModel,
    values: &[f64],
    workspaces: &[SubjectWorkspace],
    rule: &QuadratureRule<f64>,
) -> Result<(f64, Vec<f64>)> {
    let th = Prepared::new(model, values)?;
    let n = values.len();
    let parts: Vec<Result<(f64, Vec<f64>)>> = workspaces
        .par_iter()
        .map(|ws| {
            let terms = subject_terms(model, &th, ws);
            let grid = grid_for(ws, rule)?;
            let (lg, lam) = node_logs(&th, ws, &terms, &grid);
            let (ll, pi) = posterior(ws, &grid, &lg)?;
            let mut g = vec![0.0; n];
            accumulate(model, &th, ws, &terms, &grid, &pi, &lam, &mut g);
            Ok((ll, g))
        })
        .collect();
    reduce(parts, n)
}

fn reduce(parts: Vec<Result<(f64, Vec<f64>)>>, n: usize) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut grad = vec![0.0; n];
    for p in parts {
        let (v, g) = p?;
        total += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Expected complete-data log-likelihood `Σ_i Σ_n π_in log g_i(b_n; θ)` with
/// posterior weights `pis` held fixed, and its gradient.
pub(crate) fn q_function_grad(
    model: &JointModel,
    values: &[f64],
    workspaces: &[SubjectWorkspace],
    rule: &QuadratureRule<f64>,
    pis: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let th = Prepared::new(model, values)?;
    let n = values.len();
    let parts: Vec<Result<(f64, Vec<f64>)>> = workspaces
        .par_iter()
        .zip(pis)
        .map(|(ws, pi)| {
            let terms = subject_terms(model, &th, ws);
            let grid = grid_for(ws, rule)?;
            let (lg, lam) = node_logs(&th, ws, &terms, &grid);
            let mut v = 0.0;
            for (w, l) in pi.iter().zip(&lg) {
                if *w > 0.0 {
                    v += w * l;
                }
            }
            let mut g = vec![0.0; n];
            accumulate(model, &th, ws, &terms, &grid, pi, &lam, &mut g);
            Ok((v, g))
        })
        .collect();
    reduce(parts, n)
}

/// Posterior mean and second moment of `b` for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub loglik: f64,
    pub mean: DVector<f64>,
    pub second: DMatrix<f64>,
    /// `E‖y − Xβ − Zb‖²`
    pub sq_resid: f64,
}

pub fn posterior_moments(
    model: &JointModel,
    params: &Parameters,
    ws: &SubjectWorkspace,
    gh_order: usize,
) -> Result<PosteriorMoments> {
    let rule = gauss_hermite::<f64>(gh_order)?;
    let th = Prepared::from_params(model, params.clone())?;
    posterior_moments_prepared(model, &th, ws, &rule)
}

pub(crate) fn posterior_moments_prepared(
    model: &JointModel,
    th: &Prepared,
    ws: &SubjectWorkspace,
    rule: &QuadratureRule<f64>,
) -> Result<PosteriorMoments> {
    let terms = subject_terms(model, th, ws);
    let grid = grid_for(ws, rule)?;
    let (lg, _) = node_logs(th, ws, &terms, &grid);
    let (ll, pi) = posterior(ws, &grid, &lg)?;
    let q = model.q();
    let mut mean = DVector::zeros(q);
    let mut second = DMatrix::zeros(q, q);
    let mut sq = 0.0;
    for (j, &w) in pi.iter().enumerate() {
        let b = grid.node(j);
        for r in 0..q {
            mean[r] += w * b[r];
            for c in 0..q {
                second[(r, c)] += w * b[r] * b[c];
            }
        }
        sq += w * sq_resid(&terms, ws, b);
    }
    Ok(PosteriorMoments { loglik: ll, mean, second, sq_resid: sq })
}

/// Posterior mode of `b` and the Cholesky factor of the inverse negative Hessian there.
#[derive(Debug, Clone, PartialEq)]
pub struct EbMode {
    pub mode: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Objective `log g(b)`, its gradient and Hessian in `b`.
fn eb_objective(
    th: &Prepared,
    ws: &SubjectWorkspace,
    terms: &SubjectTerms,
    b: &DVector<f64>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let q = b.len();
    let bs = b.as_slice();
    let (le, lam) = log_mstate_linear(&terms.cum, &terms.ev, &ws.cum, bs);
    let v = terms.konst - sq_resid(terms, ws, bs) / (2.0 * th.sigma2) - 0.5 * quad_form(&th.dinv, bs)
        + le;
    let mut g = (&terms.ztr - &ws.ztz * b) / th.sigma2 - &th.dinv * b;
    let mut h = -&ws.ztz / th.sigma2 - &th.dinv;
    for i in 0..ws.events.len() {
        for r in 0..q {
            g[r] += terms.ev.a[i * q + r];
        }
    }
    for (i, p) in ws.cum.iter().enumerate() {
        let wl = p.w * lam[i];
        let a = &terms.cum.a[i * q..(i + 1) * q];
        for r in 0..q {
            g[r] -= wl * a[r];
            for c in 0..q {
                h[(r, c)] -= wl * a[r] * a[c];
            }
        }
    }
    (v, g, h)
}

fn scale_from_hessian(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let neg = -h;
    let inv = neg.cholesky()?.inverse();
    let l = inv.cholesky()?.l();
    l.iter().all(|v| v.is_finite()).then_some(l)
}

pub(crate) fn eb_mode_prepared(
    model: &JointModel,
    th: &Prepared,
    ws: &SubjectWorkspace,
    start: &DVector<f64>,
) -> EbMode {
    let q = model.q();
    let fallback = || EbMode {
        mode: DVector::zeros(q),
        scale: th.l.clone(),
        converged: false,
        iterations: 0,
    };
    if q == 0 {
        return EbMode { converged: true, ..fallback() };
    }
    let terms = subject_terms(model, th, ws);
    let mut b = if start.iter().all(|v| v.is_finite()) { start.clone() } else { DVector::zeros(q) };
    let (mut f, mut g, mut h) = eb_objective(th, ws, &terms, &b);
    if !f.is_finite() {
        b = DVector::zeros(q);
        (f, g, h) = eb_objective(th, ws, &terms, &b);
        if !f.is_finite() {
            return fallback();
        }
    }
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..200 {
        iterations = it;
        let gn = g.amax();
        if gn < 1e-9 * (1.0 + f.abs()).min(1e3) {
            converged = true;
            break;
        }
        let Some(chol) = (-&h).cholesky() else { break };
        let step = chol.solve(&g);
        // Newton decrement: squared distance to the mode in posterior-sd units
        let decrement = g.dot(&step);
        if decrement < 1e-20 {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let bn = &b + &step * t;
            let (fn_, gn_, hn) = eb_objective(th, ws, &terms, &bn);
            if fn_.is_finite() && fn_ >= f - 1e-12 * f.abs() {
                b = bn;
                f = fn_;
                g = gn_;
                h = hn;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || (step.amax() * t) < 1e-14 * (1.0 + b.amax()) {
            // a stalled search is fine once the predicted gain is below the rounding of f
            converged = g.amax() < 1e-6 || decrement < 1e-10 * (1.0 + f.abs());
            break;
        }
    }
    if !converged {
        return fallback();
    }
    match scale_from_hessian(&h) {
        Some(scale) => EbMode { mode: b, scale, converged: true, iterations },
        None => fallback(),
    }
}

/// Newton search for the posterior mode of `b`; falls back to the prior
/// (`b = 0`, scale `chol(D)`) with `converged = false` when it fails.
pub fn empirical_bayes_mode(
    model: &JointModel,
    params: &Parameters,
    ws: &SubjectWorkspace,
) -> Result<EbMode> {
    let th = Prepared::from_params(model, params.clone())?;
    Ok(eb_mode_prepared(model, &th, ws, &DVector::zeros(model.q())))
}

/// Recomputes every workspace's quadrature centre and scale at `values`.
/// Returns the number of subjects that fell back to the prior.
pub fn refresh_modes(model: &JointModel, values: &[f64], workspaces: &mut [SubjectWorkspace]) -> Result<usize> {
    let th = Prepared::new(model, values)?;
    let fallbacks: usize = workspaces
        .par_iter_mut()
        .map(|ws| {
            let start = ws.mode.clone();
            let m = eb_mode_prepared(model, &th, ws, &start);
            let m = if m.converged { m } else { eb_mode_prepared(model, &th, ws, &DVector::zeros(m.mode.len())) };
            ws.mode_fallback = !m.converged;
            ws.mode = m.mode;
            ws.scale = m.scale;
            usize::from(ws.mode_fallback)
        })
        .sum();
    if fallbacks > 0 {
        log::warn!("{fallbacks} subjects fell back to the prior for their quadrature centre");
    }
    Ok(fallbacks)
}

/// Multi-state log-likelihood with `η ≡ 0` (so `b` drops out) and its gradient
/// with respect to the packed parameters; only γ, ζ and spline entries are touched.
pub(crate) fn mstate_only_grad(
    model: &JointModel,
    values: &[f64],
    workspaces: &[SubjectWorkspace],
) -> Result<(f64, Vec<f64>)> {
    let th = Prepared::new(model, values)?;
    let n = values.len();
    let q = model.q();
    let zeros = vec![0.0; q];
    let parts: Vec<Result<(f64, Vec<f64>)>> = workspaces
        .par_iter()
        .map(|ws| {
            let cum = linear(model, &th, ws, &ws.cum);
            let ev = linear(model, &th, ws, &ws.events);
            let (v, lam) = log_mstate_linear(&cum, &ev, &ws.cum, &zeros);
            let mut g = vec![0.0; n];
            for (i, p) in ws.cum.iter().enumerate() {
                point_grad(model, &th, ws, p, 0.0, 0.0, -p.w * lam[i], &zeros, &mut g);
            }
            for p in &ws.events {
                point_grad(model, &th, ws, p, 0.0, 0.0, 1.0, &zeros, &mut g);
            }
            Ok((v, g))
        })
        .collect();
    reduce(parts, n)
}

/// Posterior moments of `b` on the subject's fixed grid under weights `pi`;
/// the residual term uses the β in `th`.
pub(crate) fn weighted_moments(
    model: &JointModel,
    th: &Prepared,
    ws: &SubjectWorkspace,
    rule: &QuadratureRule<f64>,
    pi: &[f64],
) -> Result<PosteriorMoments> {
    let terms = subject_terms(model, th, ws);
    let grid = grid_for(ws, rule)?;
    let q = model.q();
    let mut mean = DVector::zeros(q);
    let mut second = DMatrix::zeros(q, q);
    let mut sq = 0.0;
    for (j, &w) in pi.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let b = grid.node(j);
        for r in 0..q {
            mean[r] += w * b[r];
            for c in 0..q {
                second[(r, c)] += w * b[r] * b[c];
            }
        }
        sq += w * sq_resid(&terms, ws, b);
    }
    Ok(PosteriorMoments { loglik: f64::NAN, mean, second, sq_resid: sq })
}
