//! Linear mixed sub-model fitted alone by maximum likelihood.

use nalgebra::{DMatrix, DVector};

use crate::design::Designs;
use crate::domain::{JointDataset, ModelSpec};
use crate::optim::{bfgs_minimize, central_gradient, BfgsSettings};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Marker data of one subject.
#[derive(Debug, Clone)]
pub struct LmmSubject {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Design matrices for every subject with at least one measurement.
pub fn lmm_data(dataset: &JointDataset, spec: &ModelSpec) -> Result<Vec<LmmSubject>> {
    let d = Designs::new(spec, &dataset.covariate_names)?;
    let mut xr = vec![0.0; d.p];
    let mut zr = vec![0.0; d.q];
    Ok(dataset
        .subjects
        .iter()
        .filter(|s| !s.longitudinal.is_empty())
        .map(|s| {
            let n = s.longitudinal.len();
            let mut x = DMatrix::zeros(n, d.p);
            let mut z = DMatrix::zeros(n, d.q);
            let mut y = DVector::zeros(n);
            for (i, r) in s.longitudinal.iter().enumerate() {
                d.fixed_row(r.t, &r.covariates, &mut xr);
                d.random_row(r.t, &r.covariates, &mut zr);
                x.row_mut(i).copy_from_slice(&xr);
                z.row_mut(i).copy_from_slice(&zr);
                y[i] = r.y;
            }
            LmmSubject { x, z, y }
        })
        .collect())
}

fn chol_from(packed: &[f64], q: usize) -> DMatrix<f64> {
    crate::domain::Parameters {
        beta: vec![],
        log_sigma: 0.0,
        d_cholesky: packed.to_vec(),
        gamma: vec![],
        zeta: vec![],
        eta: vec![],
        spline_coefs: vec![],
    }
    .cholesky_factor(q)
}

/// Pieces of the Woodbury form `V⁻¹ = σ⁻²(I − U M⁻¹ Uᵀ)`, `U = Z L`, `M = σ²I + UᵀU`.
struct Marginal {
    u: DMatrix<f64>,
    m_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    sigma2: f64,
    logdet_v: f64,
}

fn marginal(s: &LmmSubject, l: &DMatrix<f64>, sigma2: f64) -> Result<Marginal> {
    let q = l.nrows();
    let n = s.y.len();
    let u = &s.z * l;
    let m = DMatrix::identity(q, q) * sigma2 + u.transpose() * &u;
    let m_chol = m.cholesky().ok_or_else(|| Error::Singular("marginal covariance".into()))?;
    let logdet_m: f64 = m_chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    // det V = σ^{2n} det(I + UᵀU/σ²) = σ^{2(n−q)} det M
    let logdet_v = (n as f64 - q as f64) * sigma2.ln() + logdet_m;
    if !logdet_v.is_finite() {
        return Err(Error::Singular("marginal covariance".into()));
    }
    Ok(Marginal { u, m_chol, sigma2, logdet_v })
}

impl Marginal {
    fn vinv_mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let uta = self.u.transpose() * a;
        (a - &self.u * self.m_chol.solve(&uta)) / self.sigma2
    }
}

/// `Σ_i log N(y_i; X_iβ, Z_i D Z_iᵀ + σ²I)`.
pub fn lmm_marginal_loglik(
    beta: &[f64],
    log_sigma: f64,
    d_cholesky: &[f64],
    data: &[LmmSubject],
) -> Result<f64> {
    let b = DVector::from_column_slice(beta);
    let q = data.first().map_or(0, |s| s.z.ncols());
    let l = chol_from(d_cholesky, q);
    let sigma2 = (2.0 * log_sigma).exp();
    let mut total = 0.0;
    for s in data {
        let mg = marginal(s, &l, sigma2)?;
        let r = DMatrix::from_column_slice(s.y.len(), 1, (&s.y - &s.x * &b).as_slice());
        let quad = (r.transpose() * mg.vinv_mul(&r))[(0, 0)];
        total += -0.5 * (s.y.len() as f64 * LN_2PI + mg.logdet_v + quad);
    }
    Ok(total)
}

/// Generalized-least-squares `β̂` given `(σ, D)`.
pub fn gls_beta(log_sigma: f64, d_cholesky: &[f64], data: &[LmmSubject]) -> Result<Vec<f64>> {
    let p = data.first().map_or(0, |s| s.x.ncols());
    let q = data.first().map_or(0, |s| s.z.ncols());
    let l = chol_from(d_cholesky, q);
    let sigma2 = (2.0 * log_sigma).exp();
    let mut a = DMatrix::zeros(p, p);
    let mut c = DVector::zeros(p);
    for s in data {
        let mg = marginal(s, &l, sigma2)?;
        let vx = mg.vinv_mul(&s.x);
        a += s.x.transpose() * &vx;
        c += vx.transpose() * &s.y;
    }
    let sol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("GLS normal equations".into()))?
        .solve(&c);
    Ok(sol.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmmFit {
    pub beta: Vec<f64>,
    pub log_sigma: f64,
    pub d_cholesky: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// σ or a Cholesky diagonal collapsed towards zero.
    pub boundary: bool,
}

/// Quasi-Newton ML fit with `β` profiled out by GLS.
pub fn fit_lmm(dataset: &JointDataset, spec: &ModelSpec, settings: &BfgsSettings) -> Result<LmmFit> {
    let data = lmm_data(dataset, spec)?;
    fit_lmm_data(&data, settings)
}

pub fn fit_lmm_data(data: &[LmmSubject], settings: &BfgsSettings) -> Result<LmmFit> {
    let p = data.first().map_or(0, |s| s.x.ncols());
    let q = data.first().map_or(0, |s| s.z.ncols());
    let n_obs: usize = data.iter().map(|s| s.y.len()).sum();
    let nc = q * (q + 1) / 2;
    if n_obs < p + nc + 1 {
        return Err(Error::Validation(format!(
            "{n_obs} observations are too few for {} variance and {p} mean parameters",
            nc + 1
        )));
    }
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = DVector::zeros(p);
    for s in data {
        xtx += s.x.transpose() * &s.x;
        xty += s.x.transpose() * &s.y;
    }
    let ols = xtx
        .cholesky()
        .ok_or_else(|| Error::Singular("fixed-effects design is rank deficient".into()))?
        .solve(&xty);
    let rss: f64 = data.iter().map(|s| (&s.y - &s.x * &ols).norm_squared()).sum();
    let sd = (rss / (n_obs.saturating_sub(p).max(1)) as f64).sqrt().max(1e-8);

    let mut x0 = vec![sd.ln()];
    for r in 0..q {
        for c in 0..=r {
            x0.push(if r == c { 0.5 * 0.1f64.ln() } else { 0.0 });
        }
    }
    let objective = |v: &[f64]| -> f64 {
        if v.iter().any(|x| !x.is_finite() || *x < -30.0) {
            return f64::NAN;
        }
        gls_beta(v[0], &v[1..], data)
            .and_then(|b| lmm_marginal_loglik(&b, v[0], &v[1..], data))
            .map_or(f64::NAN, |ll| -ll)
    };
    let report = bfgs_minimize(
        |v, g| {
            let f = objective(v);
            if f.is_finite() {
                g.copy_from_slice(&central_gradient(objective, v, 1e-5));
            }
            f
        },
        &x0,
        settings,
    );
    let v = &report.x;
    let beta = gls_beta(v[0], &v[1..], data)?;
    let mut boundary = v[0] < -9.0;
    let mut k = 1;
    for r in 0..q {
        for c in 0..=r {
            if r == c && v[k] < -9.0 {
                boundary = true;
            }
            k += 1;
        }
    }
    Ok(LmmFit {
        beta,
        log_sigma: v[0],
        d_cholesky: v[1..].to_vec(),
        loglik: -report.f,
        converged: report.converged,
        iterations: report.iterations,
        grad_norm: report.grad_max_norm(),
        boundary,
    })
}
