//! Joint observed log-likelihood: conditional marker density, conditional
//! multi-state density with time quadrature, Gaussian random-effects density,
//! and the outer pseudo-adaptive Gauss–Hermite integral.

mod eval;
mod workspace;

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::design::Designs;
use crate::domain::{unpack_slice, ModelSpec, ParameterLayout, Parameters, TransitionTopology};
use crate::numerics::BSplineBasis;
use crate::{Error, Result};

pub use eval::{
    empirical_bayes_mode, posterior_moments, refresh_modes, subject_loglik, total_loglik,
    total_loglik_grad, EbMode, PosteriorMoments,
};
pub(crate) use eval::{
    mstate_only_grad, node_weights, q_function_grad, weighted_moments,
};
pub use workspace::{build_workspaces, SubjectWorkspace};

/// A model specification bound to a topology, a covariate table layout and
/// fixed spline knots.
#[derive(Debug)]
pub struct JointModel {
    pub spec: ModelSpec,
    pub topology: TransitionTopology,
    pub layout: ParameterLayout,
    pub designs: Designs,
    /// One basis per baseline group.
    pub bases: Vec<BSplineBasis<f64>>,
    pub covariate_names: Vec<String>,
    /// Per transition: (γ slot, covariate column).
    gamma_map: Vec<Vec<(usize, usize)>>,
    clamp_warned: AtomicBool,
}

impl Clone for JointModel {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            topology: self.topology.clone(),
            layout: self.layout.clone(),
            designs: self.designs.clone(),
            bases: self.bases.clone(),
            covariate_names: self.covariate_names.clone(),
            gamma_map: self.gamma_map.clone(),
            clamp_warned: AtomicBool::new(self.clamp_warned.load(Ordering::Relaxed)),
        }
    }
}

impl JointModel {
    pub fn new(
        spec: ModelSpec,
        topology: TransitionTopology,
        covariate_names: Vec<String>,
        bases: Vec<BSplineBasis<f64>>,
    ) -> Result<Self> {
        let layout = ParameterLayout::new(&spec, &topology)?;
        let designs = Designs::new(&spec, &covariate_names)?;
        if bases.len() != spec.baseline_groups.len() {
            return Err(Error::Dimension(format!(
                "{} spline bases for {} baseline groups",
                bases.len(),
                spec.baseline_groups.len()
            )));
        }
        for (g, b) in bases.iter().enumerate() {
            if b.n_basis() != layout.spline_sizes[g] {
                return Err(Error::Dimension(format!(
                    "baseline group {} has {} basis functions, spec implies {}",
                    g + 1,
                    b.n_basis(),
                    layout.spline_sizes[g]
                )));
            }
        }
        let mut gamma_map = vec![Vec::new(); topology.n_transitions()];
        for (j, eff) in spec.transition_covariates.iter().enumerate() {
            let ci = covariate_names
                .iter()
                .position(|n| n == &eff.covariate)
                .ok_or_else(|| Error::UnknownCovariate(eff.covariate.clone()))?;
            for &t in &eff.transitions {
                gamma_map[t].push((j, ci));
            }
        }
        Ok(Self {
            spec,
            topology,
            layout,
            designs,
            bases,
            covariate_names,
            gamma_map,
            clamp_warned: AtomicBool::new(false),
        })
    }

    pub fn q(&self) -> usize {
        self.layout.q
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn unpack(&self, values: &[f64]) -> Result<Parameters> {
        unpack_slice(values, &self.layout)
    }

    /// Basis of transition `trans` evaluated at `t` (clamped into the knot span,
    /// with a single warning per model).
    pub(crate) fn spline_row(&self, trans: usize, t: f64, out: &mut [f64]) -> usize {
        let basis = &self.bases[self.layout.group_of[trans]];
        let (tc, clamped) = basis.clamp(t);
        if clamped && !self.clamp_warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "time {t} outside spline knot range [{}, {}]; clamping to the boundary",
                basis.lower(),
                basis.upper()
            );
        }
        basis.eval_nonzero(tc, out)
    }

    pub(crate) fn spline_width(&self) -> usize {
        self.spec.spline.degree + 1
    }

    /// `X^S γ` for a transition.
    pub(crate) fn gamma_term(&self, trans: usize, params: &Parameters, covs: &[f64]) -> f64 {
        self.gamma_map[trans].iter().map(|&(j, c)| params.gamma[j] * covs[c]).sum()
    }

    /// Per-transition γ design row (length `n_gamma`).
    pub(crate) fn gamma_row(&self, trans: usize, covs: &[f64]) -> Vec<f64> {
        let mut row = vec![0.0; self.layout.n_gamma];
        for &(j, c) in &self.gamma_map[trans] {
            row[j] += covs[c];
        }
        row
    }

    pub(crate) fn zeta_of(&self, trans: usize, params: &Parameters) -> f64 {
        self.layout.zeta_index[trans].map_or(0.0, |i| params.zeta[i])
    }

    pub(crate) fn eta_of(&self, trans: usize, params: &Parameters) -> (f64, f64) {
        let (l, s) = self.layout.eta_index[trans];
        (l.map_or(0.0, |i| params.eta[i]), s.map_or(0.0, |i| params.eta[i]))
    }

    /// True marker level `Y*(t) = X^L(t)ᵀβ + Z(t)ᵀb`.
    pub fn true_level(&self, params: &Parameters, b: &[f64], t: f64, covs: &[f64]) -> f64 {
        let mut x = vec![0.0; self.designs.p];
        let mut z = vec![0.0; self.designs.q];
        self.designs.fixed_row(t, covs, &mut x);
        self.designs.random_row(t, covs, &mut z);
        dot(&x, &params.beta) + dot(&z, b)
    }

    /// True marker slope `∂Y*(t)/∂t` from the derivative design.
    pub fn true_slope(&self, params: &Parameters, b: &[f64], t: f64, covs: &[f64]) -> Result<f64> {
        if self.spec.deriv.is_none() {
            return Err(Error::Spec("model has no derivative design".into()));
        }
        let mut x = vec![0.0; self.designs.p];
        let mut z = vec![0.0; self.designs.q];
        self.designs.deriv_fixed_row(t, covs, &mut x);
        self.designs.deriv_random_row(t, covs, &mut z);
        Ok(dot(&x, &params.beta) + dot(&z, b))
    }

    /// `log λ` of transition index `trans` at time `t`.
    pub fn log_intensity(
        &self,
        params: &Parameters,
        trans: usize,
        t: f64,
        b: &[f64],
        covs: &[f64],
    ) -> f64 {
        let mut spl = vec![0.0; self.spline_width()];
        let first = self.spline_row(trans, t, &mut spl);
        let coefs = &params.spline_coefs[self.layout.group_of[trans]];
        let mut v: f64 = spl.iter().zip(&coefs[first..]).map(|(a, c)| a * c).sum();
        v += self.zeta_of(trans, params) + self.gamma_term(trans, params, covs);
        let (el, es) = self.eta_of(trans, params);
        if el != 0.0 {
            v += el * self.true_level(params, b, t, covs);
        }
        if es != 0.0 {
            v += es * self.true_slope(params, b, t, covs).unwrap_or(0.0);
        }
        v
    }

    /// Intensity of the transition `h → k` at time `t` given random effects `b`.
    pub fn transition_intensity(
        &self,
        params: &Parameters,
        h: usize,
        k: usize,
        t: f64,
        b: &[f64],
        covs: &[f64],
    ) -> Result<f64> {
        let trans = self
            .topology
            .index_of(h, k)
            .ok_or(Error::TransitionNotAllowed { id: String::new(), from: h, to: k })?;
        Ok(self.log_intensity(params, trans, t, b, covs).exp())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameter-dependent quantities shared by every subject evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub params: Parameters,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub l: DMatrix<f64>,
    pub dinv: DMatrix<f64>,
    pub logdet_d: f64,
    pub eta_l: Vec<f64>,
    pub eta_s: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl Prepared {
    pub fn new(model: &JointModel, values: &[f64]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let params = model.unpack(values)?;
        Self::from_params(model, params)
    }

    pub fn from_params(model: &JointModel, params: Parameters) -> Result<Self> {
        let q = model.q();
        let l = params.cholesky_factor(q);
        let mut logdet_d = 0.0;
        for i in 0..q {
            logdet_d += 2.0 * l[(i, i)].ln();
        }
        let linv = l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(q, q))
            .ok_or_else(|| Error::Singular("Cholesky factor of D".into()))?;
        let dinv = linv.transpose() * &linv;
        if !logdet_d.is_finite() || dinv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("D".into()));
        }
        let k = model.topology.n_transitions();
        let mut eta_l = vec![0.0; k];
        let mut eta_s = vec![0.0; k];
        let mut zeta = vec![0.0; k];
        for t in 0..k {
            (eta_l[t], eta_s[t]) = model.eta_of(t, &params);
            zeta[t] = model.zeta_of(t, &params);
        }
        Ok(Self {
            beta: DVector::from_column_slice(&params.beta),
            sigma2: (2.0 * params.log_sigma).exp(),
            l,
            dinv,
            logdet_d,
            eta_l,
            eta_s,
            zeta,
            params,
        })
    }
}

/// Conditional marker log-density `log f(Y_i | b)`.
pub fn conditional_longit_logdensity(
    model: &JointModel,
    params: &Parameters,
    ws: &SubjectWorkspace,
    b: &[f64],
) -> Result<f64> {
    let th = Prepared::from_params(model, params.clone())?;
    Ok(eval::log_longit(&th, ws, &DVector::from_column_slice(b)))
}

/// Conditional multi-state log-density `log f(E_i | b)`.
pub fn conditional_mstate_logdensity(
    model: &JointModel,
    params: &Parameters,
    ws: &SubjectWorkspace,
    b: &[f64],
) -> Result<f64> {
    let th = Prepared::from_params(model, params.clone())?;
    let v = eval::log_mstate(model, &th, ws, b);
    if v.is_nan() {
        return Err(Error::NonFinite(format!("multi-state density of subject {}", ws.id)));
    }
    Ok(v)
}

/// Gaussian random-effects log-density `log f(b)` with `D` from `params`.
pub fn random_effects_logdensity(params: &Parameters, q: usize, b: &[f64]) -> Result<f64> {
    let d = params.d_matrix(q);
    let chol = d.cholesky().ok_or_else(|| Error::Singular("D".into()))?;
    let bv = DVector::from_column_slice(b);
    let sol = chol.solve(&bv);
    let logdet: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    Ok(-0.5 * q as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * bv.dot(&sol))
}
