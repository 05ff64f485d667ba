use nalgebra::DMatrix;
use rayon::prelude::*;

use super::init::maximize_subset;
use crate::domain::packed_from_d;
use crate::likelihood::{node_weights, q_function_grad, weighted_moments, JointModel, Prepared, SubjectWorkspace};
use crate::numerics::QuadratureRule;
use crate::optim::BfgsSettings;
use crate::Result;

/// Outcome of one EM iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EmStep {
    pub values: Vec<f64>,
    /// Log-likelihood at the input parameters (from the E-step).
    pub loglik_before: f64,
}

/// One generalized EM iteration on the fixed quadrature grids.
///
/// E-step: posterior node weights per subject. M-step: a few quasi-Newton
/// steps on the expected complete-data log-likelihood over β and the
/// multi-state parameters, then σ² and D in closed form at the new β.
pub fn em_iteration(
    model: &JointModel,
    values: &[f64],
    workspaces: &[SubjectWorkspace],
    rule: &QuadratureRule<f64>,
    inner: &BfgsSettings,
) -> Result<EmStep> {
    let th = Prepared::new(model, values)?;
    let estep: Vec<Result<(f64, Vec<f64>)>> =
        workspaces.par_iter().map(|ws| node_weights(model, &th, ws, rule)).collect();
    let mut loglik = 0.0;
    let mut pis = Vec::with_capacity(workspaces.len());
    for r in estep {
        let (ll, pi) = r?;
        loglik += ll;
        pis.push(pi);
    }

    let lay = &model.layout;
    let mut next = values.to_vec();
    let free: Vec<usize> = lay.beta().chain(lay.survival()).collect();
    if inner.max_iter > 0 {
        maximize_subset(&mut next, &free, inner, |x| q_function_grad(model, x, workspaces, rule, &pis));
    }

    let th = Prepared::new(model, &next)?;
    let moments: Vec<_> = workspaces
        .par_iter()
        .zip(&pis)
        .map(|(ws, pi)| weighted_moments(model, &th, ws, rule, pi))
        .collect::<Result<_>>()?;
    let (sigma2, d) = closed_form_variances(
        moments.iter().map(|m| (m.sq_resid, &m.second)),
        workspaces.iter().map(|ws| ws.n_obs),
        model.q(),
    );
    next[lay.log_sigma()] = 0.5 * sigma2.ln();
    if model.q() > 0 {
        let packed = packed_from_d(&d)?;
        next[lay.chol()].copy_from_slice(&packed);
    }
    Ok(EmStep { values: next, loglik_before: loglik })
}

/// σ² = Σ E‖r − Zb‖² / Σ nᵢ and D = mean of E[bbᵀ].
pub fn closed_form_variances<'a>(
    moments: impl Iterator<Item = (f64, &'a DMatrix<f64>)>,
    n_obs: impl Iterator<Item = usize>,
    q: usize,
) -> (f64, DMatrix<f64>) {
    let mut sq = 0.0;
    let mut d = DMatrix::zeros(q, q);
    let mut n = 0usize;
    for (s, second) in moments {
        sq += s;
        d += second;
        n += 1;
    }
    let nobs: usize = n_obs.sum();
    (sq / nobs as f64, d / n as f64)
}
