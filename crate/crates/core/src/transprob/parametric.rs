use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Parameters;
use crate::likelihood::{JointModel, SubjectWorkspace};
use crate::{Error, Result};

/// Where individual predictions take the random effects from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BSource {
    /// The empirical-Bayes mode stored in the subject's workspace.
    #[default]
    EmpiricalBayes,
    Zero,
}

/// Intensity matrix at `t`: `λ_hk` off the diagonal, rows summing to zero.
pub fn generator_matrix(model: &JointModel, params: &Parameters, t: f64, b: &[f64], covs: &[f64]) -> DMatrix<f64> {
    let m = model.topology.n_states();
    let mut q = DMatrix::zeros(m, m);
    for (tr, &(h, k)) in model.topology.transitions().iter().enumerate() {
        let l = model.log_intensity(params, tr, t, b, covs).exp();
        q[(h, k)] = l;
        q[(h, h)] -= l;
    }
    q
}

/// `P(s, t_j)` for ascending `times ≥ s`, multiplying `exp(Q(mid)·Δ)` over
/// uniform cells; the span `(s, max t]` gets about `grid_size` cells in total.
pub fn parametric_path(
    model: &JointModel,
    params: &Parameters,
    b: &[f64],
    covs: &[f64],
    s: f64,
    times: &[f64],
    grid_size: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < s) {
        return Err(Error::Validation("prediction times must be ascending and not before s".into()));
    }
    if grid_size == 0 {
        return Err(Error::Validation("grid size must be positive".into()));
    }
    let m = model.topology.n_states();
    let span = times.last().map_or(0.0, |&t| t - s);
    let mut p = DMatrix::identity(m, m);
    let mut out = Vec::with_capacity(times.len());
    let mut a = s;
    for &t in times {
        if t > a {
            let cells = ((grid_size as f64 * (t - a) / span).ceil() as usize).max(1);
            let h = (t - a) / cells as f64;
            for c in 0..cells {
                let mid = a + (c as f64 + 0.5) * h;
                let q = generator_matrix(model, params, mid, b, covs) * h;
                p = &p * q.exp();
            }
            a = t;
        }
        out.push(p.clone());
    }
    Ok(out)
}

fn subject_b(ws: &SubjectWorkspace, source: BSource) -> Vec<f64> {
    match source {
        BSource::EmpiricalBayes => ws.mode.as_slice().to_vec(),
        BSource::Zero => vec![0.0; ws.mode.len()],
    }
}

/// Model-based `P̂ⁱ(s, t)` for one subject.
pub fn parametric_transprob_individual(
    model: &JointModel,
    params: &Parameters,
    ws: &SubjectWorkspace,
    source: BSource,
    s: f64,
    t: f64,
    grid_size: usize,
) -> Result<DMatrix<f64>> {
    if t < s {
        return Err(Error::Validation(format!("prediction needs s <= t (got {s} > {t})")));
    }
    let b = subject_b(ws, source);
    Ok(parametric_path(model, params, &b, &ws.covariates, s, &[t], grid_size)?.remove(0))
}

/// Mean of the individual matrices over `workspaces`, at each of `times`.
pub fn parametric_transprob_average(
    model: &JointModel,
    params: &Parameters,
    workspaces: &[SubjectWorkspace],
    source: BSource,
    s: f64,
    times: &[f64],
    grid_size: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let m = model.topology.n_states();
    if workspaces.is_empty() {
        return Err(Error::Validation("no subjects to average over".into()));
    }
    let paths: Vec<Result<Vec<DMatrix<f64>>>> = workspaces
        .par_iter()
        .map(|ws| parametric_path(model, params, &subject_b(ws, source), &ws.covariates, s, times, grid_size))
        .collect();
    let mut acc = vec![DMatrix::zeros(m, m); times.len()];
    for p in paths {
        for (a, x) in acc.iter_mut().zip(p?) {
            *a += x;
        }
    }
    let n = workspaces.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}
