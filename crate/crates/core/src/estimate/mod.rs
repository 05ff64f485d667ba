//! Maximum-likelihood estimation: LMM and multi-state initialization, EM on
//! fixed quadrature grids, quasi-Newton refinement, observed information and
//! Wald inference.

mod em;
mod inference;
mod init;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::{JointDataset, ModelSpec, ParameterVector, Parameters};
use crate::likelihood::{build_workspaces, refresh_modes, total_loglik_grad, JointModel, SubjectWorkspace};
use crate::lmm::fit_lmm;
use crate::numerics::{gauss_hermite, QuadratureRule};
use crate::optim::{bfgs_minimize_from, max_norm, BfgsSettings, OptimReport};
use crate::simulate::KnotSpec;
use crate::{Error, Result};

pub use em::{closed_form_variances, em_iteration, EmStep};
pub use inference::{
    d_entries_jacobian, invert_information, observed_information, wald_p_value, wald_test, WaldTest,
};
pub use init::{default_knots, quantile_sorted};

/// Estimation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitControl {
    pub gh_order: usize,
    pub em_max: usize,
    /// EM stops once the relative log-likelihood change falls below this.
    pub em_tol: f64,
    /// Quasi-Newton iterations inside each M-step.
    pub em_inner: usize,
    pub qn_max: usize,
    /// Max-norm of the log-likelihood gradient at which quasi-Newton stops.
    pub qn_tol: f64,
    /// Iteration cap for the LMM and multi-state starting fits.
    pub init_max: usize,
    /// Fixed knots per baseline group; placed from the data when absent.
    pub knots: Option<Vec<KnotSpec>>,
    /// Skip the information matrix (no SEs).
    pub skip_vcov: bool,
}

impl Default for FitControl {
    fn default() -> Self {
        Self {
            gh_order: 9,
            em_max: 30,
            em_tol: 1e-4,
            em_inner: 3,
            qn_max: 500,
            qn_tol: 1e-5,
            init_max: 300,
            knots: None,
            skip_vcov: false,
        }
    }
}

/// One quasi-Newton pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: String,
    pub iterations: usize,
    pub loglik: f64,
    pub grad_max_norm: f64,
    pub converged: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub em_iterations: usize,
    pub qn_iterations: usize,
    pub grad_max_norm: f64,
    /// Log-likelihood at the start of every EM iteration.
    pub em_trace: Vec<f64>,
    pub phases: Vec<PhaseLog>,
    /// Subjects whose quadrature centre fell back to the prior.
    pub mode_fallbacks: usize,
}

/// One row of the estimates table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    /// `null` in JSON when unavailable.
    #[serde(deserialize_with = "null_as_nan")]
    pub se: f64,
    #[serde(deserialize_with = "null_as_nan")]
    pub p: f64,
}

fn null_as_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: ParameterVector,
    /// Row-major covariance of the packed parameters (empty when skipped).
    pub vcov: Vec<Vec<f64>>,
    pub loglik: f64,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Entries of D (lower triangle, row-wise) and σ with delta-method SEs.
    pub derived: Vec<ParameterRow>,
    pub convergence: Convergence,
    pub control: FitControl,
    pub knots: Vec<KnotSpec>,
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        let n = self.vcov.len();
        DMatrix::from_fn(n, n, |i, j| self.vcov[i][j])
    }

    pub fn table(&self) -> Vec<ParameterRow> {
        (0..self.theta_hat.values.len())
            .map(|i| ParameterRow {
                name: self.theta_hat.names[i].clone(),
                estimate: self.theta_hat.values[i],
                se: self.se.get(i).copied().unwrap_or(f64::NAN),
                p: self.p_values.get(i).copied().unwrap_or(f64::NAN),
            })
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.theta_hat.names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|i| self.theta_hat.values[i])
    }

    pub fn parameters(&self, model: &JointModel) -> Result<Parameters> {
        model.unpack(&self.theta_hat.values)
    }

    /// Rebuilds the model the fit was computed with.
    pub fn model(&self, dataset: &JointDataset, spec: &ModelSpec) -> Result<JointModel> {
        bind_model(dataset, spec, &self.knots)
    }

    /// Rebuilds model and workspaces with quadrature centres at the estimate.
    pub fn restore(&self, dataset: &JointDataset, spec: &ModelSpec) -> Result<FittedModel> {
        let model = self.model(dataset, spec)?;
        let mut workspaces = build_workspaces(&model, dataset)?;
        refresh_modes(&model, &self.theta_hat.values, &mut workspaces)?;
        Ok(FittedModel { result: self.clone(), model, workspaces })
    }

    pub fn wald_test(&self, contrast: &DMatrix<f64>, null: &[f64]) -> Result<WaldTest> {
        if self.vcov.is_empty() {
            return Err(Error::Validation("fit has no covariance matrix".into()));
        }
        wald_test(&self.theta_hat.values, &self.vcov_matrix(), contrast, null)
    }
}

/// A fit together with the model and the quadrature state at the estimate.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub result: FitResult,
    pub model: JointModel,
    pub workspaces: Vec<SubjectWorkspace>,
}

pub(crate) fn bind_model(dataset: &JointDataset, spec: &ModelSpec, knots: &[KnotSpec]) -> Result<JointModel> {
    if knots.len() != spec.baseline_groups.len() {
        return Err(Error::Dimension(format!(
            "{} knot sets for {} baseline groups",
            knots.len(),
            spec.baseline_groups.len()
        )));
    }
    let bases = knots.iter().map(|k| k.basis(spec.spline.degree)).collect::<Result<Vec<_>>>()?;
    JointModel::new(spec.clone(), dataset.topology.clone(), dataset.covariate_names.clone(), bases)
}

pub fn fit(dataset: &JointDataset, spec: &ModelSpec, control: &FitControl) -> Result<FitResult> {
    Ok(fit_detailed(dataset, spec, control)?.result)
}

/// Starting values: ML mixed model for (β, σ, D) and the multi-state
/// likelihood with η = 0 for the rest.
pub fn initial_values(
    model: &JointModel,
    dataset: &JointDataset,
    workspaces: &[SubjectWorkspace],
    control: &FitControl,
) -> Result<Vec<f64>> {
    let settings = BfgsSettings { max_iter: control.init_max, grad_tol: 1e-6, ..Default::default() };
    // finite-difference gradients: a start value does not need more
    let lmm_settings = BfgsSettings { grad_tol: 1e-3, f_rel_tol: 1e-12, ..settings };
    let lmm = fit_lmm(dataset, &model.spec, &lmm_settings)?;
    let lay = &model.layout;
    let mut values = vec![0.0; model.n_params()];
    values[lay.beta()].copy_from_slice(&lmm.beta);
    values[lay.log_sigma()] = lmm.log_sigma;
    values[lay.chol()].copy_from_slice(&lmm.d_cholesky);
    // a degenerate D makes the first E-step useless
    for r in 0..model.q() {
        let i = lay.chol().start + r * (r + 3) / 2;
        values[i] = values[i].max(-4.0);
    }
    let ms = init::init_multistate(model, dataset, workspaces, &mut values, &settings);
    log::info!(
        "multi-state start: loglik {:.4} after {} iterations ({})",
        -ms.f,
        ms.iterations,
        ms.message
    );
    if !ms.f.is_finite() {
        return Err(Error::Numerical("multi-state initialization failed".into()));
    }
    Ok(values)
}

fn quasi_newton(
    model: &JointModel,
    values: &[f64],
    workspaces: &[SubjectWorkspace],
    rule: &QuadratureRule<f64>,
    control: &FitControl,
    h0: Option<&DMatrix<f64>>,
) -> OptimReport {
    let settings = BfgsSettings {
        max_iter: control.qn_max,
        grad_tol: control.qn_tol,
        f_rel_tol: 0.0,
        max_step: 5.0,
    };
    bfgs_minimize_from(
        |x, g| match total_loglik_grad(model, x, workspaces, rule) {
            Ok((v, grad)) if v.is_finite() => {
                for (a, b) in g.iter_mut().zip(&grad) {
                    *a = -b;
                }
                -v
            }
            _ => f64::NAN,
        },
        values,
        &settings,
        h0,
    )
}

/// Inverse observed information as a starting metric, when it is positive definite.
fn start_metric(
    model: &JointModel,
    values: &[f64],
    workspaces: &[SubjectWorkspace],
    rule: &QuadratureRule<f64>,
) -> Option<DMatrix<f64>> {
    let info =
        observed_information(|x| total_loglik_grad(model, x, workspaces, rule).map(|r| r.1), values).ok()?;
    info.cholesky().map(|c| c.inverse())
}

/// Full pipeline; also returns the model and the workspaces (with quadrature
/// centres at the estimate) for prediction and diagnostics.
pub fn fit_detailed(dataset: &JointDataset, spec: &ModelSpec, control: &FitControl) -> Result<FittedModel> {
    let knots = match &control.knots {
        Some(k) => k.clone(),
        None => default_knots(dataset, spec)?,
    };
    let model = bind_model(dataset, spec, &knots)?;
    let mut workspaces = build_workspaces(&model, dataset)?;
    let rule = gauss_hermite::<f64>(control.gh_order)?;

    let mut values = initial_values(&model, dataset, &workspaces, control)?;
    refresh_modes(&model, &values, &mut workspaces)?;
    let (ll0, _) = total_loglik_grad(&model, &values, &workspaces, &rule)?;
    if !ll0.is_finite() {
        return Err(Error::Numerical("non-finite log-likelihood at the starting values".into()));
    }
    log::info!("starting loglik {ll0:.4}");

    let inner = BfgsSettings { max_iter: control.em_inner, grad_tol: 1e-8, ..Default::default() };
    let mut em_trace = Vec::new();
    let mut em_iterations = 0;
    let mut prev: Option<f64> = None;
    for _ in 0..control.em_max {
        let step = em_iteration(&model, &values, &workspaces, &rule, &inner)?;
        em_trace.push(step.loglik_before);
        if let Some(p) = prev {
            if (step.loglik_before - p).abs() <= control.em_tol * p.abs() {
                break;
            }
        }
        prev = Some(step.loglik_before);
        values = step.values;
        em_iterations += 1;
    }
    if let Some(l) = em_trace.last() {
        log::info!("EM: {em_iterations} iterations, loglik {l:.4}");
    }

    let mut phases = Vec::new();
    let mut qn_iterations = 0;
    let mut last: Option<OptimReport> = None;
    for pass in 0..2 {
        refresh_modes(&model, &values, &mut workspaces)?;
        let em_ll = total_loglik_grad(&model, &values, &workspaces, &rule)?.0;
        let h0 = match &last {
            Some(rep) => rep.inverse_hessian.clone(),
            None => start_metric(&model, &values, &workspaces, &rule),
        };
        let rep = quasi_newton(&model, &values, &workspaces, &rule, control, h0.as_ref());
        qn_iterations += rep.iterations;
        // keep whichever phase ended higher
        if rep.f.is_finite() && -rep.f >= em_ll {
            values = rep.x.clone();
        }
        log::info!(
            "quasi-Newton pass {}: {} iterations, loglik {:.6}, |g| {:.2e} ({})",
            pass + 1,
            rep.iterations,
            -rep.f,
            rep.grad_max_norm(),
            rep.message
        );
        phases.push(PhaseLog {
            phase: format!("qn{}", pass + 1),
            iterations: rep.iterations,
            loglik: -rep.f,
            grad_max_norm: rep.grad_max_norm(),
            converged: rep.converged,
            message: rep.message.clone(),
        });
        last = Some(rep);
    }
    let last = last.expect("two passes");
    let (loglik, grad) = total_loglik_grad(&model, &values, &workspaces, &rule)?;
    let fallbacks = workspaces.iter().filter(|w| w.mode_fallback).count();

    let mut flags = Vec::new();
    let converged = last.converged && max_norm(&grad) < control.qn_tol.max(1e-12) * 10.0;
    if !converged {
        flags.push("not_converged".to_string());
        log::warn!("optimizer did not reach the gradient tolerance: {}", last.message);
    }
    if fallbacks > 0 {
        flags.push(format!("mode_fallback:{fallbacks}"));
    }
    let lay = &model.layout;
    if values[lay.log_sigma()] < -9.0 {
        flags.push("sigma_boundary".to_string());
    }
    let q = model.q();
    if q > 0 {
        let d = model.unpack(&values)?.d_matrix(q);
        let eig = d.symmetric_eigen().eigenvalues;
        if eig.min() < 1e-8 * eig.max().max(1e-300) {
            flags.push("d_degenerate".to_string());
        }
    }

    let n = values.len();
    let (vcov, se) = if control.skip_vcov {
        (DMatrix::zeros(0, 0), vec![f64::NAN; n])
    } else {
        let info = observed_information(
            |x| total_loglik_grad(&model, x, &workspaces, &rule).map(|r| r.1),
            &values,
        )?;
        let (vcov, projected) = invert_information(&info);
        if projected {
            flags.push("vcov_projected".to_string());
        }
        let se = (0..n).map(|i| vcov[(i, i)].max(0.0).sqrt()).collect();
        (vcov, se)
    };
    let p_values: Vec<f64> = values.iter().zip(&se).map(|(v, s)| wald_p_value(*v, *s)).collect();
    let derived = derived_rows(&model, &values, &vcov);

    let result = FitResult {
        theta_hat: ParameterVector { values, names: lay.names.clone() },
        vcov: (0..vcov.nrows()).map(|i| vcov.row(i).iter().copied().collect()).collect(),
        loglik,
        se,
        p_values,
        derived,
        convergence: Convergence {
            converged,
            em_iterations,
            qn_iterations,
            grad_max_norm: max_norm(&grad),
            em_trace,
            phases,
            mode_fallbacks: fallbacks,
        },
        control: control.clone(),
        knots,
        flags,
    };
    Ok(FittedModel { result, model, workspaces })
}

/// σ and the entries of D with delta-method SEs.
fn derived_rows(model: &JointModel, values: &[f64], vcov: &DMatrix<f64>) -> Vec<ParameterRow> {
    let lay = &model.layout;
    let have = vcov.nrows() == values.len();
    let mut out = Vec::new();
    let ls = lay.log_sigma();
    let sigma = values[ls].exp();
    let se = if have { sigma * vcov[(ls, ls)].max(0.0).sqrt() } else { f64::NAN };
    out.push(ParameterRow { name: "sigma".into(), estimate: sigma, se, p: f64::NAN });
    let q = model.q();
    if q == 0 {
        return out;
    }
    let ch = lay.chol();
    let (d, jac) = d_entries_jacobian(&values[ch.clone()], q);
    let sub = if have { Some(vcov.view((ch.start, ch.start), (ch.len(), ch.len())).into_owned()) } else { None };
    let cov = sub.map(|s| &jac * s * jac.transpose());
    let mut k = 0;
    for r in 0..q {
        for c in 0..=r {
            let se = cov.as_ref().map_or(f64::NAN, |m| m[(k, k)].max(0.0).sqrt());
            out.push(ParameterRow {
                name: format!("D[{},{}]", r + 1, c + 1),
                estimate: d[k],
                se,
                p: wald_p_value(d[k], se),
            });
            k += 1;
        }
    }
    out
}
