use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::JointModel;
use crate::domain::{JointDataset, Subject};
use crate::numerics::{gauss7_panel, kronrod15_panel};
use crate::Result;

/// A time at which an intensity is evaluated: a quadrature node of a
/// cumulative-intensity integral (`w > 0`) or an observed transition (`w = 0`).
#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub trans: usize,
    pub w: f64,
    pub first: usize,
    pub spl: Vec<f64>,
    pub xl: Vec<f64>,
    pub z: Vec<f64>,
    pub dx: Vec<f64>,
    pub dz: Vec<f64>,
}

/// Everything a subject contributes to the likelihood, precomputed once.
#[derive(Debug, Clone)]
pub struct SubjectWorkspace {
    pub id: String,
    pub covariates: Vec<f64>,
    pub n_obs: usize,
    pub(crate) x: DMatrix<f64>,
    pub(crate) z: DMatrix<f64>,
    pub(crate) y: DVector<f64>,
    pub(crate) xtz: DMatrix<f64>,
    pub(crate) ztz: DMatrix<f64>,
    pub(crate) cum: Vec<Point>,
    pub(crate) events: Vec<Point>,
    /// γ design row per transition.
    pub(crate) xs: Vec<Vec<f64>>,
    /// Centre of the Gauss–Hermite grid.
    pub mode: DVector<f64>,
    /// Lower-triangular scale of the Gauss–Hermite grid.
    pub scale: DMatrix<f64>,
    /// Set when the empirical-Bayes search fell back to the prior.
    pub mode_fallback: bool,
}

impl SubjectWorkspace {
    pub fn new(model: &JointModel, subject: &Subject) -> Result<Self> {
        let (p, q) = (model.designs.p, model.designs.q);
        let n = subject.longitudinal.len();
        let mut x = DMatrix::zeros(n, p);
        let mut z = DMatrix::zeros(n, q);
        let mut y = DVector::zeros(n);
        let mut xr = vec![0.0; p];
        let mut zr = vec![0.0; q];
        for (i, rec) in subject.longitudinal.iter().enumerate() {
            model.designs.fixed_row(rec.t, &rec.covariates, &mut xr);
            model.designs.random_row(rec.t, &rec.covariates, &mut zr);
            for j in 0..p {
                x[(i, j)] = xr[j];
            }
            for j in 0..q {
                z[(i, j)] = zr[j];
            }
            y[i] = rec.y;
        }
        let covs = subject.baseline_covariates().to_vec();
        let k = model.topology.n_transitions();
        let xs = (0..k).map(|t| model.gamma_row(t, &covs)).collect();

        let quad = &model.spec.quadrature;
        let mut cum = Vec::new();
        let mut events = Vec::new();
        for (h, t0, t1, next) in subject.history.sojourns() {
            for &tr in model.topology.outgoing(h) {
                let width = (t1 - t0) / quad.gk_panels as f64;
                for panel in 0..quad.gk_panels {
                    let a = t0 + width * panel as f64;
                    let b = if panel + 1 == quad.gk_panels { t1 } else { a + width };
                    let (nodes, weights): (Vec<f64>, Vec<f64>) = if quad.gk_order == 7 {
                        let (n, w) = gauss7_panel(a, b);
                        (n.to_vec(), w.to_vec())
                    } else {
                        let (n, w) = kronrod15_panel(a, b);
                        (n.to_vec(), w.to_vec())
                    };
                    for (t, w) in nodes.into_iter().zip(weights) {
                        cum.push(make_point(model, tr, t, w, &covs));
                    }
                }
            }
            if let Some(nk) = next {
                let tr = model.topology.index_of(h, nk).expect("validated transition");
                events.push(make_point(model, tr, t1, 0.0, &covs));
            }
        }

        let d = DMatrix::identity(q, q);
        Ok(Self {
            id: subject.id.clone(),
            n_obs: n,
            xtz: x.transpose() * &z,
            ztz: z.transpose() * &z,
            x,
            z,
            y,
            cum,
            events,
            xs,
            covariates: covs,
            mode: DVector::zeros(q),
            scale: d,
            mode_fallback: false,
        })
    }

    /// Marker residuals `y − Xβ` for the given fixed effects.
    pub fn marker_residuals(&self, beta: &[f64]) -> DVector<f64> {
        &self.y - &self.x * DVector::from_column_slice(beta)
    }

    /// Random-effects design matrix rows at the measurement times.
    pub fn random_design(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn fixed_design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }
}

fn make_point(model: &JointModel, trans: usize, t: f64, w: f64, covs: &[f64]) -> Point {
    let (p, q) = (model.designs.p, model.designs.q);
    let mut spl = vec![0.0; model.spline_width()];
    let first = model.spline_row(trans, t, &mut spl);
    let mut xl = vec![0.0; p];
    let mut z = vec![0.0; q];
    let mut dx = vec![0.0; p];
    let mut dz = vec![0.0; q];
    model.designs.fixed_row(t, covs, &mut xl);
    model.designs.random_row(t, covs, &mut z);
    if model.spec.deriv.is_some() {
        model.designs.deriv_fixed_row(t, covs, &mut dx);
        model.designs.deriv_random_row(t, covs, &mut dz);
    }
    Point { trans, w, first, spl, xl, z, dx, dz }
}

/// Workspaces for every subject, in dataset order.
pub fn build_workspaces(model: &JointModel, dataset: &JointDataset) -> Result<Vec<SubjectWorkspace>> {
    dataset.subjects.par_iter().map(|s| SubjectWorkspace::new(model, s)).collect()
}
