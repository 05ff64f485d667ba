//! Goodness-of-fit exports: conditional residuals, observed-vs-predicted marker
//! means by time bins, and parametric-vs-Aalen–Johansen probability overlays.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{JointDataset, Parameters};
use crate::estimate::quantile_sorted;
use crate::likelihood::{JointModel, SubjectWorkspace};
use crate::msprep::expand_transitions;
use crate::transprob::{
    aalen_johansen_path, aj_confidence_interval, counting_panel, nelson_aalen,
    parametric_transprob_average, AjPoint, BSource,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub id: String,
    pub time: f64,
    pub observed: f64,
    pub fitted: f64,
    pub residual: f64,
    pub standardized: f64,
}

/// `fitted = Xβ̂ + Z b̂ᵢ` with `b̂ᵢ` the workspace's empirical-Bayes mode;
/// standardized residuals divide by σ̂.
pub fn conditional_residuals(
    params: &Parameters,
    workspaces: &[SubjectWorkspace],
    dataset: &JointDataset,
) -> Result<Vec<ResidualRow>> {
    if workspaces.len() != dataset.subjects.len() {
        return Err(Error::Dimension("one workspace per subject".into()));
    }
    let sigma = params.sigma();
    let beta = DVector::from_column_slice(&params.beta);
    let mut out = Vec::with_capacity(dataset.n_observations());
    for (ws, s) in workspaces.iter().zip(&dataset.subjects) {
        let fitted = ws.fixed_design() * &beta + ws.random_design() * &ws.mode;
        for (i, rec) in s.longitudinal.iter().enumerate() {
            let r = rec.y - fitted[i];
            out.push(ResidualRow {
                id: s.id.clone(),
                time: rec.t,
                observed: rec.y,
                fitted: fitted[i],
                residual: r,
                standardized: r / sigma,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub mean_observed: f64,
    pub mean_predicted: f64,
    /// `None` when the bin has fewer than two observations.
    pub ci: Option<(f64, f64)>,
}

impl BinRow {
    pub fn predicted_inside(&self) -> bool {
        self.ci.is_some_and(|(lo, hi)| lo <= self.mean_predicted && self.mean_predicted <= hi)
    }
}

/// Mean observed and fitted marker values within bins cut at quantiles of the
/// observation times. Bins are right-closed; the first also takes its lower edge.
pub fn observed_vs_predicted(residuals: &[ResidualRow], n_bins: usize) -> Result<Vec<BinRow>> {
    if n_bins == 0 {
        return Err(Error::Validation("need at least one bin".into()));
    }
    if residuals.is_empty() {
        return Ok(Vec::new());
    }
    let mut times: Vec<f64> = residuals.iter().map(|r| r.time).collect();
    times.sort_by(|a, b| a.total_cmp(b));
    let edges: Vec<f64> = (0..=n_bins).map(|j| quantile_sorted(&times, j as f64 / n_bins as f64)).collect();
    let mut members: Vec<Vec<&ResidualRow>> = vec![Vec::new(); n_bins];
    for r in residuals {
        let j = edges[1..].partition_point(|&e| e < r.time).min(n_bins - 1);
        members[j].push(r);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(j, rows)| {
            let n = rows.len();
            let nf = n as f64;
            let mo = rows.iter().map(|r| r.observed).sum::<f64>() / nf;
            let mp = rows.iter().map(|r| r.fitted).sum::<f64>() / nf;
            let ci = (n >= 2).then(|| {
                let var = rows.iter().map(|r| (r.observed - mo).powi(2)).sum::<f64>() / (nf - 1.0);
                let half = 1.96 * (var / nf).sqrt();
                (mo - half, mo + half)
            });
            BinRow { lower: edges[j], upper: edges[j + 1], n, mean_observed: mo, mean_predicted: mp, ci }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub s: f64,
    pub t: f64,
    pub from: usize,
    pub to: usize,
    pub parametric: f64,
    pub aalen_johansen: f64,
    /// Log-scale 95% band; `None` where the estimate is zero.
    pub band: Option<(f64, f64)>,
}

impl GofRow {
    pub fn inside(&self) -> Option<bool> {
        self.band.map(|(lo, hi)| lo <= self.parametric && self.parametric <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub from: usize,
    pub to: usize,
    /// Grid points with a defined band.
    pub n_points: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub rows: Vec<GofRow>,
    pub coverage: Vec<Coverage>,
}

/// Joins an Aalen–Johansen curve and parametric matrices on the same grid for
/// the listed `(from, to)` entries.
pub fn compare_curves(
    s: f64,
    aj: &[AjPoint<f64>],
    parametric: &[DMatrix<f64>],
    pairs: &[(usize, usize)],
) -> Result<GofReport> {
    if aj.len() != parametric.len() {
        return Err(Error::Dimension("curves must share a grid".into()));
    }
    let mut rows = Vec::new();
    let mut coverage = Vec::new();
    for &(h, k) in pairs {
        let mut hits = 0;
        let mut n = 0;
        for (a, p) in aj.iter().zip(parametric) {
            let m = a.p.nrows();
            let var = a.cov[(h + k * m, h + k * m)];
            let row = GofRow {
                s,
                t: a.t,
                from: h,
                to: k,
                parametric: p[(h, k)],
                aalen_johansen: a.p[(h, k)],
                band: aj_confidence_interval(a.p[(h, k)], var),
            };
            if let Some(inside) = row.inside() {
                n += 1;
                hits += usize::from(inside);
            }
            rows.push(row);
        }
        let fraction = if n > 0 { hits as f64 / n as f64 } else { f64::NAN };
        coverage.push(Coverage { from: h, to: k, n_points: n, fraction });
    }
    Ok(GofReport { rows, coverage })
}

/// States occupied by at least one subject at time `s`, paired with every
/// state reachable in one step; these are the entries compared by the GOF.
pub fn gof_pairs(dataset: &JointDataset, s: f64) -> Vec<(usize, usize)> {
    let topo = &dataset.topology;
    let mut occupied = vec![false; topo.n_states()];
    for subj in &dataset.subjects {
        if let Some(h) = state_at(subj, s) {
            occupied[h] = true;
        }
    }
    let mut pairs = Vec::new();
    for (h, _) in occupied.iter().enumerate().filter(|(_, o)| **o) {
        for &tr in topo.outgoing(h) {
            pairs.push((h, topo.transition(tr).1));
        }
    }
    pairs
}

fn state_at(subject: &crate::domain::Subject, s: f64) -> Option<usize> {
    subject
        .history
        .sojourns()
        .into_iter()
        .find(|&(_, t0, t1, _)| t0 <= s && s < t1)
        .map(|(h, ..)| h)
}

/// Parametric average (over subjects occupying the origin state at `s`) against
/// Aalen–Johansen with its 95% band, on `grid`.
#[allow(clippy::too_many_arguments)]
pub fn transprob_gof(
    model: &JointModel,
    params: &Parameters,
    workspaces: &[SubjectWorkspace],
    dataset: &JointDataset,
    s: f64,
    grid: &[f64],
    grid_size: usize,
    source: BSource,
) -> Result<GofReport> {
    if grid.is_empty() {
        return Ok(GofReport { rows: Vec::new(), coverage: Vec::new() });
    }
    let rows = expand_transitions(dataset, &dataset.topology);
    let panel = counting_panel::<f64>(&rows, &dataset.topology);
    let steps = nelson_aalen(&panel)?;
    let aj = aalen_johansen_path(&panel, &steps, s, grid)?;
    let pairs = gof_pairs(dataset, s);
    let m = dataset.topology.n_states();
    let mut parametric = vec![DMatrix::zeros(m, m); grid.len()];
    let mut origins: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    origins.dedup();
    for h in origins {
        let members: Vec<SubjectWorkspace> = dataset
            .subjects
            .iter()
            .zip(workspaces)
            .filter(|(subj, _)| state_at(subj, s) == Some(h))
            .map(|(_, ws)| ws.clone())
            .collect();
        let avg = parametric_transprob_average(model, params, &members, source, s, grid, grid_size)?;
        for (dst, src) in parametric.iter_mut().zip(avg) {
            dst.set_row(h, &src.row(h));
        }
    }
    compare_curves(s, &aj, &parametric, &pairs)
}
