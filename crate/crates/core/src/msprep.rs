//! Expansion of event histories into one row per transition at risk.

use crate::domain::{JointDataset, ModelSpec, TransitionTopology};
use crate::{Error, Result};

/// One transition at risk during one sojourn.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    pub id: String,
    /// Position of the subject in the dataset.
    pub subject: usize,
    /// 0-based transition index (reported as `trans + 1`).
    pub trans: usize,
    pub from: usize,
    pub to: usize,
    pub t_start: f64,
    pub t_stop: f64,
    pub status: bool,
    /// Baseline covariates aligned with the dataset's covariate names.
    pub covariates: Vec<f64>,
}

/// Rows sorted by `(subject, t_start, trans)`.
pub fn expand_transitions(dataset: &JointDataset, topology: &TransitionTopology) -> Vec<TransitionRow> {
    let mut rows = Vec::new();
    for (si, s) in dataset.subjects.iter().enumerate() {
        let covs = s.baseline_covariates();
        for (h, t0, t1, next) in s.history.sojourns() {
            for &tr in topology.outgoing(h) {
                let (_, k) = topology.transition(tr);
                rows.push(TransitionRow {
                    id: s.id.clone(),
                    subject: si,
                    trans: tr,
                    from: h,
                    to: k,
                    t_start: t0,
                    t_stop: t1,
                    status: next == Some(k),
                    covariates: covs.to_vec(),
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.subject
            .cmp(&b.subject)
            .then(a.t_start.total_cmp(&b.t_start))
            .then(a.trans.cmp(&b.trans))
    });
    rows
}

/// Per-transition covariate columns (one per `γ` coefficient).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDesign {
    pub column_names: Vec<String>,
    /// Row-major, `rows.len() × column_names.len()`.
    pub values: Vec<Vec<f64>>,
}

impl TransitionDesign {
    pub fn width(&self) -> usize {
        self.column_names.len()
    }
}

/// Expands covariates so each `γ` coefficient gets a column equal to the
/// covariate on rows of its transitions and 0 elsewhere.
pub fn expand_covariates(
    rows: &[TransitionRow],
    spec: &ModelSpec,
    covariate_names: &[String],
) -> Result<TransitionDesign> {
    let mut cols = Vec::with_capacity(spec.transition_covariates.len());
    let mut names = Vec::with_capacity(spec.transition_covariates.len());
    for eff in &spec.transition_covariates {
        let ci = covariate_names
            .iter()
            .position(|n| n == &eff.covariate)
            .ok_or_else(|| Error::UnknownCovariate(eff.covariate.clone()))?;
        let suffix: Vec<String> = eff.transitions.iter().map(|t| (t + 1).to_string()).collect();
        names.push(format!("{}.{}", eff.covariate, suffix.join(".")));
        cols.push((ci, &eff.transitions));
    }
    let mut values = Vec::with_capacity(rows.len());
    for r in rows {
        let mut row = Vec::with_capacity(cols.len());
        for (ci, trans) in &cols {
            let v = *r.covariates.get(*ci).ok_or_else(|| {
                Error::Validation(format!("row for subject {} lacks covariate {}", r.id, ci))
            })?;
            row.push(if trans.contains(&r.trans) { v } else { 0.0 });
        }
        values.push(row);
    }
    Ok(TransitionDesign { column_names: names, values })
}
