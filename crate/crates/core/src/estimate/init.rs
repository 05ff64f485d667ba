use crate::domain::{JointDataset, ModelSpec};
use crate::likelihood::{mstate_only_grad, JointModel, SubjectWorkspace};
use crate::optim::{bfgs_minimize, BfgsSettings, OptimReport};
use crate::simulate::KnotSpec;
use crate::{Error, Result};

/// Sample quantile with linear interpolation between order statistics
/// (`x[(n−1)p]`, the usual "type 7" rule). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Boundary knots at the extreme sojourn endpoints; internal knots at equally
/// spaced quantiles of the observed transition times of each baseline group.
pub fn default_knots(dataset: &JointDataset, spec: &ModelSpec) -> Result<Vec<KnotSpec>> {
    let topo = &dataset.topology;
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); spec.baseline_groups.len()];
    let group_of = spec.group_of(topo.n_transitions());
    for s in &dataset.subjects {
        for (h, t0, t1, next) in s.history.sojourns() {
            lower = lower.min(t0);
            upper = upper.max(t1);
            if let Some(k) = next {
                let tr = topo.index_of(h, k).expect("validated history");
                times[group_of[tr]].push(t1);
            }
        }
    }
    if !(upper > lower) {
        return Err(Error::Validation("no follow-up time to place spline knots on".into()));
    }
    let m = spec.spline.internal_knots;
    times
        .into_iter()
        .enumerate()
        .map(|(g, mut ts)| {
            ts.sort_by(|a, b| a.total_cmp(b));
            ts.dedup();
            if ts.len() < m {
                return Err(Error::Validation(format!(
                    "baseline group {} has {} distinct transition times, {m} internal knots requested",
                    g + 1,
                    ts.len()
                )));
            }
            let internal = (1..=m)
                .map(|j| quantile_sorted(&ts, j as f64 / (m + 1) as f64))
                .collect();
            Ok(KnotSpec { lower, upper, internal })
        })
        .collect()
}

/// Crude constant log-rate per baseline group: log(events / exposure) over
/// the transitions in the group.
pub(crate) fn crude_log_rates(dataset: &JointDataset, spec: &ModelSpec) -> Vec<f64> {
    let topo = &dataset.topology;
    let ng = spec.baseline_groups.len();
    let group_of = spec.group_of(topo.n_transitions());
    let mut events = vec![0.0; ng];
    let mut exposure = vec![0.0; ng];
    for s in &dataset.subjects {
        for (h, t0, t1, next) in s.history.sojourns() {
            for &tr in topo.outgoing(h) {
                let g = group_of[tr];
                exposure[g] += t1 - t0;
                if next.is_some_and(|k| topo.transition(tr).1 == k) {
                    events[g] += 1.0;
                }
            }
        }
    }
    events
        .iter()
        .zip(&exposure)
        .map(|(e, x)| if *e > 0.0 && *x > 0.0 { (e / x).ln() } else { -10.0 })
        .collect()
}

/// Maximizes the multi-state likelihood alone (η held at zero) over γ, ζ and
/// the spline coefficients, writing the result into `values`.
pub(crate) fn init_multistate(
    model: &JointModel,
    dataset: &JointDataset,
    workspaces: &[SubjectWorkspace],
    values: &mut [f64],
    settings: &BfgsSettings,
) -> OptimReport {
    let lay = &model.layout;
    for i in lay.eta() {
        values[i] = 0.0;
    }
    for i in lay.gamma().chain(lay.zeta()) {
        values[i] = 0.0;
    }
    for (g, r) in crude_log_rates(dataset, &model.spec).into_iter().enumerate() {
        for i in lay.spline(g) {
            values[i] = r;
        }
    }
    let free: Vec<usize> = lay.gamma().chain(lay.zeta()).chain(lay.eta().end..lay.len()).collect();
    maximize_subset(values, &free, settings, |x| mstate_only_grad(model, x, workspaces))
}

/// Maximizes `f` over the coordinates in `free`, leaving the others fixed.
/// Evaluation errors count as infeasible points.
pub(crate) fn maximize_subset<F>(
    values: &mut [f64],
    free: &[usize],
    settings: &BfgsSettings,
    mut f: F,
) -> OptimReport
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut full = values.to_vec();
    let x0: Vec<f64> = free.iter().map(|&i| values[i]).collect();
    let report = bfgs_minimize(
        |x, g| {
            for (k, &i) in free.iter().enumerate() {
                full[i] = x[k];
            }
            match f(&full) {
                Ok((v, grad)) if v.is_finite() => {
                    for (k, &i) in free.iter().enumerate() {
                        g[k] = -grad[i];
                    }
                    -v
                }
                _ => f64::NAN,
            }
        },
        &x0,
        settings,
    );
    for (k, &i) in free.iter().enumerate() {
        values[i] = report.x[k];
    }
    report
}
