#![allow(dead_code)]

use jmstate::domain::{DependenceForm, JointDataset, Parameters};
use jmstate::likelihood::{
    build_workspaces, conditional_longit_logdensity, conditional_mstate_logdensity, random_effects_logdensity,
    refresh_modes, JointModel, SubjectWorkspace,
};
use jmstate::msprep::TransitionRow;
use jmstate::simulate::{simulate_dataset, SimulationDesign};

pub struct Bound {
    pub design: SimulationDesign,
    pub dataset: JointDataset,
    pub model: JointModel,
    pub params: Parameters,
    pub values: Vec<f64>,
    pub workspaces: Vec<SubjectWorkspace>,
}

/// Simulates from `design` and binds the generating model, with quadrature
/// centres at the true parameters.
pub fn bind(design: SimulationDesign) -> Bound {
    let sim = simulate_dataset(&design).unwrap();
    let model = design.model().unwrap();
    let values = jmstate::domain::pack(&design.truth, &model.layout).unwrap().values;
    let mut workspaces = build_workspaces(&model, &sim.dataset).unwrap();
    refresh_modes(&model, &values, &mut workspaces).unwrap();
    Bound { params: design.truth.clone(), design, dataset: sim.dataset, model, values, workspaces }
}

pub fn reference(n: usize, seed: u64) -> Bound {
    bind(SimulationDesign::illness_death_reference(n, seed))
}

/// Reference design with the marker disconnected from the intensities.
pub fn independent_design(n: usize, seed: u64) -> SimulationDesign {
    let mut d = SimulationDesign::illness_death_reference(n, seed);
    d.spec.dependence = vec![DependenceForm::None; 3];
    d.truth.eta.clear();
    d
}


/// Two-state survival data `(time, died)` as transition rows from entry 0.
pub fn survival_rows(data: &[(f64, bool)]) -> Vec<TransitionRow> {
    data.iter()
        .enumerate()
        .map(|(i, &(t, d))| TransitionRow {
            id: i.to_string(),
            subject: i,
            trans: 0,
            from: 0,
            to: 1,
            t_start: 0.0,
            t_stop: t,
            status: d,
            covariates: vec![],
        })
        .collect()
}

/// Kaplan–Meier survival and classical Greenwood variance at `t`.
pub fn kaplan_meier(data: &[(f64, bool)], t: f64) -> (f64, f64) {
    let mut times: Vec<f64> = data.iter().filter(|x| x.1 && x.0 <= t).map(|x| x.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut s, mut sum) = (1.0, 0.0);
    for u in times {
        let n = data.iter().filter(|x| x.0 >= u).count() as f64;
        let d = data.iter().filter(|x| x.1 && x.0 == u).count() as f64;
        s *= 1.0 - d / n;
        sum += d / (n * (n - d));
    }
    (s, s * s * sum)
}

/// Hand-checkable survival fixtures: no ties, tied deaths, all censored,
/// an event tied with censorings, and the 6-MP arm of the Freireich trial.
pub fn survival_fixtures() -> Vec<Vec<(f64, bool)>> {
    let e = |v: &[(f64, u8)]| v.iter().map(|&(t, d)| (t, d == 1)).collect::<Vec<_>>();
    vec![
        e(&[(1.0, 1), (2.0, 0), (3.0, 1), (4.0, 1), (5.0, 0)]),
        e(&[(2.0, 1), (2.0, 1), (2.0, 0), (3.0, 1), (5.0, 0), (6.0, 1), (7.0, 0)]),
        e(&[(1.0, 0), (2.0, 0), (3.0, 0)]),
        e(&[(1.0, 0), (2.0, 0), (3.0, 1), (3.0, 0), (4.0, 0), (4.0, 0), (8.0, 0)]),
        e(&[
            (6.0, 1), (6.0, 1), (6.0, 1), (6.0, 0), (7.0, 1), (9.0, 0), (10.0, 1), (10.0, 0), (11.0, 0),
            (13.0, 1), (16.0, 1), (17.0, 0), (19.0, 0), (20.0, 0), (22.0, 1), (23.0, 1), (25.0, 0),
            (32.0, 0), (32.0, 0), (34.0, 0), (35.0, 0),
        ]),
    ]
}

/// Dense trapezoid integral of `f(Y|b) f(E|b) f(b)` over ±6 posterior sd.
pub fn trapezoid_loglik(bd: &Bound, ws: &SubjectWorkspace, n: usize) -> f64 {
    let log_g = |b: &[f64]| {
        conditional_longit_logdensity(&bd.model, &bd.params, ws, b).unwrap()
            + conditional_mstate_logdensity(&bd.model, &bd.params, ws, b).unwrap()
            + random_effects_logdensity(&bd.params, 2, b).unwrap()
    };
    let sd = [ws.scale.row(0).norm(), ws.scale.row(1).norm()];
    let axis = |j: usize| -> Vec<f64> {
        (0..n).map(|i| ws.mode[j] - 6.0 * sd[j] + 12.0 * sd[j] * i as f64 / (n - 1) as f64).collect()
    };
    let (a0, a1) = (axis(0), axis(1));
    let h = [a0[1] - a0[0], a1[1] - a1[0]];
    let mut vals = Vec::with_capacity(n * n);
    for (i, &x) in a0.iter().enumerate() {
        for (j, &y) in a1.iter().enumerate() {
            let w: f64 = if i == 0 || i == n - 1 { 0.5 } else { 1.0 } * if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            vals.push(log_g(&[x, y]) + w.ln());
        }
    }
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + (h[0] * h[1]).ln()
}
