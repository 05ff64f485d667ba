//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line
//! straight to stdout (bypassing the harness capture).
//!
//! Replicate counts can be lowered for quick runs with `JMSTATE_RECOVERY_REPS`
//! and `JMSTATE_QUADRATURE_REPS`; the defaults are the full study sizes.

mod common;

use std::io::Write;
use std::sync::OnceLock;

use common::{bind, independent_design, kaplan_meier, reference, survival_fixtures, survival_rows, trapezoid_loglik};
use jmstate::diagnostics::transprob_gof;
use jmstate::domain::{pack, unpack, JointDataset, ParameterVector};
use jmstate::estimate::{fit, fit_detailed, FitControl, FitResult};
use jmstate::likelihood::{conditional_mstate_logdensity, subject_loglik, total_loglik};
use jmstate::lmm::{lmm_data, lmm_marginal_loglik};
use jmstate::msprep::expand_transitions;
use jmstate::numerics::{gauss_hermite, gauss_kronrod_15};
use jmstate::simulate::{simulate_dataset, SimulatedData, SimulationDesign};
use jmstate::transprob::{
    aalen_johansen, aalen_johansen_path, aalen_johansen_with_cov, counting_panel, nelson_aalen, parametric_path,
    BSource,
};
use nalgebra::DMatrix;

fn report(n: u8, title: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n} [{title}]: {verdict} ({detail})").unwrap();
    out.flush().unwrap();
}

fn note(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "    {line}").unwrap();
}

fn env_count(name: &str, default: usize) -> usize {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// Table-1 parameters: β, σ, D entries, γ and η, on their natural scale.
struct Recovered {
    names: Vec<String>,
    truth: Vec<f64>,
    estimate: Vec<f64>,
    se: Vec<f64>,
}

fn table_one(design: &SimulationDesign, fit: &FitResult) -> Recovered {
    let model = design.model().unwrap();
    let t = pack(&design.truth, &model.layout).unwrap();
    let mut r = Recovered { names: vec![], truth: vec![], estimate: vec![], se: vec![] };
    for (i, name) in t.names.iter().enumerate() {
        if name.starts_with("beta") || name.starts_with("gamma") || name.starts_with("eta") {
            r.names.push(name.clone());
            r.truth.push(t.values[i]);
            r.estimate.push(fit.theta_hat.values[i]);
            r.se.push(fit.se[i]);
        }
    }
    let d = design.truth.d_matrix(2);
    let truths = [("sigma", design.truth.sigma()), ("D[1,1]", d[(0, 0)]), ("D[2,1]", d[(1, 0)]), ("D[2,2]", d[(1, 1)])];
    for (name, truth) in truths {
        let row = fit.derived.iter().find(|p| p.name == name).unwrap();
        r.names.push(name.into());
        r.truth.push(truth);
        r.estimate.push(row.estimate);
        r.se.push(row.se);
    }
    r
}

const RECOVERY_N: usize = 500;

fn replicate_design(r: usize) -> SimulationDesign {
    SimulationDesign::illness_death_reference(RECOVERY_N, 1000 + r as u64)
}

fn fit_replicate(r: usize, gh_order: usize) -> Option<Recovered> {
    let design = replicate_design(r);
    let sim = simulate_dataset(&design).unwrap();
    let control = FitControl { gh_order, ..Default::default() };
    match fit(&sim.dataset, &design.spec, &control) {
        Ok(f) => Some(table_one(&design, &f)),
        Err(e) => {
            note(&format!("replicate {r} ({gh_order} points) failed: {e}"));
            None
        }
    }
}

/// Nine-point fits shared by the recovery and quadrature-sensitivity criteria.
fn nine_point_fits() -> &'static Vec<Option<Recovered>> {
    static FITS: OnceLock<Vec<Option<Recovered>>> = OnceLock::new();
    FITS.get_or_init(|| {
        let reps = env_count("JMSTATE_RECOVERY_REPS", 100).max(env_count("JMSTATE_QUADRATURE_REPS", 30));
        (0..reps).map(|r| fit_replicate(r, 9)).collect()
    })
}

fn summarize(fits: &[&Recovered], j: usize) -> (f64, f64) {
    let n = fits.len() as f64;
    let mean = fits.iter().map(|f| f.estimate[j]).sum::<f64>() / n;
    let covered = fits.iter().filter(|f| (f.estimate[j] - f.truth[j]).abs() <= 1.96 * f.se[j]).count();
    (mean, covered as f64 / n)
}

#[test]
fn criterion_1_simulation_recovery() {
    let reps = env_count("JMSTATE_RECOVERY_REPS", 100);
    let fits: Vec<&Recovered> = nine_point_fits().iter().take(reps).flatten().collect();
    let mut failures = Vec::new();
    if fits.len() < reps {
        failures.push(format!("{} of {reps} fits failed", reps - fits.len()));
    }
    let first = fits[0];
    for (j, name) in first.names.iter().enumerate() {
        let truth = first.truth[j];
        let (mean, coverage) = summarize(&fits, j);
        let tol = if name.starts_with("eta_slope") { 0.15 } else { 0.05f64.max(0.1 * truth.abs()) };
        let bias_ok = (mean - truth).abs() <= tol;
        let cov_ok = (0.90..=0.98).contains(&coverage);
        note(&format!(
            "{name:24} truth {truth:8.3}  mean {mean:8.3}  bias {:7.3} (tol {tol:.3})  coverage {:5.1}%{}",
            mean - truth,
            100.0 * coverage,
            if bias_ok && cov_ok { "" } else { "  <-" }
        ));
        if !bias_ok {
            failures.push(format!("{name} bias {:.3}", mean - truth));
        }
        if !cov_ok {
            failures.push(format!("{name} coverage {:.0}%", 100.0 * coverage));
        }
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("{} replicates x {RECOVERY_N} subjects, all biases and coverages in range", fits.len())
    } else {
        failures.join("; ")
    };
    report(1, "simulation recovery", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_2_quadrature_sensitivity() {
    let reps = env_count("JMSTATE_QUADRATURE_REPS", 30);
    let nine: Vec<&Recovered> = nine_point_fits().iter().take(reps).flatten().collect();
    let three: Vec<Recovered> = (0..reps).filter_map(|r| fit_replicate(r, 3)).collect();
    let three: Vec<&Recovered> = three.iter().collect();
    let j = nine[0].names.iter().position(|n| n == &nine[0].names[3]).unwrap();
    let truth = nine[0].truth[j];
    let (m9, c9) = summarize(&nine, j);
    let (m3, c3) = summarize(&three, j);
    let rb9 = (m9 - truth) / truth;
    let rb3 = (m3 - truth) / truth;
    let pass = three.len() == reps && nine.len() == reps && rb3.abs() >= 3.0 * rb9.abs() && c3 < 0.90;
    let detail = format!(
        "{}: 3 points bias {:+.1}% coverage {:.1}%, 9 points bias {:+.1}% coverage {:.1}% over {reps} replicates",
        nine[0].names[j],
        100.0 * rb3,
        100.0 * c3,
        100.0 * rb9,
        100.0 * c9
    );
    report(2, "quadrature sensitivity", pass, &detail);
    assert!(pass, "{detail}");
}

fn large_replicate() -> &'static SimulatedData {
    static SIM: OnceLock<SimulatedData> = OnceLock::new();
    SIM.get_or_init(|| simulate_dataset(&SimulationDesign::illness_death_reference(1500, 2024)).unwrap())
}

#[test]
fn criterion_3_transition_counts() {
    let data = &large_replicate().dataset;
    let counts = data.transition_counts();
    let direct = [counts[0][1], counts[0][2], counts[1][2]];
    let mut finals = [0usize; 3];
    for s in &data.subjects {
        finals[s.history.final_state()] += 1;
    }
    let within = |got: usize, want: f64| (got as f64 - want).abs() <= 3.0 * want.sqrt();
    let pass = direct.iter().zip([500.0, 308.0, 287.0]).all(|(&g, w)| within(g, w))
        && finals.iter().zip([692.0, 213.0, 595.0]).all(|(&g, w)| within(g, w));
    let detail = format!(
        "direct {:?} vs (500, 308, 287), final states {:?} vs (692, 213, 595), N=1500",
        direct, finals
    );
    report(3, "transition counts", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_4_factorization() {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let bd = bind(independent_design(200, 400 + seed));
        let joint = total_loglik(&bd.model, &bd.params, &bd.workspaces, 9).unwrap();
        let data = lmm_data(&bd.dataset, &bd.model.spec).unwrap();
        let lmm = lmm_marginal_loglik(&bd.params.beta, bd.params.log_sigma, &bd.params.d_cholesky, &data).unwrap();
        let ms: f64 = bd
            .workspaces
            .iter()
            .map(|ws| conditional_mstate_logdensity(&bd.model, &bd.params, ws, &[0.0, 0.0]).unwrap())
            .sum();
        worst = worst.max(((joint - lmm - ms) / joint).abs());
    }
    let pass = worst < 1e-8;
    let detail = format!("largest relative gap {worst:.2e} over 10 datasets");
    report(4, "factorization", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_5_brute_force_quadrature() {
    let bd = reference(20, 55);
    let worst = bd
        .workspaces
        .iter()
        .map(|ws| (subject_loglik(&bd.model, &bd.params, ws, 9).unwrap() - trapezoid_loglik(&bd, ws, 200)).abs())
        .fold(0.0, f64::max);
    let pass = worst < 1e-4;
    let detail = format!("largest |GH - trapezoid| {worst:.2e} over 20 subjects");
    report(5, "brute-force quadrature", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_6_nonparametric_reductions() {
    let topo = jmstate::TransitionTopology::new(2, vec![(0, 1)]).unwrap();
    let (mut dp, mut dv) = (0.0f64, 0.0f64);
    for data in survival_fixtures() {
        let panel = counting_panel::<f64>(&survival_rows(&data), &topo);
        let steps = nelson_aalen(&panel).unwrap();
        for t in data.iter().flat_map(|x| [x.0, x.0 + 0.5]) {
            let (p, cov) = aalen_johansen_with_cov(&panel, &steps, 0.0, t).unwrap();
            let (s, v) = kaplan_meier(&data, t);
            dp = dp.max((p[(0, 0)] - s).abs());
            dv = dv.max((cov[(0, 0)] - v).abs());
        }
    }
    let pass = dp < 1e-10 && dv < 1e-10;
    let detail = format!("5 fixtures: max |AJ - KM| {dp:.1e}, max |Greenwood diff| {dv:.1e}");
    report(6, "non-parametric reductions", pass, &detail);
    assert!(pass, "{detail}");
}

fn check(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

fn stochastic_within(p: &DMatrix<f64>, tol: f64) -> bool {
    p.row_iter().all(|r| (r.sum() - 1.0).abs() <= tol) && p.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
}

#[test]
fn criterion_7_structural_invariants() {
    let mut failures = Vec::new();
    let mut checks = 0usize;
    let bd = reference(500, 77);
    let dataset: &JointDataset = &bd.dataset;

    // Aalen–Johansen: row sums, bounds, Chapman–Kolmogorov
    let rows = expand_transitions(dataset, &dataset.topology);
    let panel = counting_panel::<f64>(&rows, &dataset.topology);
    let steps = nelson_aalen(&panel).unwrap();
    let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
    for s in [0.0, 2.0, 5.0] {
        let times: Vec<f64> = grid.iter().copied().filter(|&t| t >= s).collect();
        for pt in aalen_johansen_path(&panel, &steps, s, &times).unwrap() {
            checks += 1;
            check(&mut failures, stochastic_within(&pt.p, 1e-10), || format!("AJ P({s},{}) not stochastic", pt.t));
        }
    }
    let ev = &panel.times;
    for (s, u, t) in [(0.0, ev[20], 15.0), (ev[3], ev[100], ev[200]), (1.0, 4.0, 9.0)] {
        checks += 1;
        let split = aalen_johansen(&steps, s, u).unwrap() * aalen_johansen(&steps, u, t).unwrap();
        let gap = (split - aalen_johansen(&steps, s, t).unwrap()).abs().max();
        check(&mut failures, gap < 1e-12, || format!("Chapman-Kolmogorov gap {gap:.1e}"));
    }

    // parametric matrices at grid 1000
    let times: Vec<f64> = (0..=20).map(|i| i as f64).collect();
    for ws in bd.workspaces.iter().take(10) {
        let path = parametric_path(&bd.model, &bd.params, ws.mode.as_slice(), &ws.covariates, 0.0, &times, 1000).unwrap();
        for p in path {
            checks += 1;
            check(&mut failures, stochastic_within(&p, 1e-4), || format!("parametric matrix for {} not stochastic", ws.id));
        }
    }

    // B-spline partition of unity
    let basis = &bd.model.bases[0];
    for i in 0..=1000 {
        let t = basis.lower() + (basis.upper() - basis.lower()) * i as f64 / 1000.0;
        let v = basis.eval(t).unwrap();
        checks += 1;
        let sum: f64 = v.iter().sum();
        check(&mut failures, (sum - 1.0).abs() < 1e-12 && v.iter().all(|&x| x >= 0.0), || {
            format!("B-spline sum {sum} at {t}")
        });
    }

    // Gauss–Hermite: exact for degree ≤ 2n−1
    for n in [3usize, 9, 15] {
        let rule = gauss_hermite::<f64>(n).unwrap();
        for k in 0..2 * n {
            let got: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(k as i32)).sum();
            let scale: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| (w * x.powi(k as i32)).abs()).sum();
            let want = if k % 2 == 1 {
                0.0
            } else {
                // Γ((k+1)/2) = (k−1)!! √π / 2^{k/2}
                let mut v = std::f64::consts::PI.sqrt();
                for j in (1..k).step_by(2) {
                    v *= j as f64 / 2.0;
                }
                v
            };
            checks += 1;
            check(&mut failures, (got - want).abs() <= 1e-12 * scale.max(1.0), || {
                format!("GH n={n} moment {k}: {got} vs {want}")
            });
        }
    }

    // Gauss–Kronrod 15: exact through degree 23
    for (a, b) in [(0.0, 1.0), (-2.0, 3.5), (4.12, 7.455)] {
        for k in 0..=23 {
            let (got, _) = gauss_kronrod_15(|x: f64| x.powi(k), a, b).unwrap();
            let want = (b.powi(k + 1) - a.powi(k + 1)) / (k + 1) as f64;
            checks += 1;
            check(&mut failures, (got - want).abs() <= 1e-12 * want.abs().max(1.0), || {
                format!("GK15 degree {k} on [{a},{b}]: {got} vs {want}")
            });
        }
    }

    // simulation inversion residuals
    let worst = large_replicate().max_inversion_residual();
    checks += 1;
    check(&mut failures, worst < 1e-8, || format!("inversion residual {worst:.1e}"));

    // pack/unpack round trip
    let packed = pack(&bd.params, &bd.model.layout).unwrap();
    let back = pack(&unpack(&packed, &bd.model.layout).unwrap(), &bd.model.layout).unwrap();
    checks += 1;
    check(&mut failures, back == packed, || "pack/unpack round trip".into());
    let shifted = ParameterVector { values: packed.values.iter().map(|v| v + 0.1).collect(), ..packed.clone() };
    checks += 1;
    let again = pack(&unpack(&shifted, &bd.model.layout).unwrap(), &bd.model.layout).unwrap();
    check(&mut failures, again == shifted, || "pack/unpack round trip off the truth".into());

    // subject order
    let total = total_loglik(&bd.model, &bd.params, &bd.workspaces, 9).unwrap();
    let mut rev = bd.workspaces.clone();
    rev.reverse();
    let reversed = total_loglik(&bd.model, &bd.params, &rev, 9).unwrap();
    checks += 1;
    check(&mut failures, (total - reversed).abs() < 1e-8, || format!("subject order changes loglik by {:.1e}", total - reversed));

    let pass = failures.is_empty();
    let detail = if pass { format!("{checks} checks") } else { format!("{} of {checks} checks failed: {}", failures.len(), failures.join("; ")) };
    report(7, "structural invariants", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn criterion_8_goodness_of_fit() {
    let design = SimulationDesign::illness_death_reference(1500, 2024);
    let dataset = &large_replicate().dataset;
    let fitted = fit_detailed(dataset, &design.spec, &FitControl { skip_vcov: true, ..Default::default() }).unwrap();
    let params = fitted.result.parameters(&fitted.model).unwrap();
    let end = dataset.subjects.iter().map(|s| s.history.last_time()).fold(0.0, f64::max);
    let mut lines = Vec::new();
    let mut pass = true;
    for s in [0.0, 2.0] {
        let grid: Vec<f64> = (0..50).map(|i| s + (end - s) * i as f64 / 49.0).collect();
        let gof = transprob_gof(&fitted.model, &params, &fitted.workspaces, dataset, s, &grid, 1000, BSource::EmpiricalBayes)
            .unwrap();
        for c in &gof.coverage {
            pass &= c.fraction >= 0.8;
            lines.push(format!("s={s} {}->{} {:.0}% of {}", c.from, c.to, 100.0 * c.fraction, c.n_points));
        }
    }
    let detail = format!("N=1500, inside the AJ band: {}", lines.join(", "));
    report(8, "transition-probability GOF", pass, &detail);
    assert!(pass, "{detail}");
}
