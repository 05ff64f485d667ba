mod common;

use common::reference;
use jmstate::diagnostics::{compare_curves, conditional_residuals, gof_pairs, observed_vs_predicted, transprob_gof};
use jmstate::likelihood::{build_workspaces, refresh_modes};
use jmstate::msprep::expand_transitions;
use jmstate::simulate::{simulate_dataset, SimulationDesign};
use jmstate::transprob::{aalen_johansen_path, counting_panel, nelson_aalen, BSource};

#[test]
fn noise_free_marker_gives_zero_residuals() {
    let mut design = SimulationDesign::illness_death_reference(60, 14);
    design.truth.log_sigma = 1e-4f64.ln();
    let model = design.model().unwrap();
    let mut sim = simulate_dataset(&design).unwrap();
    for (subj, gen) in sim.dataset.subjects.iter_mut().zip(&sim.subjects) {
        for rec in &mut subj.longitudinal {
            rec.y = model.true_level(&design.truth, &gen.b, rec.t, &rec.covariates);
        }
    }
    let values = jmstate::domain::pack(&design.truth, &model.layout).unwrap().values;
    let mut ws = build_workspaces(&model, &sim.dataset).unwrap();
    refresh_modes(&model, &values, &mut ws).unwrap();
    let rows = conditional_residuals(&design.truth, &ws, &sim.dataset).unwrap();
    assert_eq!(rows.len(), sim.dataset.n_observations());
    assert!(ws.iter().all(|w| !w.mode_fallback));
    let worst = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "largest residual {worst}");
}

#[test]
fn residuals_at_truth() {
    let bd = reference(500, 21);
    let rows = conditional_residuals(&bd.params, &bd.workspaces, &bd.dataset).unwrap();
    let mean = rows.iter().map(|r| r.residual).sum::<f64>() / rows.len() as f64;
    assert!(mean.abs() <= 0.05, "mean residual {mean}");
    let sigma = bd.params.sigma();
    for r in &rows {
        assert!((r.standardized * sigma - r.residual).abs() <= 1e-12 * r.residual.abs().max(1.0));
        assert_eq!(r.residual, r.observed - r.fitted);
    }

    let bins = observed_vs_predicted(&rows, 10).unwrap();
    assert_eq!(bins.len(), 10);
    assert_eq!(bins.iter().map(|b| b.n).sum::<usize>(), rows.len());
    let inside = bins.iter().filter(|b| b.predicted_inside()).count();
    assert!(inside >= 9, "{inside} of 10 bins");
    for b in &bins {
        let members: Vec<_> = rows.iter().filter(|r| r.time > b.lower && r.time <= b.upper).collect();
        if b.lower == rows.iter().map(|r| r.time).fold(f64::INFINITY, f64::min) {
            continue;
        }
        let m = members.iter().map(|r| r.observed).sum::<f64>() / members.len() as f64;
        assert!((m - b.mean_observed).abs() < 1e-12);
    }
}

#[test]
fn identical_curves_cover_everything() {
    let bd = reference(300, 6);
    let rows = expand_transitions(&bd.dataset, &bd.dataset.topology);
    let panel = counting_panel::<f64>(&rows, &bd.dataset.topology);
    let steps = nelson_aalen(&panel).unwrap();
    let grid: Vec<f64> = (2..=30).map(|i| i as f64 * 0.5).collect();
    let aj = aalen_johansen_path(&panel, &steps, 1.0, &grid).unwrap();
    let same: Vec<_> = aj.iter().map(|a| a.p.clone()).collect();
    let pairs = gof_pairs(&bd.dataset, 1.0);
    assert!(pairs.starts_with(&[(0, 1), (0, 2)]));
    let report = compare_curves(1.0, &aj, &same, &pairs).unwrap();
    assert_eq!(report.rows.len(), pairs.len() * grid.len());
    for c in &report.coverage {
        assert!(c.n_points > 0);
        assert_eq!(c.fraction, 1.0);
    }
    assert!(compare_curves(1.0, &aj, &same[1..], &pairs).is_err());
}

#[test]
fn gof_at_truth_is_pure_and_handles_empty_grid() {
    let bd = reference(400, 17);
    let grid: Vec<f64> = (1..=15).map(|i| i as f64).collect();
    let run = |g: &[f64]| {
        transprob_gof(&bd.model, &bd.params, &bd.workspaces, &bd.dataset, 0.0, g, 300, BSource::EmpiricalBayes).unwrap()
    };
    let a = run(&grid);
    let b = run(&grid);
    assert_eq!(a, b);
    assert_eq!(a.coverage.len(), 2);
    for c in &a.coverage {
        assert!(c.fraction >= 0.8, "{}->{}: {}", c.from, c.to, c.fraction);
    }
    let empty = run(&[]);
    assert!(empty.rows.is_empty() && empty.coverage.is_empty());
}
