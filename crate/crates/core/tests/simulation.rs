use jmstate::domain::validate_dataset;
use jmstate::simulate::{simulate_dataset, SimulationDesign};

#[test]
fn generated_histories_revalidate() {
    let sim = simulate_dataset(&SimulationDesign::illness_death_reference(200, 77)).unwrap();
    let ds = &sim.dataset;
    let long = ds.subjects.iter().flat_map(|s| s.longitudinal.clone()).collect();
    let hist = ds.subjects.iter().map(|s| s.history.clone()).collect();
    let again = validate_dataset(long, ds.covariate_names.clone(), hist, &ds.topology).unwrap();
    assert_eq!(&again, ds);
}

#[test]
fn higher_baseline_shortens_sojourns() {
    let base = SimulationDesign::illness_death_reference(10_000, 5);
    let mut up = base.clone();
    for c in &mut up.truth.spline_coefs {
        c.iter_mut().for_each(|v| *v += 1.0);
    }
    let median_first = |d: &SimulationDesign| {
        let sim = simulate_dataset(d).unwrap();
        let mut t: Vec<f64> = sim.subjects.iter().map(|s| s.history.times[0]).collect();
        t.sort_by(f64::total_cmp);
        t[t.len() / 2]
    };
    assert!(median_first(&up) < median_first(&base));
}
