use super::*;

fn small_toy() -> RunConfig {
    let mut c = RunConfig::default();
    c.model = "normal-toy".into();
    c.psa_draws = 5000;
    c.q = 20;
    c.n_min = 1;
    c.n_max = 50;
    c.posterior_draws = 2000;
    c.mcmc.burn_in = 300;
    c.mcmc.draws = 300;
    c
}

#[test]
fn resolves_models_and_exercises() {
    let mut c = RunConfig::default();
    assert_eq!(resolve_model(&c).unwrap().1.focal_parameters.len(), 2);
    c.exercise = 9;
    assert!(matches!(resolve_model(&c), Err(Error::UnknownExercise(9))));
    c.exercise = 1;
    c.model = "nope".into();
    assert!(matches!(resolve_model(&c), Err(Error::UnknownModel(_))));
    let mut t = small_toy();
    t.exercise = 2;
    assert!(resolve_model(&t).is_err());
}

#[test]
fn toy_pipeline_runs_and_counts_its_budget() {
    let c = small_toy();
    let r = run_pipeline(&c).unwrap();
    assert_eq!(r.budget.total(), 5000 + 20 * 2000);
    assert_eq!(r.budget.posterior_updates, 20);
    assert_eq!(r.curve.grid.len(), 50);
    assert!(r
        .curve
        .evsi
        .iter()
        .flatten()
        .all(|&e| e <= r.curve.evppi + 1e-9));
}

#[test]
fn outputs_are_reproducible_and_reingestable() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_toy();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let files = write_pipeline_outputs(&a, &run_pipeline(&c).unwrap()).unwrap();
    assert_eq!(files.len(), 6);
    write_pipeline_outputs(&b, &run_pipeline(&c).unwrap()).unwrap();
    for f in &files {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let mut again = c.clone();
    again.variance_points = Some(a.join("variance_points.csv"));
    let r = run_pipeline(&again).unwrap();
    assert_eq!(r.budget.posterior_evaluations, 0);
    let path = dir.path().join("curve.csv");
    write_curve(&path, &r.curve).unwrap();
    assert_eq!(
        fs::read(path).unwrap(),
        fs::read(a.join("curve.csv")).unwrap()
    );
}

#[test]
fn fitted_values_can_be_supplied() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_toy();
    let psa = run_psa(&c).unwrap();
    let cond = run_conditional(&c, &psa).unwrap();
    write_fitted(dir.path(), &psa, &cond).unwrap();
    let mut ext = c.clone();
    ext.fitted_values = Some(dir.path().join("fitted_values.csv"));
    let back = run_conditional(&ext, &psa).unwrap();
    assert_eq!(back.source, FitSource::External);
    assert!((&back.fitted - &cond.fitted).abs().max() < 1e-9);
}

#[test]
fn oracle_rows_and_budget() {
    let mut c = small_toy();
    c.oracle_outer = 200;
    c.oracle_inner = 50;
    let rows = run_oracle(&c, &[1, 4]).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.estimate.model_evaluations, 200 * 51);
        let exact = r.closed_form.unwrap();
        assert!((r.estimate.evsi - exact).abs() < 3.0 * r.estimate.se);
    }
    assert!(run_oracle(&c, &[]).is_err());
}
