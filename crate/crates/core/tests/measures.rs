mod support;

use rand::Rng;
use support::{binary, fixture, random_ensemble, random_threat, random_tree, rng};
use treecert::audit::probe_grid;
use treecert::io::{load_dataset_libsvm, load_model, load_threat};
use treecert::metrics::{measure, MeasureReport};
use treecert::{
    accuracy, analyze_ensemble, analyze_tree, exact_robustness, globally_robust_predict, is_stable_exact,
    neighborhood_experiment, resilience_lower_bound, robustness_lower_bound, stable_region, AnalysisConfig, Dataset,
    Ensemble, Fraction, Label, ThreatModel, Thresholds,
};

fn frac(count: usize, total: usize) -> Fraction {
    Fraction { count, total }
}

fn random_data(r: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let rows = (0..n)
        .map(|_| {
            let x = (0..d).map(|_| r.gen_range(-5.0..5.0)).collect();
            (x, if r.gen_bool(0.5) { Label(1) } else { Label(-1) })
        })
        .collect();
    Dataset::from_rows(rows).unwrap()
}

/// Labels every instance with the model's own prediction.
fn relabel(model: &Ensemble, data: &Dataset) -> Dataset {
    Dataset::from_rows(data.iter().map(|i| (i.x.clone(), model.predict(&i.x).unwrap())).collect()).unwrap()
}

#[test]
fn worked_example_from_fixtures() {
    let model = load_model(fixture("toy_tree.json")).unwrap();
    let threat = load_threat(fixture("toy_threat.json")).unwrap();
    let data = load_dataset_libsvm(fixture("toy_data.libsvm")).unwrap();
    let u = analyze_ensemble(&model, &threat, &AnalysisConfig::to_convergence()).unwrap().attacks;
    let region = stable_region(&u, 2).unwrap();
    assert_eq!(accuracy(&model, &data).unwrap(), frac(3, 3));
    assert_eq!(exact_robustness(&model, &data, &threat).unwrap(), frac(2, 3));
    assert_eq!(robustness_lower_bound(&region, &model, &data).unwrap(), frac(2, 3));
    assert_eq!(resilience_lower_bound(&region, &model, &data, 0.5, None).unwrap(), frac(1, 3));
    let inputs = measure(&region, &model, &data, 0.5, Some(&threat), None).unwrap();
    let report = MeasureReport::new(inputs).unwrap();
    assert_eq!(report.resilience_hat, frac(1, 3));
}

#[test]
fn larger_budgets_certify_less() {
    let mut r = rng(21);
    for _ in 0..100 {
        let d = r.gen_range(1..=4);
        let depth = r.gen_range(1..=5);
        let tree = random_tree(&mut r, depth, d, &binary());
        let model = Ensemble::from_tree(tree.clone(), d).unwrap();
        let data = relabel(&model, &random_data(&mut r, 40, d));
        let delta = r.gen_range(1..=4) as f64 * 0.5;
        let mut last = None;
        for b in 1..=5 {
            let threat = ThreatModel::uniform(d, delta, b).unwrap();
            let region = stable_region(&analyze_tree(&tree, &threat).unwrap(), d).unwrap();
            let r_hat = robustness_lower_bound(&region, &model, &data).unwrap();
            if let Some(prev) = last {
                assert!(r_hat <= prev, "b = {b}: {r_hat} > {prev}");
            }
            last = Some(r_hat);
        }
    }
}

#[test]
fn larger_neighbourhoods_certify_less() {
    let mut r = rng(22);
    for _ in 0..50 {
        let d = r.gen_range(1..=3);
        let depth = r.gen_range(1..=3);
        let model = random_ensemble(&mut r, 3, depth, d, &binary());
        let threat = random_threat(&mut r, d);
        let data = relabel(&model, &random_data(&mut r, 60, d));
        let u = analyze_ensemble(&model, &threat, &AnalysisConfig::default()).unwrap().attacks;
        let region = stable_region(&u, d).unwrap();
        let values: Vec<Fraction> = [0.01, 0.02, 0.03, 0.04]
            .iter()
            .map(|&e| resilience_lower_bound(&region, &model, &data, e, None).unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
    }
}

#[test]
fn abstaining_classifier_is_never_fooled() {
    let mut r = rng(23);
    for case in 0..60 {
        let d = r.gen_range(1..=3);
        let depth = r.gen_range(1..=3);
        let n = [1, 3][r.gen_range(0..2)];
        let model = random_ensemble(&mut r, n, depth, d, &binary());
        let threat = random_threat(&mut r, d);
        let u = analyze_ensemble(&model, &threat, &AnalysisConfig::to_convergence()).unwrap().attacks;
        let region = stable_region(&u, d).unwrap();
        let oracle = treecert::AttackOracle::new(&model, &threat).unwrap();
        for x in probe_grid(&Thresholds::of_ensemble(&model), &threat, 200, case) {
            if let Some(y) = globally_robust_predict(&region, &model, &x).unwrap() {
                let flip = oracle.find_flip(&x).unwrap();
                assert!(flip.is_none(), "case {case}: certified {x:?} ({y}) flips to {flip:?}");
            }
        }
    }
}

#[test]
fn certified_points_are_exactly_stable() {
    let mut r = rng(24);
    let mut trials = 0;
    let mut certified = 0;
    while trials < 10_000 {
        let d = r.gen_range(1..=3);
        let depth = r.gen_range(1..=4);
        let model = random_ensemble(&mut r, 1, depth, d, &binary());
        let threat = random_threat(&mut r, d);
        let u = analyze_tree(&model.trees()[0], &threat).unwrap();
        let region = stable_region(&u, d).unwrap();
        for x in probe_grid(&Thresholds::of_ensemble(&model), &threat, 100, trials as u64) {
            trials += 1;
            if region.is_certified_stable(&x).unwrap() {
                certified += 1;
                assert!(is_stable_exact(&model, &x, &threat).unwrap(), "{x:?} under {threat:?}");
            }
        }
    }
    assert!(certified > 1000, "only {certified} certified points");
}

#[test]
fn measure_chain_holds_on_random_runs() {
    let mut r = rng(25);
    for _ in 0..30 {
        let d = r.gen_range(1..=3);
        let depth = r.gen_range(1..=3);
        let model = random_ensemble(&mut r, 3, depth, d, &binary());
        let threat = random_threat(&mut r, d);
        let data = random_data(&mut r, 30, d);
        let analysis = analyze_ensemble(&model, &threat, &AnalysisConfig::default()).unwrap();
        let region = stable_region(&analysis.attacks, d).unwrap();
        let mut inputs = measure(&region, &model, &data, 0.05, Some(&threat), None).unwrap();
        inputs.experiment = Some(neighborhood_experiment(&model, &data, 0.05, &threat, 20, 3).unwrap());
        let report = MeasureReport::new(inputs).unwrap();
        assert!(report.r_bar.unwrap() <= report.r_min.unwrap());
    }
}

#[test]
fn neighbourhood_experiment_is_reproducible() {
    let model = load_model(fixture("toy_tree.json")).unwrap();
    let threat = load_threat(fixture("toy_threat.json")).unwrap();
    let data = load_dataset_libsvm(fixture("toy_data.libsvm")).unwrap();
    let a = neighborhood_experiment(&model, &data, 1.0, &threat, 100, 42).unwrap();
    let b = neighborhood_experiment(&model, &data, 1.0, &threat, 100, 42).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_set.len(), 100);
    let c = neighborhood_experiment(&model, &data, 0.0, &threat, 10, 42).unwrap();
    assert!(c.r_min == c.r && c.r_max == c.r && c.r_bar == c.r);
}
