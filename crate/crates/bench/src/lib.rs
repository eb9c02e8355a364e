//! Seeded workloads shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use treecert::io::{random_ensemble, GenSpec};
use treecert::{Dataset, Ensemble, Label, LabeledInstance};

/// A complete random forest over `[0,1]^d` with thresholds on a 1/8 grid.
pub fn forest(trees: usize, depth: usize, d: usize, seed: u64) -> Ensemble {
    random_ensemble(&GenSpec {
        n_trees: trees,
        depth,
        n_features: d,
        threshold_lo: 0.0,
        threshold_hi: 1.0,
        threshold_step: Some(0.125),
        labels: vec![Label(-1), Label(1)],
        seed,
    })
    .expect("valid generator settings")
}

/// `n` uniform points labelled by the model.
pub fn dataset(model: &Ensemble, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..model.n_features()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let y = model.predict(&x).expect("dimension matches");
            LabeledInstance::new(x, y)
        })
        .collect();
    Dataset::new(rows, model.n_features()).expect("rows share the dimension")
}
