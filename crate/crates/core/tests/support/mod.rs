//! Random models and attackers for the fuzz tests.
//!
//! Thresholds and perturbation bounds are multiples of 1/2 so every sum the
//! analysis and the oracle compute is exact.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use treecert::tree_analysis::{canonicalize, AnnotatedTree};
use treecert::{DecisionTree, Ensemble, FeatureAttack, Label, SymbolicAttack, ThreatModel};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

fn half(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    rng.gen_range(lo..=hi) as f64 * 0.5
}

/// A tree of depth at most `depth`; subtrees stop early with probability 1/4.
pub fn random_tree(rng: &mut ChaCha8Rng, depth: usize, d: usize, labels: &[Label]) -> DecisionTree {
    if depth == 0 || rng.gen_ratio(1, 4) {
        return DecisionTree::leaf(labels[rng.gen_range(0..labels.len())]);
    }
    let f = rng.gen_range(0..d);
    let v = half(rng, -8, 8);
    DecisionTree::node(
        f,
        v,
        random_tree(rng, depth - 1, d, labels),
        random_tree(rng, depth - 1, d, labels),
    )
}

/// A tree that splits at every level down to `depth`.
pub fn random_full_tree(rng: &mut ChaCha8Rng, depth: usize, d: usize, labels: &[Label]) -> DecisionTree {
    if depth == 0 {
        return DecisionTree::leaf(labels[rng.gen_range(0..labels.len())]);
    }
    let f = rng.gen_range(0..d);
    let v = half(rng, -8, 8);
    DecisionTree::node(
        f,
        v,
        random_full_tree(rng, depth - 1, d, labels),
        random_full_tree(rng, depth - 1, d, labels),
    )
}

/// Per-feature attacks mixing bounded, one-sided, unbounded and frozen
/// features with costs 1 or 2, and a budget in `0..=d+1`.
pub fn random_threat(rng: &mut ChaCha8Rng, d: usize) -> ThreatModel {
    let features = (0..d)
        .map(|_| {
            let cost = rng.gen_range(1..=2);
            match rng.gen_range(0..10) {
                0 => FeatureAttack::robust(),
                1 => FeatureAttack::new(f64::NEG_INFINITY, f64::INFINITY, cost),
                2 => FeatureAttack::new(-half(rng, 1, 4), 0.0, cost),
                3 => FeatureAttack::new(0.0, half(rng, 1, 4), cost),
                _ => FeatureAttack::new(-half(rng, 0, 4), half(rng, 0, 4), cost),
            }
        })
        .collect();
    ThreatModel::new(features, rng.gen_range(0..=d as u32 + 1)).unwrap()
}

pub fn binary() -> Vec<Label> {
    vec![Label(-1), Label(1)]
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, trees: usize, depth: usize, d: usize, labels: &[Label]) -> Ensemble {
    let ts = (0..trees).map(|_| random_tree(rng, depth, d, labels)).collect();
    Ensemble::new(ts, labels.to_vec(), d).unwrap()
}

/// Literal leaf pairing: every cost-0 attack of one leaf against every
/// positive-cost attack of every other leaf with a different label.
pub fn naive_pairing(annotated: &AnnotatedTree, threat: &ThreatModel) -> Vec<SymbolicAttack> {
    let leaves = annotated.leaves();
    let mut out = Vec::new();
    for (i, (y, sym)) in leaves.iter().enumerate() {
        for (j, (y2, sym2)) in leaves.iter().enumerate() {
            if i == j || y == y2 {
                continue;
            }
            for s in sym.iter().filter(|s| s.cost == 0) {
                for s2 in sym2.iter().filter(|s| s.cost > 0) {
                    let pre = s.pre.intersect(&s2.pre).unwrap();
                    if pre.is_empty() {
                        continue;
                    }
                    let post = s2.post.intersect(&pre.sum(threat.attack_box()).unwrap()).unwrap();
                    if let Some(a) = SymbolicAttack::new(pre, post, s2.cost) {
                        out.push(a);
                    }
                }
            }
        }
    }
    canonicalize(&mut out);
    out
}
