//! Brute-force cross-checks of analysis results.
//!
//! Everything here works on concrete points and the enumerating oracle, and
//! shares no code with the symbolic analysis beyond box membership.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{HyperRectangle, Interval};
use crate::model::{AttackOracle, DecisionTree, Ensemble, ThreatModel, Thresholds};
use crate::tree_analysis::{AnnotatedTree, SymbolicAttack};

/// The box of points reaching each node, in pre-order.
pub fn node_regions(tree: &DecisionTree, d: usize) -> Vec<HyperRectangle> {
    fn walk(t: &DecisionTree, region: HyperRectangle, out: &mut Vec<HyperRectangle>) {
        out.push(region.clone());
        if let DecisionTree::Node {
            feature,
            threshold,
            left,
            right,
        } = t
        {
            let i = *region.get(*feature);
            walk(left, region.with_component(*feature, i.intersect(&Interval::at_most(*threshold))), out);
            walk(right, region.with_component(*feature, i.intersect(&Interval::greater_than(*threshold))), out);
        }
    }
    let mut out = Vec::new();
    walk(tree, HyperRectangle::full(d), &mut out);
    out
}

/// Cheapest total cost of a manipulation of `x` landing in `region`, if one
/// exists within the budget.
pub fn min_crossing_cost(region: &HyperRectangle, x: &[f64], threat: &ThreatModel) -> Option<u32> {
    if region.is_empty() {
        return None;
    }
    let mut cost: u64 = 0;
    for (f, &v) in x.iter().enumerate() {
        let target = region.get(f);
        if target.contains(v) {
            continue;
        }
        let a = threat.feature(f);
        let reach = Interval::closed(v + a.delta_l, v + a.delta_r);
        if !reach.intersects(target) {
            return None;
        }
        cost += u64::from(a.cost);
    }
    (cost <= u64::from(threat.budget())).then_some(cost as u32)
}

/// Offset used for "just above" probes. A power of two, so that on dyadic
/// thresholds and perturbations every probe and every `x + δ` stays exact.
pub const NUDGE: f64 = 1.0 / 1024.0;

/// Interesting coordinates for feature `f`: thresholds, the ends of the
/// windows from which they can be crossed, a point just above each, and
/// midpoints in between.
pub fn probe_values(thresholds: &Thresholds, threat: &ThreatModel, f: usize) -> Vec<f64> {
    let a = threat.feature(f);
    let mut pts = Vec::new();
    for &v in thresholds.feature(f) {
        for p in [v, v - a.delta_l, v - a.delta_r] {
            if p.is_finite() {
                pts.push(p);
                pts.push(p + NUDGE);
            }
        }
    }
    if pts.is_empty() {
        return vec![0.0];
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut out = vec![pts[0] - 1.0, pts[pts.len() - 1] + 1.0];
    for w in pts.windows(2) {
        out.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    out.extend(pts);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// The product of [`probe_values`] over all features, or `cap` seeded samples
/// from it when larger.
pub fn probe_grid(thresholds: &Thresholds, threat: &ThreatModel, cap: usize, seed: u64) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..thresholds.dim()).map(|f| probe_values(thresholds, threat, f)).collect();
    let size = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    match size {
        Some(n) if n <= cap => {
            let mut out = vec![Vec::with_capacity(axes.len())];
            for axis in &axes {
                out = out
                    .into_iter()
                    .flat_map(|p| {
                        axis.iter().map(move |&v| {
                            let mut q = p.clone();
                            q.push(v);
                            q
                        })
                    })
                    .collect();
            }
            out
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..cap)
                .map(|_| axes.iter().map(|a| a[rng.gen_range(0..a.len())]).collect())
                .collect()
        }
    }
}

/// A manipulation of `x` that changes the prediction without being covered
/// by any of `attacks`.
pub fn find_uncovered_flip(
    model: &Ensemble,
    threat: &ThreatModel,
    attacks: &[SymbolicAttack],
    x: &[f64],
) -> Result<Option<Vec<f64>>> {
    let oracle = AttackOracle::new(model, threat)?;
    let y = model.predict(x)?;
    let relevant: Vec<&SymbolicAttack> = attacks.iter().filter(|s| s.pre.contains(x).unwrap_or(false)).collect();
    let flow = oracle.for_each_attack(x, |z| {
        if model.predict(z).is_ok_and(|p| p != y) && !relevant.iter().any(|s| s.post.contains(z).unwrap_or(false)) {
            ControlFlow::Break(z.to_vec())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok(match flow {
        ControlFlow::Break(z) => Some(z),
        ControlFlow::Continue(()) => None,
    })
}

/// A pair `(x, z)` reaching a node that its annotation misses.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationGap {
    /// Pre-order index of the node.
    pub node: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub min_cost: u32,
}

/// Checks, for one instance, that every node's annotation contains an attack
/// with `x` in its pre-image, each reachable `z` in its post-image, and cost
/// equal to the cheapest way for `x` to reach the node.
pub fn check_annotation(
    tree: &DecisionTree,
    annotated: &AnnotatedTree,
    threat: &ThreatModel,
    x: &[f64],
) -> Result<Option<AnnotationGap>> {
    let d = threat.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    let regions = node_regions(tree, d);
    let annotations = annotated.preorder();
    if regions.len() != annotations.len() {
        return Err(Error::InvalidOperand("annotated tree does not match the tree"));
    }
    let zs = crate::model::enumerate_attacks(threat, x, &Thresholds::of_trees([tree], d));
    for (node, (region, sym)) in regions.iter().zip(annotations).enumerate() {
        let Some(min_cost) = min_crossing_cost(region, x, threat) else {
            continue;
        };
        for z in zs.iter().filter(|z| region.contains(z).unwrap_or(false)) {
            let covered = sym
                .iter()
                .any(|s| s.cost == min_cost && s.pre.contains(x).unwrap_or(false) && s.post.contains(z).unwrap_or(false));
            if !covered {
                return Ok(Some(AnnotationGap {
                    node,
                    x: x.to_vec(),
                    z: z.clone(),
                    min_cost,
                }));
            }
        }
    }
    Ok(None)
}
