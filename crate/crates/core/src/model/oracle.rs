//! Exact stability checking by enumeration.
//!
//! Threshold classifiers are piecewise constant on the cells cut out by their
//! thresholds, so it suffices to try one representative perturbed value per
//! reachable cell and feature: the two ends of the reachable range
//! `[x_f + δ_l, x_f + δ_r]`, and each threshold `v` in that range together with
//! the next representable value above it (splits send `x_f <= v` left).

use std::ops::ControlFlow;

use super::{DecisionTree, Ensemble, ThreatModel};
use crate::error::{Error, Result};

/// Default cap on attack representatives per instance.
pub const DEFAULT_ORACLE_CAP: u128 = 5_000_000;

/// Sorted, deduplicated split thresholds per feature.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Thresholds(Vec<Vec<f64>>);

impl Thresholds {
    pub fn of_trees<'a>(trees: impl IntoIterator<Item = &'a DecisionTree>, d: usize) -> Self {
        let mut per = vec![Vec::new(); d];
        for t in trees {
            for (f, v) in t.splits_bfs() {
                per[f].push(v);
            }
        }
        for v in &mut per {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        Thresholds(per)
    }

    pub fn of_ensemble(e: &Ensemble) -> Self {
        Thresholds::of_trees(e.trees(), e.n_features())
    }

    pub fn feature(&self, f: usize) -> &[f64] {
        &self.0[f]
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Representative values for feature `f` starting from `x_f`.
    ///
    /// Unbounded perturbations are truncated to the span of `x_f` and the
    /// feature's thresholds, widened by 1; predictions are constant beyond it.
    pub fn representatives(&self, f: usize, x_f: f64, threat: &ThreatModel) -> Vec<f64> {
        let a = threat.feature(f);
        let thr = &self.0[f];
        let first = thr.first().copied().unwrap_or(x_f).min(x_f);
        let last = thr.last().copied().unwrap_or(x_f).max(x_f);
        let lo = if a.delta_l.is_finite() {
            x_f + a.delta_l
        } else {
            first - 1.0
        };
        let hi = if a.delta_r.is_finite() {
            x_f + a.delta_r
        } else {
            last + 1.0
        };
        let mut reps = vec![lo, hi];
        let start = thr.partition_point(|&v| v < lo);
        for &v in thr[start..].iter().take_while(|&&v| v <= hi) {
            reps.push(v);
            let up = v.next_up();
            if up <= hi {
                reps.push(up);
            }
        }
        reps.sort_by(f64::total_cmp);
        reps.dedup();
        reps
    }
}

/// Enumerates every attack representative for an instance and decides
/// stability by brute force.
#[derive(Clone, Debug)]
pub struct AttackOracle<'a> {
    ensemble: &'a Ensemble,
    threat: &'a ThreatModel,
    thresholds: Thresholds,
    cap: u128,
}

impl<'a> AttackOracle<'a> {
    pub fn new(ensemble: &'a Ensemble, threat: &'a ThreatModel) -> Result<Self> {
        threat.check_dim(ensemble.n_features())?;
        Ok(AttackOracle {
            ensemble,
            threat,
            thresholds: Thresholds::of_ensemble(ensemble),
            cap: DEFAULT_ORACLE_CAP,
        })
    }

    pub fn with_cap(mut self, cap: u128) -> Self {
        self.cap = cap;
        self
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    /// Number of representatives [`Self::for_each_attack`] would visit for `x`.
    pub fn count(&self, x: &[f64]) -> u128 {
        count_attacks(self.threat, x, &self.thresholds)
    }

    /// Visits every representative `z ∈ A(x)` (including `x` itself).
    /// Stops early when `visit` breaks.
    pub fn for_each_attack<B>(
        &self,
        x: &[f64],
        visit: impl FnMut(&[f64]) -> ControlFlow<B>,
    ) -> Result<ControlFlow<B>> {
        self.ensemble_dim(x)?;
        let count = self.count(x);
        if count > self.cap {
            return Err(Error::OracleInfeasible {
                count,
                cap: self.cap,
            });
        }
        Ok(walk_attacks(self.threat, x, &self.thresholds, visit))
    }

    fn ensemble_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.ensemble.n_features() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.ensemble.n_features(),
                found: x.len(),
            })
        }
    }

    /// Exact stability: no representative attack changes the ensemble's vote.
    pub fn is_stable(&self, x: &[f64]) -> Result<bool> {
        Ok(self.find_flip(x)?.is_none())
    }

    /// An attack that changes the prediction, if any exists.
    pub fn find_flip(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        self.ensemble_dim(x)?;
        let base = self.ensemble.predict_unchecked(x);
        let flow = self.for_each_attack(x, |z| {
            if self.ensemble.predict_unchecked(z) != base {
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
}

fn count_attacks(threat: &ThreatModel, x: &[f64], thresholds: &Thresholds) -> u128 {
    let total_cost: u64 = threat.features().iter().map(|a| a.cost as u64).sum();
    let b = (threat.budget() as u64).min(total_cost) as usize;
    let mut ways = vec![0u128; b + 1];
    ways[0] = 1;
    for (f, &x_f) in x.iter().enumerate() {
        let c = threat.feature(f).cost as usize;
        if c > b {
            continue;
        }
        let n = thresholds.representatives(f, x_f, threat).len() as u128;
        for spent in (0..=b - c).rev() {
            ways[spent + c] = ways[spent + c].saturating_add(ways[spent].saturating_mul(n));
        }
    }
    ways.iter().fold(0u128, |acc, w| acc.saturating_add(*w))
}

fn walk_attacks<B>(
    threat: &ThreatModel,
    x: &[f64],
    thresholds: &Thresholds,
    mut visit: impl FnMut(&[f64]) -> ControlFlow<B>,
) -> ControlFlow<B> {
    let reps: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(f, &x_f)| thresholds.representatives(f, x_f, threat))
        .collect();
    let mut z = x.to_vec();
    walk(threat, x, &reps, 0, threat.budget(), &mut z, &mut visit)
}

fn walk<B>(
    threat: &ThreatModel,
    x: &[f64],
    reps: &[Vec<f64>],
    f: usize,
    left: u32,
    z: &mut Vec<f64>,
    visit: &mut impl FnMut(&[f64]) -> ControlFlow<B>,
) -> ControlFlow<B> {
    if f == x.len() {
        return visit(z);
    }
    walk(threat, x, reps, f + 1, left, z, visit)?;
    let c = threat.feature(f).cost;
    if c <= left {
        for &r in &reps[f] {
            z[f] = r;
            walk(threat, x, reps, f + 1, left - c, z, visit)?;
        }
        z[f] = x[f];
    }
    ControlFlow::Continue(())
}

/// Every representative manipulation of `x`, deduplicated, in enumeration order.
pub fn enumerate_attacks(threat: &ThreatModel, x: &[f64], thresholds: &Thresholds) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    let _ = walk_attacks(threat, x, thresholds, |z| {
        out.push(z.to_vec());
        ControlFlow::<()>::Continue(())
    });
    let mut seen = std::collections::HashSet::new();
    out.retain(|z| seen.insert(z.iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
    out
}

/// Exact stability of `ensemble` on `x` under `threat`, with the default cap.
pub fn is_stable_exact(ensemble: &Ensemble, x: &[f64], threat: &ThreatModel) -> Result<bool> {
    AttackOracle::new(ensemble, threat)?.is_stable(x)
}
