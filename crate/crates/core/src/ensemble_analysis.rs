//! Iterative refinement of candidate attacks for majority-voting ensembles.
//!
//! Candidates start as the union of the per-tree results. Each iteration pops
//! the highest-priority candidates and looks at the ensemble's box predictions
//! on their pre- and post-images:
//!
//! * both the same single label: the ensemble is stable there, drop it;
//! * overlapping label sets: split the pre-image and retry on the pieces;
//! * disjoint label sets: nothing more can be proven, keep it as ended.
//!
//! The returned set (remaining candidates plus ended ones) covers every
//! (instance, manipulation) pair that changes the ensemble's vote, whatever
//! the stopping point.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Interval;
use crate::model::{Ensemble, ThreatModel};
use crate::tree_analysis::{analyze_tree, canonicalize, SymbolicAttack};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Per-worker iteration cap; `None` runs until no candidate is left.
    pub max_iterations: Option<usize>,
    /// Fraction of the queue split per iteration (rounded up, at least 1).
    pub split_fraction: f64,
    pub workers: usize,
    /// Echoed in reports. The refinement itself is deterministic.
    pub rng_seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            max_iterations: Some(1000),
            split_fraction: 0.05,
            workers: 1,
            rng_seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn to_convergence() -> Self {
        AnalysisConfig {
            max_iterations: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "split fraction must lie in (0,1], got {}",
                self.split_fraction
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        Ok(())
    }
}

/// Queue priority `(n_c, n_u)`: splits so far, then undecided trees on the
/// pre-image. Smaller pops first.
pub fn priority(s: &SymbolicAttack, ensemble: &Ensemble) -> (u32, usize) {
    (s.split_count, ensemble.undecided_trees(&s.pre))
}

/// Picks the split `(feature, threshold)` for a candidate.
///
/// Trees are scanned undecided-on-`pre` first, then undecided-on-`post`, then
/// the rest, each group in ensemble order and each tree breadth-first. The
/// first threshold lying in the matching component of `pre` whose cuts
/// actually divide it wins. `None` means the candidate cannot be split.
pub fn choose_split(s: &SymbolicAttack, ensemble: &Ensemble, threat: &ThreatModel) -> Option<(usize, f64)> {
    let trees = ensemble.trees();
    let mut rank: Vec<(u8, usize)> = trees
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let group = if t.is_undecided_on(&s.pre) {
                0
            } else if t.is_undecided_on(&s.post) {
                1
            } else {
                2
            };
            (group, i)
        })
        .collect();
    rank.sort_unstable();
    for (_, i) in rank {
        for (f, v) in trees[i].splits_bfs() {
            let component = s.pre.get(f);
            if component.contains(v) && cut(component, &cut_points(f, v, threat)).len() > 1 {
                return Some((f, v));
            }
        }
    }
    None
}

fn cut_points(f: usize, v: f64, threat: &ThreatModel) -> Vec<f64> {
    let a = threat.feature(f);
    let mut points: Vec<f64> = [v + a.delta_l, v, v + a.delta_r]
        .into_iter()
        .filter(|p| p.is_finite())
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    points
}

/// Non-empty pieces of `interval` cut right after each point (`(.., p]`, `(p, ..`).
fn cut(interval: &Interval, points: &[f64]) -> Vec<Interval> {
    let mut pieces = Vec::with_capacity(points.len() + 1);
    let mut rest = *interval;
    for &p in points {
        let piece = rest.intersect(&Interval::at_most(p));
        if !piece.is_empty() {
            pieces.push(piece);
        }
        rest = rest.intersect(&Interval::greater_than(p));
    }
    if !rest.is_empty() {
        pieces.push(rest);
    }
    pieces
}

/// Splits the `f`-th component of `s.pre` at `v + δ_l`, `v`, `v + δ_r`.
/// Each piece keeps the cost, gets the post-image reachable from it, and one
/// more split on its counter. Pieces whose post-image vanishes are dropped.
pub fn split(s: &SymbolicAttack, f: usize, v: f64, threat: &ThreatModel) -> Result<Vec<SymbolicAttack>> {
    if f >= s.pre.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.pre.dim(),
            found: f + 1,
        });
    }
    if !s.pre.get(f).contains(v) {
        return Err(Error::InvalidOperand("split threshold outside the pre-image"));
    }
    let mut out = Vec::with_capacity(4);
    for piece in cut(s.pre.get(f), &cut_points(f, v, threat)) {
        let pre = s.pre.with_component(f, piece);
        let post = s.post.intersect(&pre.sum(threat.attack_box())?)?;
        if let Some(mut child) = SymbolicAttack::new(pre, post, s.cost) {
            child.split_count = s.split_count + 1;
            out.push(child);
        }
    }
    Ok(out)
}

#[derive(Debug)]
struct Queued {
    key: Reverse<(u32, usize, u64)>,
    attack: SymbolicAttack,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Counters kept by one refinement loop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub initial_candidates: usize,
    pub iterations: usize,
    pub discarded: usize,
    pub split: usize,
    pub unsplittable: usize,
    pub ended: usize,
    pub remaining: usize,
}

/// Candidates `C` (a min-priority queue) and ended attacks `E`.
pub struct AnalysisState<'a> {
    ensemble: &'a Ensemble,
    threat: &'a ThreatModel,
    candidates: BinaryHeap<Queued>,
    ended: Vec<SymbolicAttack>,
    seq: u64,
    stats: WorkerStats,
}

impl<'a> AnalysisState<'a> {
    pub fn new(ensemble: &'a Ensemble, threat: &'a ThreatModel, candidates: Vec<SymbolicAttack>) -> Self {
        let mut state = AnalysisState {
            ensemble,
            threat,
            candidates: BinaryHeap::with_capacity(candidates.len()),
            ended: Vec::new(),
            seq: 0,
            stats: WorkerStats {
                initial_candidates: candidates.len(),
                ..Default::default()
            },
        };
        for s in candidates {
            state.push(s);
        }
        state
    }

    fn push(&mut self, attack: SymbolicAttack) {
        let (n_c, n_u) = priority(&attack, self.ensemble);
        self.candidates.push(Queued {
            key: Reverse((n_c, n_u, self.seq)),
            attack,
        });
        self.seq += 1;
    }

    pub fn is_converged(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn ended(&self) -> usize {
        self.ended.len()
    }

    pub fn iterations(&self) -> usize {
        self.stats.iterations
    }

    /// The current `C ∪ E`. Sound at every step.
    pub fn attacks(&self) -> Vec<SymbolicAttack> {
        let mut out = self.ended.clone();
        out.extend(self.candidates.iter().map(|q| q.attack.clone()));
        canonicalize(&mut out);
        out
    }

    /// One iteration on the top `⌈fraction·|C|⌉` candidates.
    pub fn step(&mut self, split_fraction: f64) -> Result<()> {
        let quota = ((split_fraction * self.candidates.len() as f64).ceil() as usize)
            .clamp(1, self.candidates.len().max(1));
        let batch: Vec<SymbolicAttack> = (0..quota)
            .filter_map(|_| self.candidates.pop().map(|q| q.attack))
            .collect();
        for s in batch {
            let on_pre = self.ensemble.predict_box_unchecked(&s.pre);
            let on_post = self.ensemble.predict_box_unchecked(&s.post);
            match (on_pre.as_singleton(), on_post.as_singleton()) {
                (Some(a), Some(b)) if a == b => {
                    self.stats.discarded += 1;
                }
                _ if on_pre.intersects(&on_post) => {
                    match choose_split(&s, self.ensemble, self.threat) {
                        Some((f, v)) => {
                            self.stats.split += 1;
                            for child in split(&s, f, v, self.threat)? {
                                self.push(child);
                            }
                        }
                        None => {
                            self.stats.unsplittable += 1;
                            self.ended.push(s);
                        }
                    }
                }
                _ => self.ended.push(s),
            }
        }
        self.stats.iterations += 1;
        Ok(())
    }

    pub fn run(&mut self, config: &AnalysisConfig) -> Result<()> {
        while !self.is_converged() && config.max_iterations.is_none_or(|m| self.stats.iterations < m) {
            self.step(config.split_fraction)?;
        }
        Ok(())
    }

    /// `C ∪ E` and the final counters.
    pub fn finish(self) -> (Vec<SymbolicAttack>, WorkerStats) {
        let mut stats = self.stats;
        stats.remaining = self.candidates.len();
        stats.ended = self.ended.len();
        let mut out = self.ended;
        out.extend(self.candidates.into_vec().into_iter().map(|q| q.attack));
        (out, stats)
    }
}

/// Analysis telemetry, one record per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub trees: usize,
    pub workers: usize,
    pub initial_candidates: usize,
    pub iterations: usize,
    pub candidates: usize,
    pub ended: usize,
    pub discarded: usize,
    pub split: usize,
    pub unsplittable: usize,
    pub attacks: usize,
    pub converged: bool,
    pub tree_analysis_secs: f64,
    pub refinement_secs: f64,
    pub wall_time_secs: f64,
    pub config: AnalysisConfig,
    pub per_worker: Vec<WorkerStats>,
}

#[derive(Clone, Debug)]
pub struct EnsembleAnalysis {
    /// `U = C ∪ E`, sorted and deduplicated.
    pub attacks: Vec<SymbolicAttack>,
    pub telemetry: Telemetry,
}

/// Runs the per-tree analyses and the refinement loop.
pub fn analyze_ensemble(ensemble: &Ensemble, threat: &ThreatModel, config: &AnalysisConfig) -> Result<EnsembleAnalysis> {
    config.validate()?;
    threat.check_dim(ensemble.n_features())?;
    let start = Instant::now();

    let mut initial = initial_candidates(ensemble, threat, config.workers)?;
    let tree_analysis_secs = start.elapsed().as_secs_f64();
    let initial_candidates = initial.len();

    // Deal the priority-ordered queue round-robin.
    let mut keyed: Vec<((u32, usize), usize, SymbolicAttack)> = initial
        .drain(..)
        .enumerate()
        .map(|(i, s)| (priority(&s, ensemble), i, s))
        .collect();
    keyed.sort_by_key(|k| (k.0, k.1));
    let mut partitions: Vec<Vec<SymbolicAttack>> = vec![Vec::new(); config.workers];
    for (i, (_, _, s)) in keyed.into_iter().enumerate() {
        partitions[i % config.workers].push(s);
    }

    let refine_start = Instant::now();
    let results: Vec<Result<(Vec<SymbolicAttack>, WorkerStats)>> = if config.workers == 1 {
        partitions
            .into_iter()
            .map(|p| run_partition(ensemble, threat, config, p))
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = partitions
                .into_iter()
                .map(|p| scope.spawn(move || run_partition(ensemble, threat, config, p)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("refinement worker panicked"))
                .collect()
        })
    };
    let refinement_secs = refine_start.elapsed().as_secs_f64();

    let mut attacks = Vec::new();
    let mut per_worker = Vec::with_capacity(results.len());
    for r in results {
        let (a, stats) = r?;
        attacks.extend(a);
        per_worker.push(stats);
    }
    canonicalize(&mut attacks);

    let sum = |f: fn(&WorkerStats) -> usize| per_worker.iter().map(f).sum::<usize>();
    let telemetry = Telemetry {
        trees: ensemble.trees().len(),
        workers: config.workers,
        initial_candidates,
        iterations: per_worker.iter().map(|w| w.iterations).max().unwrap_or(0),
        candidates: sum(|w| w.remaining),
        ended: sum(|w| w.ended),
        discarded: sum(|w| w.discarded),
        split: sum(|w| w.split),
        unsplittable: sum(|w| w.unsplittable),
        attacks: attacks.len(),
        converged: per_worker.iter().all(|w| w.remaining == 0),
        tree_analysis_secs,
        refinement_secs,
        wall_time_secs: start.elapsed().as_secs_f64(),
        config: config.clone(),
        per_worker,
    };
    log::info!(
        "ensemble analysis: {} initial candidates, {} iterations, |C| = {}, |E| = {}, {:.3}s",
        telemetry.initial_candidates,
        telemetry.iterations,
        telemetry.candidates,
        telemetry.ended,
        telemetry.wall_time_secs
    );
    Ok(EnsembleAnalysis { attacks, telemetry })
}

/// Union of the per-tree results, in ensemble order without duplicates.
pub fn initial_candidates(ensemble: &Ensemble, threat: &ThreatModel, workers: usize) -> Result<Vec<SymbolicAttack>> {
    threat.check_dim(ensemble.n_features())?;
    let mut seen = HashSet::new();
    Ok(per_tree_attacks(ensemble, threat, workers.max(1))?
        .into_iter()
        .flatten()
        .filter(|s| seen.insert(s.clone()))
        .collect())
}

fn run_partition(
    ensemble: &Ensemble,
    threat: &ThreatModel,
    config: &AnalysisConfig,
    partition: Vec<SymbolicAttack>,
) -> Result<(Vec<SymbolicAttack>, WorkerStats)> {
    let mut state = AnalysisState::new(ensemble, threat, partition);
    state.run(config)?;
    Ok(state.finish())
}

fn per_tree_attacks(ensemble: &Ensemble, threat: &ThreatModel, workers: usize) -> Result<Vec<Vec<SymbolicAttack>>> {
    let trees = ensemble.trees();
    if workers <= 1 || trees.len() == 1 {
        return trees.iter().map(|t| analyze_tree(t, threat)).collect();
    }
    let chunk = trees.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = trees
            .chunks(chunk)
            .map(|ts| scope.spawn(move || ts.iter().map(|t| analyze_tree(t, threat)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(trees.len());
        for h in handles {
            out.extend(h.join().expect("tree analysis worker panicked")?);
        }
        Ok(out)
    })
}
