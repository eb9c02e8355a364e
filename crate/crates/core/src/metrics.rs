//! Certified stable region and the accuracy / robustness / resilience measures.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble_analysis::{initial_candidates, AnalysisState};
use crate::error::{Error, Result};
use crate::geometry::HyperRectangle;
use crate::model::{AttackOracle, Dataset, Ensemble, Label, LabeledInstance, ThreatModel};
use crate::par;
use crate::tree_analysis::SymbolicAttack;

/// The complement of the union of `unstable_pres`: every point outside all of
/// them is provably stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableRegion {
    dim: usize,
    unstable_pres: Vec<HyperRectangle>,
}

impl StableRegion {
    pub fn from_attacks(attacks: &[SymbolicAttack], dim: usize) -> Result<Self> {
        StableRegion::from_pres(attacks.iter().map(|s| s.pre.clone()).collect(), dim)
    }

    pub fn from_pres(mut pres: Vec<HyperRectangle>, dim: usize) -> Result<Self> {
        if let Some(bad) = pres.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        pres.retain(|p| !p.is_empty());
        pres.sort();
        pres.dedup();
        Ok(StableRegion {
            dim,
            unstable_pres: pres,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unstable_pres(&self) -> &[HyperRectangle] {
        &self.unstable_pres
    }

    pub fn is_certified_stable(&self, x: &[f64]) -> Result<bool> {
        self.check(x.len())?;
        Ok(!self.unstable_pres.iter().any(|p| p.contains(x).unwrap_or(false)))
    }

    /// Whether all of `h` lies in the certified region.
    pub fn is_certified_stable_box(&self, h: &HyperRectangle) -> Result<bool> {
        self.check(h.dim())?;
        if h.is_empty() {
            return Err(Error::InvalidOperand("empty box"));
        }
        Ok(!self.unstable_pres.iter().any(|p| p.intersects(h).unwrap_or(false)))
    }

    fn check(&self, d: usize) -> Result<()> {
        if d == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d,
            })
        }
    }
}

pub fn stable_region(attacks: &[SymbolicAttack], dim: usize) -> Result<StableRegion> {
    StableRegion::from_attacks(attacks, dim)
}

/// `count / total`, kept exact so measures can be compared without rounding.
/// Equality and ordering compare values, so `1/2 == 2/4`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Fraction {
    pub count: usize,
    pub total: usize,
}

impl Fraction {
    pub fn value(self) -> f64 {
        self.count as f64 / self.total as f64
    }
}

impl PartialEq for Fraction {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Fraction {}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fraction {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let lhs = self.count as u128 * other.total as u128;
        let rhs = other.count as u128 * self.total as u128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.count, self.total)
    }
}

fn fraction_of(data: &Dataset, hits: impl IntoIterator<Item = bool>) -> Result<Fraction> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Fraction {
        count: hits.into_iter().filter(|&h| h).count(),
        total: data.len(),
    })
}

fn check_data(model: &Ensemble, data: &Dataset) -> Result<()> {
    if data.n_features() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            found: data.n_features(),
        });
    }
    Ok(())
}

/// `a`: share of correctly classified instances.
pub fn accuracy(model: &Ensemble, data: &Dataset) -> Result<Fraction> {
    check_data(model, data)?;
    fraction_of(data, data.iter().map(|i| model.predict_unchecked(&i.x) == i.y))
}

/// `r̂`: correct and inside the certified region.
pub fn robustness_lower_bound(region: &StableRegion, model: &Ensemble, data: &Dataset) -> Result<Fraction> {
    check_data(model, data)?;
    let hits = data
        .iter()
        .map(|i| Ok(region.is_certified_stable(&i.x)? && model.predict_unchecked(&i.x) == i.y))
        .collect::<Result<Vec<bool>>>()?;
    fraction_of(data, hits)
}

/// `R̂`: correct, with the whole `ε`-neighbourhood inside the certified region.
///
/// With `clip`, neighbourhoods are first intersected with that domain; the
/// instance itself must still be certified.
pub fn resilience_lower_bound(
    region: &StableRegion,
    model: &Ensemble,
    data: &Dataset,
    epsilon: f64,
    clip: Option<&HyperRectangle>,
) -> Result<Fraction> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    check_data(model, data)?;
    let hits = data
        .iter()
        .map(|i| {
            if model.predict_unchecked(&i.x) != i.y || !region.is_certified_stable(&i.x)? {
                return Ok(false);
            }
            let mut n = HyperRectangle::ball(&i.x, epsilon);
            if let Some(domain) = clip {
                n = n.intersect(domain)?;
                if n.is_empty() {
                    return Ok(true);
                }
            }
            region.is_certified_stable_box(&n)
        })
        .collect::<Result<Vec<bool>>>()?;
    fraction_of(data, hits)
}

fn robust_flags(model: &Ensemble, data: &[LabeledInstance], threat: &ThreatModel) -> Result<Vec<bool>> {
    let oracle = AttackOracle::new(model, threat)?;
    par::map(data, |i| {
        if i.x.len() != model.n_features() {
            return Err(Error::DimensionMismatch {
                expected: model.n_features(),
                found: i.x.len(),
            });
        }
        Ok(model.predict_unchecked(&i.x) == i.y && oracle.is_stable(&i.x)?)
    })
    .into_iter()
    .collect()
}

/// `r`: correct and stable, decided by exhaustive enumeration.
pub fn exact_robustness(model: &Ensemble, data: &Dataset, threat: &ThreatModel) -> Result<Fraction> {
    check_data(model, data)?;
    fraction_of(data, robust_flags(model, data.instances(), threat)?)
}

/// `T(x)` when `x` is certified stable, `None` (abstain) otherwise.
pub fn globally_robust_predict(region: &StableRegion, model: &Ensemble, x: &[f64]) -> Result<Option<Label>> {
    Ok(if region.is_certified_stable(x)? {
        Some(model.predict(x)?)
    } else {
        None
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodExperiment {
    /// Robustness on the original set.
    pub r: Fraction,
    pub r_min: Fraction,
    pub r_max: Fraction,
    pub a_min: Fraction,
    pub a_max: Fraction,
    /// Robustness on the worst-case set.
    pub r_bar: Fraction,
    /// Per instance, a non-robust sampled neighbour if one was drawn, else the instance.
    pub worst: Dataset,
    /// `(accuracy, robustness)` of each synthetic set, in order.
    pub per_set: Vec<(Fraction, Fraction)>,
}

/// Draws `n_sets` synthetic test sets by replacing every instance with a
/// uniform sample of its `ε`-neighbourhood and measures robustness on each.
///
/// Extremes include the original set. Set `i` draws from the ChaCha stream `i`
/// of `seed`, so results do not depend on the thread count.
pub fn neighborhood_experiment(
    model: &Ensemble,
    data: &Dataset,
    epsilon: f64,
    threat: &ThreatModel,
    n_sets: usize,
    seed: u64,
) -> Result<NeighborhoodExperiment> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Config(format!("epsilon must be finite and >= 0, got {epsilon}")));
    }
    check_data(model, data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let base = robust_flags(model, data.instances(), threat)?;
    let a = accuracy(model, data)?;
    let r = fraction_of(data, base.iter().copied())?;

    let sets: Vec<u64> = (0..n_sets as u64).collect();
    let sampled = par::map(&sets, |&i| -> Result<(Vec<LabeledInstance>, Vec<bool>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i);
        let set: Vec<LabeledInstance> = data
            .iter()
            .map(|inst| {
                let z = inst
                    .x
                    .iter()
                    .map(|&v| if epsilon == 0.0 { v } else { rng.gen_range(v - epsilon..=v + epsilon) })
                    .collect();
                LabeledInstance::new(z, inst.y)
            })
            .collect();
        let flags = robust_flags_seq(model, &set, threat)?;
        Ok((set, flags))
    });

    let mut worst: Vec<LabeledInstance> = data.instances().to_vec();
    let mut found = vec![false; data.len()];
    let (mut r_min, mut r_max, mut a_min, mut a_max) = (r, r, a, a);
    let mut per_set = Vec::with_capacity(n_sets);
    for result in sampled {
        let (set, flags) = result?;
        let acc = fraction_of(data, set.iter().map(|i| model.predict_unchecked(&i.x) == i.y))?;
        let rob = fraction_of(data, flags.iter().copied())?;
        r_min = r_min.min(rob);
        r_max = r_max.max(rob);
        a_min = a_min.min(acc);
        a_max = a_max.max(acc);
        per_set.push((acc, rob));
        for (j, (inst, robust)) in set.into_iter().zip(flags).enumerate() {
            if !robust && !found[j] {
                found[j] = true;
                worst[j] = inst;
            }
        }
    }
    let worst = Dataset::new(worst, data.n_features())?;
    let r_bar = exact_robustness(model, &worst, threat)?;
    Ok(NeighborhoodExperiment {
        r,
        r_min,
        r_max,
        a_min,
        a_max,
        r_bar,
        worst,
        per_set,
    })
}

fn robust_flags_seq(model: &Ensemble, data: &[LabeledInstance], threat: &ThreatModel) -> Result<Vec<bool>> {
    let oracle = AttackOracle::new(model, threat)?;
    data.iter()
        .map(|i| Ok(model.predict_unchecked(&i.x) == i.y && oracle.is_stable(&i.x)?))
        .collect()
}

/// `r̂` after each of the given iteration counts of a single-worker refinement.
pub fn robustness_trace(
    model: &Ensemble,
    threat: &ThreatModel,
    data: &Dataset,
    checkpoints: &[usize],
    split_fraction: f64,
) -> Result<Vec<(usize, Fraction)>> {
    let mut checkpoints = checkpoints.to_vec();
    checkpoints.sort_unstable();
    let mut state = AnalysisState::new(model, threat, initial_candidates(model, threat, 1)?);
    let mut out = Vec::with_capacity(checkpoints.len());
    for k in checkpoints {
        while state.iterations() < k && !state.is_converged() {
            state.step(split_fraction)?;
        }
        let region = StableRegion::from_attacks(&state.attacks(), model.n_features())?;
        out.push((k, robustness_lower_bound(&region, model, data)?));
    }
    Ok(out)
}

/// One row of results for a (model, dataset, budget, ε) combination.
///
/// Construction checks `R̂ ≤ r̂ ≤ r ≤ a` and `r̄ ≤ r_min ≤ r ≤ r_max` on the
/// exact counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub dataset: String,
    pub model: String,
    pub budget: u32,
    pub epsilon: f64,
    pub instances: usize,
    pub a: Fraction,
    pub r: Option<Fraction>,
    pub r_hat: Fraction,
    pub resilience_hat: Fraction,
    pub r_bar: Option<Fraction>,
    pub r_min: Option<Fraction>,
    pub r_max: Option<Fraction>,
    pub a_min: Option<Fraction>,
    pub a_max: Option<Fraction>,
    pub analysis_secs: f64,
    pub measure_secs: f64,
    pub config: serde_json::Value,
}

/// CSV column order of [`MeasureReport::csv_row`].
pub const CSV_HEADER: [&str; 13] = [
    "dataset",
    "model",
    "b",
    "epsilon",
    "a",
    "r",
    "r_hat",
    "R_hat",
    "r_bar",
    "r_min",
    "r_max",
    "analysis_secs",
    "measure_secs",
];

#[derive(Default)]
pub struct MeasureInputs {
    pub dataset: String,
    pub model: String,
    pub budget: u32,
    pub epsilon: f64,
    pub a: Option<Fraction>,
    pub r: Option<Fraction>,
    pub r_hat: Option<Fraction>,
    pub resilience_hat: Option<Fraction>,
    pub experiment: Option<NeighborhoodExperiment>,
    pub analysis_secs: f64,
    pub measure_secs: f64,
    pub config: serde_json::Value,
}

impl MeasureReport {
    pub fn new(inputs: MeasureInputs) -> Result<Self> {
        let a = inputs.a.ok_or_else(|| Error::Invariant("accuracy missing".into()))?;
        let r_hat = inputs.r_hat.ok_or_else(|| Error::Invariant("r_hat missing".into()))?;
        let resilience_hat = inputs
            .resilience_hat
            .ok_or_else(|| Error::Invariant("R_hat missing".into()))?;
        let exp = inputs.experiment.as_ref();
        let r = inputs.r.or(exp.map(|e| e.r));
        let report = MeasureReport {
            dataset: inputs.dataset,
            model: inputs.model,
            budget: inputs.budget,
            epsilon: inputs.epsilon,
            instances: a.total,
            a,
            r,
            r_hat,
            resilience_hat,
            r_bar: exp.map(|e| e.r_bar),
            r_min: exp.map(|e| e.r_min),
            r_max: exp.map(|e| e.r_max),
            a_min: exp.map(|e| e.a_min),
            a_max: exp.map(|e| e.a_max),
            analysis_secs: inputs.analysis_secs,
            measure_secs: inputs.measure_secs,
            config: inputs.config,
        };
        report.check()?;
        Ok(report)
    }

    fn check(&self) -> Result<()> {
        let mut chain = vec![("R_hat", Some(self.resilience_hat)), ("r_hat", Some(self.r_hat))];
        chain.push(("r", self.r));
        chain.push(("a", Some(self.a)));
        ordered(&chain)?;
        ordered(&[("r_bar", self.r_bar), ("r_min", self.r_min), ("r", self.r), ("r_max", self.r_max)])?;
        Ok(())
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |f: Option<Fraction>| f.map_or(String::new(), |f| f.value().to_string());
        vec![
            self.dataset.clone(),
            self.model.clone(),
            self.budget.to_string(),
            self.epsilon.to_string(),
            self.a.value().to_string(),
            opt(self.r),
            self.r_hat.value().to_string(),
            self.resilience_hat.value().to_string(),
            opt(self.r_bar),
            opt(self.r_min),
            opt(self.r_max),
            format!("{:.6}", self.analysis_secs),
            format!("{:.6}", self.measure_secs),
        ]
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Checks that the present entries are non-decreasing.
fn ordered(chain: &[(&str, Option<Fraction>)]) -> Result<()> {
    let present: Vec<(&str, Fraction)> = chain.iter().filter_map(|&(n, f)| f.map(|f| (n, f))).collect();
    for w in present.windows(2) {
        let ((ln, l), (rn, r)) = (w[0], w[1]);
        if l > r {
            return Err(Error::Invariant(format!("{ln} = {l} exceeds {rn} = {r}")));
        }
    }
    Ok(())
}

/// Computes `a`, `r̂` and `R̂` for one ε, plus `r` when `threat` is given.
pub fn measure(
    region: &StableRegion,
    model: &Ensemble,
    data: &Dataset,
    epsilon: f64,
    exact: Option<&ThreatModel>,
    clip: Option<&HyperRectangle>,
) -> Result<MeasureInputs> {
    let start = Instant::now();
    let inputs = MeasureInputs {
        epsilon,
        a: Some(accuracy(model, data)?),
        r: exact.map(|t| exact_robustness(model, data, t)).transpose()?,
        r_hat: Some(robustness_lower_bound(region, model, data)?),
        resilience_hat: Some(resilience_lower_bound(region, model, data, epsilon, clip)?),
        budget: exact.map_or(0, ThreatModel::budget),
        ..Default::default()
    };
    Ok(MeasureInputs {
        measure_secs: start.elapsed().as_secs_f64(),
        ..inputs
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::example_tree;
    use crate::model::is_stable_exact;
    use crate::tree_analysis::analyze_tree;

    fn fixture() -> (Ensemble, ThreatModel, StableRegion, Dataset) {
        let tree = example_tree();
        let threat = ThreatModel::uniform(2, 1.0, 1).unwrap();
        let u = analyze_tree(&tree, &threat).unwrap();
        let region = stable_region(&u, 2).unwrap();
        let data = Dataset::from_rows(vec![
            (vec![0.0, 0.0], Label(1)),
            (vec![0.0, 4.5], Label(1)),
            (vec![12.0, 7.0], Label(1)),
        ])
        .unwrap();
        (Ensemble::from_tree(tree, 2).unwrap(), threat, region, data)
    }

    fn frac(count: usize, total: usize) -> Fraction {
        Fraction { count, total }
    }

    #[test]
    fn region_membership() {
        let (model, threat, region, _) = fixture();
        assert_eq!(region.unstable_pres().len(), 6);
        assert!(region.is_certified_stable(&[0.0, 0.0]).unwrap());
        assert!(!region.is_certified_stable(&[0.0, 4.5]).unwrap());
        assert!(!is_stable_exact(&model, &[0.0, 4.5], &threat).unwrap());
        assert!(region.is_certified_stable(&[12.0, 7.0]).unwrap());
        assert!(region.is_certified_stable(&[1.0]).is_err());
    }

    #[test]
    fn region_boxes() {
        let (_, _, region, _) = fixture();
        assert!(region.is_certified_stable_box(&HyperRectangle::ball(&[0.0, 0.0], 0.5)).unwrap());
        assert!(!region.is_certified_stable_box(&HyperRectangle::ball(&[12.0, 7.0], 0.5)).unwrap());
        for x in [[0.0, 0.0], [0.0, 4.5], [12.0, 7.0], [9.5, 6.0]] {
            assert_eq!(
                region.is_certified_stable_box(&HyperRectangle::ball(&x, 0.0)).unwrap(),
                region.is_certified_stable(&x).unwrap()
            );
        }
    }

    #[test]
    fn empty_and_duplicate_regions() {
        let empty = stable_region(&[], 2).unwrap();
        assert!(empty.unstable_pres().is_empty());
        assert!(empty.is_certified_stable(&[1e9, -1e9]).unwrap());
        let s = SymbolicAttack::initial(2);
        let dup = stable_region(&[s.clone(), s], 2).unwrap();
        assert_eq!(dup.unstable_pres().len(), 1);
    }

    #[test]
    fn worked_measures() {
        let (model, threat, region, data) = fixture();
        assert_eq!(accuracy(&model, &data).unwrap(), frac(3, 3));
        assert_eq!(exact_robustness(&model, &data, &threat).unwrap(), frac(2, 3));
        assert_eq!(robustness_lower_bound(&region, &model, &data).unwrap(), frac(2, 3));
        assert_eq!(resilience_lower_bound(&region, &model, &data, 0.5, None).unwrap(), frac(1, 3));
        assert_eq!(resilience_lower_bound(&region, &model, &data, 0.0, None).unwrap(), frac(2, 3));
        assert_eq!(resilience_lower_bound(&region, &model, &data, 1e6, None).unwrap(), frac(0, 3));
        assert!(resilience_lower_bound(&region, &model, &data, -1.0, None).is_err());
        let none = Dataset::new(vec![], 2).unwrap();
        assert!(matches!(accuracy(&model, &none), Err(Error::EmptyDataset)));
    }

    #[test]
    fn degenerate_measures() {
        let (model, threat, region, data) = fixture();
        let everything = stable_region(&[SymbolicAttack::initial(2)], 2).unwrap();
        assert_eq!(robustness_lower_bound(&everything, &model, &data).unwrap().count, 0);
        let nothing = stable_region(&[], 2).unwrap();
        assert_eq!(
            robustness_lower_bound(&nothing, &model, &data).unwrap(),
            accuracy(&model, &data).unwrap()
        );
        assert_eq!(
            exact_robustness(&model, &data, &threat.with_budget(0)).unwrap(),
            accuracy(&model, &data).unwrap()
        );
        let wrong = Dataset::from_rows(data.iter().map(|i| (i.x.clone(), Label(-i.y.0))).collect()).unwrap();
        assert_eq!(accuracy(&model, &wrong).unwrap().count, 0);
        assert_eq!(exact_robustness(&model, &wrong, &threat).unwrap().count, 0);
        let _ = region;
    }

    #[test]
    fn clipping_only_tightens() {
        let (model, _, region, data) = fixture();
        let domain = HyperRectangle::new(vec![crate::geometry::Interval::closed(0.0, 20.0); 2]);
        let clipped = resilience_lower_bound(&region, &model, &data, 0.5, Some(&domain)).unwrap();
        let plain = resilience_lower_bound(&region, &model, &data, 0.5, None).unwrap();
        assert!(clipped >= plain);
        assert!(clipped <= robustness_lower_bound(&region, &model, &data).unwrap());
    }

    #[test]
    fn abstaining_wrapper() {
        let (model, _, region, _) = fixture();
        assert_eq!(globally_robust_predict(&region, &model, &[0.0, 0.0]).unwrap(), Some(Label(1)));
        assert_eq!(globally_robust_predict(&region, &model, &[0.0, 4.5]).unwrap(), None);
        let nothing = stable_region(&[], 2).unwrap();
        assert!(globally_robust_predict(&nothing, &model, &[0.0, 4.5]).unwrap().is_some());
    }

    #[test]
    fn neighborhoods() {
        let (model, threat, _, data) = fixture();
        let still = neighborhood_experiment(&model, &data, 0.0, &threat, 5, 1).unwrap();
        assert_eq!((still.r_min, still.r_max, still.r_bar), (still.r, still.r, still.r));
        let a = neighborhood_experiment(&model, &data, 1.5, &threat, 20, 9).unwrap();
        let b = neighborhood_experiment(&model, &data, 1.5, &threat, 20, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.r_bar <= a.r_min && a.r_min <= a.r && a.r <= a.r_max);
        assert!(a.a_min <= a.a_max);
    }

    #[test]
    fn report_ordering_is_enforced() {
        let good = MeasureInputs {
            a: Some(frac(3, 3)),
            r: Some(frac(2, 3)),
            r_hat: Some(frac(2, 3)),
            resilience_hat: Some(frac(1, 3)),
            ..Default::default()
        };
        let report = MeasureReport::new(good).unwrap();
        assert_eq!(report.csv_row().len(), CSV_HEADER.len());
        let bad = MeasureInputs {
            a: Some(frac(3, 3)),
            r: Some(frac(1, 3)),
            r_hat: Some(frac(2, 3)),
            resilience_hat: Some(frac(1, 3)),
            ..Default::default()
        };
        assert!(matches!(MeasureReport::new(bad), Err(Error::Invariant(_))));
    }

    #[test]
    fn trace_on_single_tree() {
        let (model, threat, _, data) = fixture();
        let trace = robustness_trace(&model, &threat, &data, &[0, 1, 5], 0.05).unwrap();
        assert!(trace.iter().all(|(_, f)| *f == frac(2, 3)));
    }
}
