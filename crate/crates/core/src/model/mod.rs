//! Decision trees, majority-voting ensembles, datasets and the attacker model.
//!
//! A tree routes an instance to its left child iff `x_f <= v`. Box predictions
//! follow the same convention: the left child is reachable iff the box meets
//! `(-inf,v]` and the right child iff it meets `(v,+inf)`.

mod oracle;
mod threat;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{HyperRectangle, Interval};

pub use oracle::{enumerate_attacks, is_stable_exact, AttackOracle, Thresholds, DEFAULT_ORACLE_CAP};
pub use threat::{FeatureAttack, ThreatModel};

/// A class label. Ordered by value, which is also the tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub i64);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A small sorted set of labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelSet(Vec<Label>);

impl LabelSet {
    pub fn singleton(label: Label) -> Self {
        LabelSet(vec![label])
    }

    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut v: Vec<Label> = labels.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        LabelSet(v)
    }

    pub fn insert(&mut self, label: Label) {
        if let Err(pos) = self.0.binary_search(&label) {
            self.0.insert(pos, label);
        }
    }

    pub fn union_with(&mut self, other: &LabelSet) {
        for &l in &other.0 {
            self.insert(l);
        }
    }

    pub fn contains(&self, label: Label) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn intersects(&self, other: &LabelSet) -> bool {
        self.0.iter().any(|&l| other.contains(l))
    }

    /// The only element, if there is exactly one.
    pub fn as_singleton(&self) -> Option<Label> {
        match self.0.as_slice() {
            [l] => Some(*l),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        self.0.iter().copied()
    }
}

/// A binary threshold tree.
#[derive(Clone, Debug, PartialEq)]
pub enum DecisionTree {
    Leaf {
        label: Label,
    },
    Node {
        feature: usize,
        threshold: f64,
        left: Box<DecisionTree>,
        right: Box<DecisionTree>,
    },
}

impl DecisionTree {
    pub fn leaf(label: Label) -> Self {
        DecisionTree::Leaf { label }
    }

    pub fn node(feature: usize, threshold: f64, left: DecisionTree, right: DecisionTree) -> Self {
        DecisionTree::Node {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Number of features the tree reads, i.e. one past the largest index.
    pub fn required_features(&self) -> usize {
        match self {
            DecisionTree::Leaf { .. } => 0,
            DecisionTree::Node {
                feature,
                left,
                right,
                ..
            } => (feature + 1)
                .max(left.required_features())
                .max(right.required_features()),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            DecisionTree::Leaf { .. } => 0,
            DecisionTree::Node { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            DecisionTree::Leaf { .. } => 1,
            DecisionTree::Node { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn leaf_labels(&self) -> LabelSet {
        let mut out = LabelSet::default();
        self.collect_labels(&mut out);
        out
    }

    fn collect_labels(&self, out: &mut LabelSet) {
        match self {
            DecisionTree::Leaf { label } => out.insert(*label),
            DecisionTree::Node { left, right, .. } => {
                left.collect_labels(out);
                right.collect_labels(out);
            }
        }
    }

    /// Checks feature indices against `d` and that every threshold is finite.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            DecisionTree::Leaf { .. } => Ok(()),
            DecisionTree::Node {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= d {
                    return Err(Error::InvalidModel(format!(
                        "feature index {feature} out of range for {d} features"
                    )));
                }
                if !threshold.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "non-finite threshold {threshold} on feature {feature}"
                    )));
                }
                left.validate(d)?;
                right.validate(d)
            }
        }
    }

    /// Splits `(feature, threshold)` in breadth-first order.
    pub fn splits_bfs(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([self]);
        while let Some(t) = queue.pop_front() {
            if let DecisionTree::Node {
                feature,
                threshold,
                left,
                right,
            } = t
            {
                out.push((*feature, *threshold));
                queue.push_back(left);
                queue.push_back(right);
            }
        }
        out
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        let need = self.required_features();
        if x.len() < need {
            return Err(Error::DimensionMismatch {
                expected: need,
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> Label {
        let mut t = self;
        loop {
            match t {
                DecisionTree::Leaf { label } => return *label,
                DecisionTree::Node {
                    feature,
                    threshold,
                    left,
                    right,
                } => t = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// `t(H)`: every label some point of `h` can receive.
    pub fn predict_box(&self, h: &HyperRectangle) -> Result<LabelSet> {
        if h.is_empty() {
            return Err(Error::InvalidOperand("box prediction on an empty box"));
        }
        let need = self.required_features();
        if h.dim() < need {
            return Err(Error::DimensionMismatch {
                expected: need,
                found: h.dim(),
            });
        }
        let mut out = LabelSet::default();
        self.predict_box_into(h, &mut out);
        Ok(out)
    }

    pub(crate) fn predict_box_into(&self, h: &HyperRectangle, out: &mut LabelSet) {
        match self {
            DecisionTree::Leaf { label } => out.insert(*label),
            DecisionTree::Node {
                feature,
                threshold,
                left,
                right,
            } => {
                let i = h.get(*feature);
                let goes_right = i.intersects(&Interval::greater_than(*threshold));
                let goes_left = i.intersects(&Interval::at_most(*threshold));
                if goes_left {
                    left.predict_box_into(h, out);
                }
                if goes_right {
                    right.predict_box_into(h, out);
                }
            }
        }
    }

    /// `|t(H)| > 1` without building the label set.
    pub(crate) fn is_undecided_on(&self, h: &HyperRectangle) -> bool {
        let mut out = LabelSet::default();
        self.predict_box_into(h, &mut out);
        out.len() > 1
    }
}

/// Outcome of a point vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vote {
    pub label: Label,
    /// No label reached a strict majority and `label` came from the tie-break.
    pub tied: bool,
}

/// A majority-voting forest over a fixed label alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    trees: Vec<DecisionTree>,
    labels: LabelSet,
    n_features: usize,
}

impl Ensemble {
    /// Validates and builds an ensemble. The tree count must be odd.
    pub fn new(trees: Vec<DecisionTree>, labels: Vec<Label>, n_features: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidModel("an ensemble needs at least one tree".into()));
        }
        if trees.len() % 2 == 0 {
            return Err(Error::InvalidModel(format!(
                "ensembles must have an odd number of trees, got {}",
                trees.len()
            )));
        }
        let labels = LabelSet::from_labels(labels);
        if labels.is_empty() {
            return Err(Error::InvalidModel("empty label alphabet".into()));
        }
        for (i, t) in trees.iter().enumerate() {
            t.validate(n_features)
                .map_err(|e| Error::InvalidModel(format!("tree {i}: {e}")))?;
            for l in t.leaf_labels().iter() {
                if !labels.contains(l) {
                    return Err(Error::InvalidModel(format!(
                        "tree {i}: leaf label {l} is not in the label alphabet"
                    )));
                }
            }
        }
        Ok(Ensemble {
            trees,
            labels,
            n_features,
        })
    }

    /// A one-tree ensemble whose alphabet is the set of the tree's leaf labels.
    pub fn from_tree(tree: DecisionTree, n_features: usize) -> Result<Self> {
        let labels = tree.leaf_labels().iter().collect();
        Ensemble::new(vec![tree], labels, n_features)
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d == self.n_features {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: d,
            })
        }
    }

    pub fn vote(&self, x: &[f64]) -> Result<Vote> {
        self.check_dim(x.len())?;
        Ok(self.vote_unchecked(x))
    }

    pub(crate) fn vote_unchecked(&self, x: &[f64]) -> Vote {
        let mut counts: Vec<(Label, usize)> = Vec::with_capacity(self.labels.len());
        for t in &self.trees {
            let l = t.predict_unchecked(x);
            match counts.iter_mut().find(|(k, _)| *k == l) {
                Some((_, c)) => *c += 1,
                None => counts.push((l, 1)),
            }
        }
        // Highest count wins; ties go to the smallest label.
        let (label, count) = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("ensembles are never empty");
        Vote {
            label,
            tied: 2 * count <= self.trees.len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        self.vote(x).map(|v| v.label)
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> Label {
        self.vote_unchecked(x).label
    }

    /// `T(H)`: `{y}` when more than half of the trees are decided on `y` over
    /// `h`, otherwise the whole alphabet.
    pub fn predict_box(&self, h: &HyperRectangle) -> Result<LabelSet> {
        if h.is_empty() {
            return Err(Error::InvalidOperand("box prediction on an empty box"));
        }
        self.check_dim(h.dim())?;
        Ok(self.predict_box_unchecked(h))
    }

    pub(crate) fn predict_box_unchecked(&self, h: &HyperRectangle) -> LabelSet {
        let mut decided: Vec<(Label, usize)> = Vec::new();
        let mut scratch = LabelSet::default();
        for t in &self.trees {
            scratch.0.clear();
            t.predict_box_into(h, &mut scratch);
            if let Some(l) = scratch.as_singleton() {
                match decided.iter_mut().find(|(k, _)| *k == l) {
                    Some((_, c)) => *c += 1,
                    None => decided.push((l, 1)),
                }
            }
        }
        match decided.into_iter().find(|&(_, c)| 2 * c > self.trees.len()) {
            Some((l, _)) => LabelSet::singleton(l),
            None => self.labels.clone(),
        }
    }

    /// Number of trees `t` with `|t(h)| > 1`.
    pub fn undecided_trees(&self, h: &HyperRectangle) -> usize {
        self.trees.iter().filter(|t| t.is_undecided_on(h)).count()
    }
}

/// A labelled feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub x: Vec<f64>,
    pub y: Label,
}

impl LabeledInstance {
    pub fn new(x: Vec<f64>, y: Label) -> Self {
        LabeledInstance { x, y }
    }
}

/// A sequence of labelled instances sharing one dimensionality.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    instances: Vec<LabeledInstance>,
    n_features: usize,
}

impl Dataset {
    pub fn new(instances: Vec<LabeledInstance>, n_features: usize) -> Result<Self> {
        if let Some(bad) = instances.iter().find(|i| i.x.len() != n_features) {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                found: bad.x.len(),
            });
        }
        Ok(Dataset {
            instances,
            n_features,
        })
    }

    /// Builds a dataset from rows whose lengths must all agree.
    pub fn from_rows(rows: Vec<(Vec<f64>, Label)>) -> Result<Self> {
        let d = rows.first().map_or(0, |(x, _)| x.len());
        Dataset::new(
            rows.into_iter()
                .map(|(x, y)| LabeledInstance::new(x, y))
                .collect(),
            d,
        )
    }

    pub fn instances(&self) -> &[LabeledInstance] {
        &self.instances
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledInstance> {
        self.instances.iter()
    }

    /// Pads (with zeros) or rejects to reach `d` features. Sparse formats omit
    /// trailing zero features, so a test split may look narrower than the model.
    pub fn with_features(mut self, d: usize) -> Result<Self> {
        if d < self.n_features {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.n_features,
            });
        }
        for i in &mut self.instances {
            i.x.resize(d, 0.0);
        }
        self.n_features = d;
        Ok(self)
    }
}

/// The closed `L∞` ball `{z : ‖z − x‖∞ ≤ ε}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Neighborhood {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::Config(format!("neighborhood radius must be finite and >= 0, got {radius}")));
        }
        Ok(Neighborhood { center, radius })
    }

    pub fn to_box(&self) -> HyperRectangle {
        HyperRectangle::ball(&self.center, self.radius)
    }
}
