//! Symbolic attacks and the stability analysis of a single decision tree.
//!
//! A symbolic attack `⟨pre | post | k⟩` stands for the instances in the box
//! `pre` together with their manipulations in the box `post`, reachable at cost
//! at most `k`. Annotating a tree pushes the attack covering the whole space
//! down through every split; each split either lets the attack follow for free
//! (the post-image already falls on that side) or, budget permitting, pays to
//! push instances near the threshold across it. Pairing cost-0 attacks in one
//! leaf with paid attacks in a leaf of a different class yields the set `U`
//! whose pre-images cover every instance where the tree may be unstable.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bound, HyperRectangle, Interval};
use crate::model::{DecisionTree, Label, ThreatModel};

/// `⟨pre | post | cost⟩`. Equality, ordering and hashing ignore `split_count`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolicAttack {
    pub pre: HyperRectangle,
    pub post: HyperRectangle,
    pub cost: u32,
    /// How many splits produced this attack; only the ensemble refinement uses it.
    #[serde(skip)]
    pub split_count: u32,
}

impl SymbolicAttack {
    /// Returns `None` when either box is empty.
    pub fn new(pre: HyperRectangle, post: HyperRectangle, cost: u32) -> Option<Self> {
        if pre.is_empty() || post.is_empty() {
            return None;
        }
        Some(SymbolicAttack {
            pre,
            post,
            cost,
            split_count: 0,
        })
    }

    /// `⟨(-inf,+inf)^d | (-inf,+inf)^d | 0⟩`
    pub fn initial(d: usize) -> Self {
        SymbolicAttack {
            pre: HyperRectangle::full(d),
            post: HyperRectangle::full(d),
            cost: 0,
            split_count: 0,
        }
    }

    /// Whether `(x, z)` is an (instance, manipulation) pair described by `self`.
    pub fn covers(&self, x: &[f64], z: &[f64]) -> bool {
        self.pre.contains(x).unwrap_or(false) && self.post.contains(z).unwrap_or(false)
    }

    fn key(&self) -> (&HyperRectangle, &HyperRectangle, u32) {
        (&self.pre, &self.post, self.cost)
    }
}

impl PartialEq for SymbolicAttack {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for SymbolicAttack {}

impl std::hash::Hash for SymbolicAttack {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PartialOrd for SymbolicAttack {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SymbolicAttack {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for SymbolicAttack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{} | {} | {}⟩", self.pre, self.post, self.cost)
    }
}

/// Sorts and removes duplicate attacks.
pub fn canonicalize(attacks: &mut Vec<SymbolicAttack>) {
    attacks.sort();
    attacks.dedup();
}

fn push_refined(
    out: &mut Vec<SymbolicAttack>,
    s: &SymbolicAttack,
    f: usize,
    pre_f: Interval,
    post_f: Interval,
    cost: u32,
) {
    if pre_f.is_empty() || post_f.is_empty() {
        return;
    }
    out.push(SymbolicAttack {
        pre: s.pre.with_component(f, pre_f),
        post: s.post.with_component(f, post_f),
        cost,
        split_count: s.split_count,
    });
}

/// Attacks reaching the left child of a split `x_f <= v`.
pub fn refine_left(s: &SymbolicAttack, f: usize, v: f64, threat: &ThreatModel) -> Vec<SymbolicAttack> {
    let mut out = Vec::with_capacity(2);
    let pre_f = *s.pre.get(f);
    let post_f = *s.post.get(f);
    let atk = threat.feature(f);
    let (delta_l, cost_f) = (atk.delta_l, atk.cost);
    let untouched = pre_f == post_f;

    // The post-image already reaches the left side: follow at no extra cost.
    let post_left = post_f.intersect(&Interval::at_most(v));
    if !post_left.is_empty() {
        let pre_left = if untouched {
            pre_f.intersect(&Interval::at_most(v))
        } else {
            pre_f.intersect(&Interval::at_most(v - delta_l.min(0.0)))
        };
        push_refined(&mut out, s, f, pre_left, post_left, s.cost);
    }

    // Instances just right of `v` pushed across it by a negative perturbation.
    let window = Interval::new(Bound::open(v), Bound::closed(v - delta_l));
    if untouched
        && delta_l < 0.0
        && pre_f.intersects(&window)
        && s.cost as u64 + cost_f as u64 <= threat.budget() as u64
    {
        let landing = Interval::new(Bound::open(v + delta_l), Bound::closed(v));
        push_refined(
            &mut out,
            s,
            f,
            pre_f.intersect(&window),
            post_f.intersect(&landing),
            s.cost + cost_f,
        );
    }
    out
}

/// Attacks reaching the right child of a split `x_f <= v`.
pub fn refine_right(s: &SymbolicAttack, f: usize, v: f64, threat: &ThreatModel) -> Vec<SymbolicAttack> {
    let mut out = Vec::with_capacity(2);
    let pre_f = *s.pre.get(f);
    let post_f = *s.post.get(f);
    let atk = threat.feature(f);
    let (delta_r, cost_f) = (atk.delta_r, atk.cost);
    let untouched = pre_f == post_f;

    let post_right = post_f.intersect(&Interval::greater_than(v));
    if !post_right.is_empty() {
        let pre_right = if untouched {
            pre_f.intersect(&Interval::greater_than(v))
        } else {
            pre_f.intersect(&Interval::greater_than(v - delta_r.max(0.0)))
        };
        push_refined(&mut out, s, f, pre_right, post_right, s.cost);
    }

    let window = Interval::new(Bound::open(v - delta_r), Bound::closed(v));
    if untouched
        && delta_r > 0.0
        && pre_f.intersects(&window)
        && s.cost as u64 + cost_f as u64 <= threat.budget() as u64
    {
        let landing = Interval::new(Bound::open(v), Bound::closed(v + delta_r));
        push_refined(
            &mut out,
            s,
            f,
            pre_f.intersect(&window),
            post_f.intersect(&landing),
            s.cost + cost_f,
        );
    }
    out
}

/// A decision tree whose nodes carry their symbolic attacks.
#[derive(Clone, Debug)]
pub enum AnnotatedTree {
    Leaf {
        label: Label,
        /// Position of the leaf in left-to-right order.
        index: usize,
        sym: Vec<SymbolicAttack>,
    },
    Node {
        feature: usize,
        threshold: f64,
        sym: Vec<SymbolicAttack>,
        left: Box<AnnotatedTree>,
        right: Box<AnnotatedTree>,
    },
}

impl AnnotatedTree {
    pub fn sym(&self) -> &[SymbolicAttack] {
        match self {
            AnnotatedTree::Leaf { sym, .. } | AnnotatedTree::Node { sym, .. } => sym,
        }
    }

    /// Node annotations in pre-order (root, left subtree, right subtree).
    pub fn preorder(&self) -> Vec<&[SymbolicAttack]> {
        let mut out = Vec::new();
        self.collect_preorder(&mut out);
        out
    }

    fn collect_preorder<'a>(&'a self, out: &mut Vec<&'a [SymbolicAttack]>) {
        out.push(self.sym());
        if let AnnotatedTree::Node { left, right, .. } = self {
            left.collect_preorder(out);
            right.collect_preorder(out);
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<(Label, &[SymbolicAttack])> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(Label, &'a [SymbolicAttack])>) {
        match self {
            AnnotatedTree::Leaf { label, sym, .. } => out.push((*label, sym)),
            AnnotatedTree::Node { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }

    /// Indices of the leaves whose region can meet `h`.
    fn leaves_meeting(&self, h: &HyperRectangle, out: &mut Vec<usize>) {
        match self {
            AnnotatedTree::Leaf { index, .. } => out.push(*index),
            AnnotatedTree::Node {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                let i = h.get(*feature);
                if i.intersects(&Interval::at_most(*threshold)) {
                    left.leaves_meeting(h, out);
                }
                if i.intersects(&Interval::greater_than(*threshold)) {
                    right.leaves_meeting(h, out);
                }
            }
        }
    }
}

/// Annotates `tree` top-down starting from the attack set `initial` at the root.
pub fn annotate(tree: &DecisionTree, initial: Vec<SymbolicAttack>, threat: &ThreatModel) -> Result<AnnotatedTree> {
    let need = tree.required_features();
    if threat.dim() < need {
        return Err(Error::DimensionMismatch {
            expected: need,
            found: threat.dim(),
        });
    }
    if let Some(s) = initial.iter().find(|s| s.pre.dim() != threat.dim() || s.post.dim() != threat.dim()) {
        return Err(Error::DimensionMismatch {
            expected: threat.dim(),
            found: s.pre.dim().min(s.post.dim()),
        });
    }
    let mut initial = initial;
    canonicalize(&mut initial);
    let mut next_leaf = 0;
    Ok(annotate_node(tree, initial, threat, &mut next_leaf))
}

fn annotate_node(
    tree: &DecisionTree,
    sym: Vec<SymbolicAttack>,
    threat: &ThreatModel,
    next_leaf: &mut usize,
) -> AnnotatedTree {
    match tree {
        DecisionTree::Leaf { label } => {
            let index = *next_leaf;
            *next_leaf += 1;
            AnnotatedTree::Leaf {
                label: *label,
                index,
                sym,
            }
        }
        DecisionTree::Node {
            feature,
            threshold,
            left,
            right,
        } => {
            let (f, v) = (*feature, *threshold);
            let mut to_left = Vec::new();
            let mut to_right = Vec::new();
            for s in &sym {
                to_left.extend(refine_left(s, f, v, threat));
                to_right.extend(refine_right(s, f, v, threat));
            }
            canonicalize(&mut to_left);
            canonicalize(&mut to_right);
            AnnotatedTree::Node {
                feature: f,
                threshold: v,
                left: Box::new(annotate_node(left, to_left, threat, next_leaf)),
                right: Box::new(annotate_node(right, to_right, threat, next_leaf)),
                sym,
            }
        }
    }
}

/// Annotates `tree` from the whole-space attack and pairs leaves of different
/// classes. The result is grouped by the leaf holding the unmanipulated
/// instances (left-to-right), each group sorted, without duplicates.
pub fn analyze_tree(tree: &DecisionTree, threat: &ThreatModel) -> Result<Vec<SymbolicAttack>> {
    let annotated = annotate(tree, vec![SymbolicAttack::initial(threat.dim())], threat)?;
    pair_leaves(&annotated, threat)
}

/// The leaf-pairing step on an already annotated tree.
pub fn pair_leaves(annotated: &AnnotatedTree, threat: &ThreatModel) -> Result<Vec<SymbolicAttack>> {
    let leaves = annotated.leaves();
    let atk = threat.attack_box();
    let mut groups: Vec<Vec<SymbolicAttack>> = vec![Vec::new(); leaves.len()];
    let mut hits = Vec::new();
    for &(target_label, target_sym) in &leaves {
        for paid in target_sym.iter().filter(|s| s.cost > 0) {
            hits.clear();
            annotated.leaves_meeting(&paid.pre, &mut hits);
            for &i in &hits {
                let (label, sym) = leaves[i];
                if label == target_label {
                    continue;
                }
                for free in sym.iter().filter(|s| s.cost == 0) {
                    let pre = free.pre.intersect(&paid.pre)?;
                    if pre.is_empty() {
                        continue;
                    }
                    let post = paid.post.intersect(&pre.sum(atk)?)?;
                    if let Some(s) = SymbolicAttack::new(pre, post, paid.cost) {
                        groups[i].push(s);
                    }
                }
            }
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for mut g in groups {
        canonicalize(&mut g);
        out.extend(g.into_iter().filter(|s| seen.insert(s.clone())));
    }
    Ok(out)
}
