//! Certification of decision trees and tree ensembles against budgeted
//! interval attackers.
//!
//! The analysis computes a finite set of symbolic attacks over-approximating
//! every (instance, manipulation) pair that can change a prediction. Points
//! outside the union of their pre-images are certified stable, which yields
//! lower bounds on robustness and resilience over a test set.
//!
//! ```
//! use treecert::{analyze_tree, stable_region, DecisionTree, Label, ThreatModel};
//!
//! let tree = DecisionTree::node(0, 10.0, DecisionTree::leaf(Label(1)), DecisionTree::leaf(Label(-1)));
//! let threat = ThreatModel::uniform(1, 1.0, 1)?;
//! let region = stable_region(&analyze_tree(&tree, &threat)?, 1)?;
//! assert!(region.is_certified_stable(&[0.0])?);
//! assert!(!region.is_certified_stable(&[10.5])?);
//! # Ok::<(), treecert::Error>(())
//! ```

pub mod audit;
pub mod ensemble_analysis;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
mod par;
pub mod tree_analysis;

pub use ensemble_analysis::{analyze_ensemble, AnalysisConfig, EnsembleAnalysis, Telemetry};
pub use error::{Error, Result};
pub use geometry::{Bound, HyperRectangle, Interval};
pub use metrics::{
    accuracy, exact_robustness, globally_robust_predict, neighborhood_experiment, resilience_lower_bound,
    robustness_lower_bound, stable_region, Fraction, MeasureReport, StableRegion,
};
pub use model::{
    enumerate_attacks, is_stable_exact, AttackOracle, Dataset, DecisionTree, Ensemble, FeatureAttack, Label,
    LabelSet, LabeledInstance, Neighborhood, ThreatModel, Thresholds,
};
pub use tree_analysis::{analyze_tree, annotate, AnnotatedTree, SymbolicAttack};
