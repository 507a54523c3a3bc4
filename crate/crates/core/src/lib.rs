//! Sufficient fairness conditions for decision-tree ensembles.
//!
//! The pipeline has three stages:
//!
//! 1. [`stability::analyze`] computes the unstable set `U`: hyper-rectangles
//!    outside of which changing the sensitive features never changes the
//!    ensemble's prediction.
//! 2. [`synthesis::synthesize_from_unstable`] searches for conjunctions of
//!    threshold constraints (itemsets) whose regions avoid `U`. Every such
//!    itemset is a sufficient condition for the absence of causal
//!    discrimination.
//! 3. [`evaluation`] scores the result on instance sets and ranks formulas
//!    by how many instances they cover.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod itemsets;
pub mod model;
pub mod render;
pub mod stability;
pub mod synthesis;

pub mod cli;

pub use error::{Error, Result};
pub use evaluation::{InstanceSet, Provenance};
pub use geometry::{Bound, HyperRectangle, Interval};
pub use itemsets::{Item, Itemset, Op};
pub use model::{Ensemble, Feature, FeatureKind, FeatureMetadata, SensitiveSet, TreeNode};
pub use stability::{analyze, AnalysisConfig, UnstableSet};
pub use synthesis::{synthesize, synthesize_from_unstable, FormulaSet, SynthesisConfig};
