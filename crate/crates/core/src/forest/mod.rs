//! Random-forest learner for regression and classification.
//!
//! Trees are CART: every node draws `mtry` candidate features, tries the
//! midpoints between consecutive distinct values as thresholds and keeps the
//! split with the lowest weighted child impurity (sum of squared errors for
//! regression, size-weighted Gini for classification). Each tree gets its own
//! generator seeded with [`mix_seed`], so training is deterministic and
//! independent of how trees are scheduled across threads.

mod dataset;
mod model;
mod tree;

pub use dataset::{split_dataset, Dataset, DatasetSplit, SplitSpec, Targets, Task};
pub use model::{
    evaluate, feature_importance, train_forest, ClassMetrics, ClassificationMetrics, Forest,
    ForestParams, Metrics, Prediction, RegressionMetrics, MODEL_FORMAT_VERSION,
};
pub use tree::{train_tree, LeafValue, Node, TreeParams};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("dataset needs at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("stratified splitting requires a classification dataset")]
    StratifyOnRegression,
    #[error("split fractions must each be in (0,1) and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("no rows to train on")]
    EmptyRows,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("model task does not match the dataset task")]
    TaskMismatch,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature values must be finite")]
    NonFiniteInput,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("model document: {0}")]
    Model(String),
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Per-tree seed: splitmix64 finalizer applied to `seed ^ (i + 1) * GAMMA`.
pub fn mix_seed(seed: u64, tree_index: u64) -> u64 {
    let mut z = seed ^ tree_index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
