//! Mondrian forests for general convex losses.
//!
//! Random axis-aligned partitions of `[0,1]^d` are sampled independently of the
//! data, pruned at a stopping time, and carry one box-constrained loss minimizer
//! per leaf. Forests average the trees.

pub mod cli;
pub mod density;
pub mod error;
pub mod experiment;
pub mod forest;
pub mod leaf;
pub mod loss;
pub mod partition;
pub mod rng;
pub mod selection;
pub mod synth;
pub mod tree;
pub mod types;

pub use error::{MondrianError, Result};
pub use forest::{fit_forest, Forest};
pub use leaf::{fit_leaf, FitMethod, LeafFit};
pub use loss::{ExpFamily, LossSpec, Surrogate};
pub use partition::{sample_partition, PartitionTree};
pub use selection::{fit_forest_auto, penalty_path, PenaltyPath};
pub use tree::{fit_tree, FittedTree};
pub use types::{Cell, Dataset, FitConfig, LambdaMode, Point, ValueBox};
