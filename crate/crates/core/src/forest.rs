//! Ensembles of independently partitioned trees, averaged pointwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};
use crate::loss::LossSpec;
use crate::partition::{from_json_unbounded, sample_partition};
use crate::selection::fit_forest_auto;
use crate::tree::{fit_tree, FittedTree};
use crate::types::{check_point, Dataset, FitConfig, LambdaMode, ValueBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireForest", into = "WireForest")]
pub struct Forest {
    dim: usize,
    spec: LossSpec,
    value_box: ValueBox,
    config: FitConfig,
    trees: Vec<FittedTree>,
}

/// Value box for `config` on a sample of size `n`: the explicit one, else the family default.
pub fn resolve_box(spec: &LossSpec, config: &FitConfig, n: usize) -> Result<ValueBox> {
    let bx = config.value_box.unwrap_or_else(|| spec.domain(n));
    ValueBox::new(bx.lo, bx.hi)?;
    spec.check_value(bx.lo)
        .and_then(|_| spec.check_value(bx.hi))
        .map_err(|_| MondrianError::input(format!("box [{}, {}] leaves the domain of {spec}", bx.lo, bx.hi)))?;
    Ok(bx)
}

/// Fits `config.tree_count` trees on independent substreams of `config.seed`.
///
/// Fixed-time configurations prune every tree at the same `lambda`; automatic
/// configurations delegate to penalized per-tree selection.
pub fn fit_forest(data: &Dataset, spec: &LossSpec, config: &FitConfig) -> Result<Forest> {
    config.validate()?;
    let lambda = match config.lambda_mode {
        LambdaMode::Fixed(l) => l,
        LambdaMode::Auto { .. } => return fit_forest_auto(data, spec, config),
    };
    let value_box = resolve_box(spec, config, data.len())?;
    let trees = (0..config.tree_count)
        .into_par_iter()
        .map(|b| {
            let partition = sample_partition(data.dim(), lambda, config.seed, b as u64, config.leaf_cap)
                .map_err(|e| tag_tree(e, b))?;
            fit_tree(&partition, lambda, data, spec, value_box)
        })
        .collect::<Result<Vec<_>>>()?;
    Forest::from_trees(trees, *spec, value_box, config.clone())
}

pub(crate) fn tag_tree(err: MondrianError, tree: usize) -> MondrianError {
    match err {
        MondrianError::Resource(m) => MondrianError::Resource(format!("tree {tree}: {m}")),
        other => other,
    }
}

impl Forest {
    pub fn from_trees(
        trees: Vec<FittedTree>,
        spec: LossSpec,
        value_box: ValueBox,
        config: FitConfig,
    ) -> Result<Self> {
        let dim = trees
            .first()
            .map(FittedTree::dim)
            .ok_or_else(|| MondrianError::input("a forest needs at least one tree"))?;
        if trees
            .iter()
            .any(|t| t.dim() != dim || t.loss() != spec || t.value_box() != value_box)
        {
            return Err(MondrianError::input("trees disagree on dimension, loss or box"));
        }
        Ok(Forest {
            dim,
            spec,
            value_box,
            config,
            trees,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> LossSpec {
        self.spec
    }

    pub fn value_box(&self) -> ValueBox {
        self.value_box
    }

    pub fn config(&self) -> &FitConfig {
        &self.config
    }

    pub fn trees(&self) -> &[FittedTree] {
        &self.trees
    }

    /// Stopping time used by each tree.
    pub fn lambdas(&self) -> Vec<f64> {
        self.trees.iter().map(FittedTree::lambda).collect()
    }

    /// Arithmetic mean of the per-tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_unchecked(x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.dim() != self.dim {
            return Err(MondrianError::input(format!(
                "points have dimension {} but the forest has {}",
                data.dim(),
                self.dim
            )));
        }
        Ok(data
            .features()
            .par_chunks_exact(self.dim)
            .map(|x| self.predict_unchecked(x))
            .collect())
    }

    /// Sign decision for surrogate-loss forests; a zero score goes to -1.
    pub fn classify(&self, x: &[f64]) -> Result<i8> {
        if !self.spec.is_surrogate() {
            return Err(MondrianError::input(format!(
                "classification needs a surrogate loss, this forest uses {}",
                self.spec
            )));
        }
        Ok(if self.predict(x)? > 0.0 { 1 } else { -1 })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json_unbounded(text)
    }
}

const FOREST_FORMAT: &str = "mondrian-forest/1";

#[derive(Serialize, Deserialize)]
struct WireForest {
    format: String,
    dimension: usize,
    tree_count: usize,
    loss: LossSpec,
    value_box: ValueBox,
    seed: u64,
    config: FitConfig,
    trees: Vec<FittedTree>,
}

impl From<Forest> for WireForest {
    fn from(f: Forest) -> Self {
        WireForest {
            format: FOREST_FORMAT.into(),
            dimension: f.dim,
            tree_count: f.trees.len(),
            loss: f.spec,
            value_box: f.value_box,
            seed: f.config.seed,
            config: f.config,
            trees: f.trees,
        }
    }
}

impl TryFrom<WireForest> for Forest {
    type Error = MondrianError;

    fn try_from(w: WireForest) -> Result<Self> {
        if w.format != FOREST_FORMAT {
            return Err(MondrianError::input(format!("unknown forest format {:?}", w.format)));
        }
        if w.trees.len() != w.tree_count || w.seed != w.config.seed {
            return Err(MondrianError::input("forest header disagrees with its body"));
        }
        let forest = Forest::from_trees(w.trees, w.loss, w.value_box, w.config)?;
        if forest.dim != w.dimension {
            return Err(MondrianError::input("forest header dimension disagrees with its trees"));
        }
        Ok(forest)
    }
}
