//! Single-tree estimators: a pruned partition with one fitted constant per leaf.

use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};
use crate::leaf::fit_leaf;
use crate::loss::LossSpec;
use crate::partition::PartitionTree;
use crate::types::{check_point, Cell, Dataset, ValueBox};

/// A partition pruned at `lambda` with one constant per leaf (leaf ids in pre-order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireFittedTree", into = "WireFittedTree")]
pub struct FittedTree {
    partition: PartitionTree,
    lambda: f64,
    leaf_values: Vec<f64>,
    loss: LossSpec,
    value_box: ValueBox,
    leaf_of_node: Vec<usize>,
}

impl FittedTree {
    /// Assembles a tree from a partition and per-leaf values of `partition.leaves_at(lambda)`.
    pub fn from_parts(
        partition: &PartitionTree,
        lambda: f64,
        leaf_values: Vec<f64>,
        loss: LossSpec,
        value_box: ValueBox,
    ) -> Result<Self> {
        let partition = if lambda == partition.horizon() {
            partition.clone()
        } else {
            partition.pruned(lambda)?
        };
        let view = partition.view(lambda)?;
        if view.leaf_count() != leaf_values.len() {
            return Err(MondrianError::input(format!(
                "{} leaf values for {} leaves",
                leaf_values.len(),
                view.leaf_count()
            )));
        }
        let mut leaf_of_node = vec![usize::MAX; partition.nodes().len()];
        for leaf in view.leaves() {
            leaf_of_node[leaf.node] = leaf.id;
        }
        drop(view);
        Ok(FittedTree {
            partition,
            lambda,
            leaf_values,
            loss,
            value_box,
            leaf_of_node,
        })
    }

    pub fn partition(&self) -> &PartitionTree {
        &self.partition
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn leaf_values(&self) -> &[f64] {
        &self.leaf_values
    }

    pub fn loss(&self) -> LossSpec {
        self.loss
    }

    pub fn value_box(&self) -> ValueBox {
        self.value_box
    }

    pub fn dim(&self) -> usize {
        self.partition.dim()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_values.len()
    }

    pub fn leaf_id(&self, x: &[f64]) -> Result<usize> {
        check_point(x, self.dim())?;
        Ok(self.leaf_id_unchecked(x))
    }

    pub(crate) fn leaf_id_unchecked(&self, x: &[f64]) -> usize {
        self.leaf_of_node[self.partition.locate_node(self.lambda, x)]
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim())?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.leaf_values[self.leaf_id_unchecked(x)]
    }

    /// Leaf cells with their values, in leaf-id order.
    pub fn leaves(&self) -> impl Iterator<Item = (&Cell, f64)> + '_ {
        let mut nodes = vec![0usize; self.leaf_values.len()];
        for (node, &id) in self.leaf_of_node.iter().enumerate() {
            if id != usize::MAX {
                nodes[id] = node;
            }
        }
        nodes
            .into_iter()
            .zip(&self.leaf_values)
            .map(move |(node, &v)| (self.partition.nodes()[node].cell(), v))
    }

    /// Mean loss of this tree on `data`.
    pub fn empirical_risk(&self, data: &Dataset) -> Result<f64> {
        if data.dim() != self.dim() {
            return Err(MondrianError::input("dataset dimension does not match the tree"));
        }
        empirical_risk(data, &self.loss, |x| self.predict_unchecked(x))
    }
}

/// Groups the responses of `data` by the leaf of `leaves_at(lambda)` containing each point.
pub(crate) fn responses_by_leaf(
    partition: &PartitionTree,
    lambda: f64,
    data: &Dataset,
) -> Result<Vec<Vec<f64>>> {
    if data.dim() != partition.dim() {
        return Err(MondrianError::input(format!(
            "data has dimension {} but the partition has {}",
            data.dim(),
            partition.dim()
        )));
    }
    let ys = data.require_responses()?;
    let view = partition.view(lambda)?;
    let mut groups = vec![Vec::new(); view.leaf_count()];
    for (x, &y) in data.points().zip(ys) {
        groups[view.locate_unchecked(x)].push(y);
    }
    Ok(groups)
}

/// Fits one constant per leaf of `partition` at stopping time `lambda`.
pub fn fit_tree(
    partition: &PartitionTree,
    lambda: f64,
    data: &Dataset,
    spec: &LossSpec,
    value_box: ValueBox,
) -> Result<FittedTree> {
    let groups = responses_by_leaf(partition, lambda, data)?;
    let values = groups
        .iter()
        .map(|ys| fit_leaf(spec, ys, value_box).map(|f| f.value))
        .collect::<Result<Vec<_>>>()?;
    FittedTree::from_parts(partition, lambda, values, *spec, value_box)
}

/// `(1/n) sum_i l(h(X_i), Y_i)` for any predictor `h`.
pub fn empirical_risk<F>(data: &Dataset, spec: &LossSpec, predictor: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let ys = data.require_responses()?;
    if ys.is_empty() {
        return Err(MondrianError::input("empirical risk of an empty dataset"));
    }
    let mut total = 0.0;
    for (x, &y) in data.points().zip(ys) {
        total += spec.eval(predictor(x), y)?;
    }
    Ok(total / ys.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct WireFittedTree {
    lambda: f64,
    partition: PartitionTree,
    leaf_values: Vec<f64>,
    loss: LossSpec,
    value_box: ValueBox,
}

impl From<FittedTree> for WireFittedTree {
    fn from(t: FittedTree) -> Self {
        WireFittedTree {
            lambda: t.lambda,
            partition: t.partition,
            leaf_values: t.leaf_values,
            loss: t.loss,
            value_box: t.value_box,
        }
    }
}

impl TryFrom<WireFittedTree> for FittedTree {
    type Error = MondrianError;

    fn try_from(w: WireFittedTree) -> Result<Self> {
        FittedTree::from_parts(&w.partition, w.lambda, w.leaf_values, w.loss, w.value_box)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::sample_partition;

    fn wide() -> ValueBox {
        ValueBox::new(-10.0, 10.0).unwrap()
    }

    #[test]
    fn root_only_tree_is_the_mean() {
        let p = PartitionTree::trivial(1, 0.0);
        let data = Dataset::new(1, vec![0.1, 0.5, 0.9], Some(vec![1.0, 2.0, 3.0])).unwrap();
        let t = fit_tree(&p, 0.0, &data, &LossSpec::SquaredError, wide()).unwrap();
        assert_eq!(t.leaf_values(), &[2.0]);
        assert_eq!(t.predict(&[0.77]).unwrap(), 2.0);
        let risk = t.empirical_risk(&data).unwrap();
        assert!((risk - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_data_gives_zero_leaves() {
        let p = sample_partition(2, 3.0, 5, 0, 1_000_000).unwrap();
        let data = Dataset::empty(2, true).unwrap();
        let t = fit_tree(&p, 3.0, &data, &LossSpec::SquaredError, wide()).unwrap();
        assert!(t.leaf_values().iter().all(|&v| v == 0.0));
        assert!(t.empirical_risk(&data).is_err());
    }

    #[test]
    fn leaves_see_only_their_points() {
        let p = PartitionTree::from_splits(1, 1.0, &[("", 0, 0.5, 0.3)]).unwrap();
        let data = Dataset::new(1, vec![0.1, 0.2, 0.6, 0.9], Some(vec![1.0, 3.0, 10.0, 20.0])).unwrap();
        let t = fit_tree(&p, 1.0, &data, &LossSpec::SquaredError, ValueBox::new(-50.0, 50.0).unwrap()).unwrap();
        assert_eq!(t.leaf_values(), &[2.0, 15.0]);
        assert_eq!(t.predict(&[0.5]).unwrap(), 15.0);
        assert!(t.predict(&[1.5]).is_err());
        // interpolating tree has zero risk
        let p = PartitionTree::from_splits(1, 1.0, &[("", 0, 0.5, 0.3)]).unwrap();
        let data = Dataset::new(1, vec![0.1, 0.9], Some(vec![1.0, 3.0])).unwrap();
        let t = fit_tree(&p, 1.0, &data, &LossSpec::SquaredError, wide()).unwrap();
        assert_eq!(t.empirical_risk(&data).unwrap(), 0.0);
    }

    #[test]
    fn missing_responses_are_rejected() {
        let p = PartitionTree::trivial(1, 0.0);
        let data = Dataset::new(1, vec![0.2], None).unwrap();
        assert!(fit_tree(&p, 0.0, &data, &LossSpec::SquaredError, wide()).is_err());
    }

    #[test]
    fn serialization_round_trip_preserves_predictions() {
        let p = sample_partition(2, 4.0, 9, 1, 1_000_000).unwrap();
        let xs: Vec<f64> = (0..400).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let ys: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let data = Dataset::new(2, xs, Some(ys)).unwrap();
        let t = fit_tree(&p, 2.5, &data, &LossSpec::huber(0.5).unwrap(), wide()).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        let back: FittedTree = serde_json::from_str(&text).unwrap();
        assert_eq!(t, back);
        for x in data.points() {
            assert_eq!(t.predict(x).unwrap().to_bits(), back.predict(x).unwrap().to_bits());
        }
    }
}
