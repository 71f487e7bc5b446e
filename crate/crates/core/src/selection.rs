//! Penalized choice of the stopping time, exact over the split birth times.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MondrianError, Result};
use crate::forest::{resolve_box, tag_tree, Forest};
use crate::leaf::fit_leaf;
use crate::loss::LossSpec;
use crate::partition::{sample_partition, Node, PartitionTree};
use crate::tree::{fit_tree, FittedTree};
use crate::types::{Dataset, FitConfig, LambdaMode, ValueBox};

/// In-sample risk of one tree as a function of its stopping time.
///
/// The risk only changes at birth times, so `risks[k]` holds on
/// `[breakpoints[k], breakpoints[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyPath {
    pub breakpoints: Vec<f64>,
    pub risks: Vec<f64>,
    pub alpha: f64,
    pub chosen_lambda: f64,
}

impl PenaltyPath {
    pub fn penalties(&self) -> impl Iterator<Item = f64> + '_ {
        self.breakpoints.iter().map(move |&l| self.alpha * l)
    }

    pub fn totals(&self) -> Vec<f64> {
        self.risks.iter().zip(self.penalties()).map(|(r, p)| r + p).collect()
    }

    /// Smallest breakpoint minimizing `risk + alpha * lambda`.
    pub fn argmin(&self, alpha: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (&l, &r) in self.breakpoints.iter().zip(&self.risks) {
            let total = r + alpha * l;
            if total < best.0 {
                best = (total, l);
            }
        }
        best.1
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(MondrianError::input(format!("penalty strength {alpha} must lie in (0,1]")))
    }
}

/// Neumaier-compensated running sum, so that long add/remove sequences stay exact enough
/// to agree with a from-scratch refit.
#[derive(Default)]
struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn leaf_contribution(spec: &LossSpec, ys: &[f64], bx: ValueBox) -> Result<f64> {
    let v = fit_leaf(spec, ys, bx)?.value;
    let mut acc = Accumulator::default();
    for &y in ys {
        acc.add(spec.eval_unchecked(v, y));
    }
    Ok(acc.value())
}

/// Risk path of `partition` on `data` over `[0, partition.horizon()]`.
///
/// Splits are replayed in birth order; each one swaps the parent leaf's loss for
/// the losses of its two refitted children.
pub fn penalty_path(
    partition: &PartitionTree,
    data: &Dataset,
    spec: &LossSpec,
    value_box: ValueBox,
    alpha: f64,
) -> Result<PenaltyPath> {
    check_alpha(alpha)?;
    if data.dim() != partition.dim() {
        return Err(MondrianError::input("dataset dimension does not match the partition"));
    }
    let ys = data.require_responses()?;
    if ys.is_empty() {
        return Err(MondrianError::input("penalty path of an empty dataset"));
    }
    for &y in ys {
        spec.check_response(y)?;
    }
    let n = ys.len() as f64;
    let nodes = partition.nodes();

    let mut members: Vec<Option<Vec<usize>>> = vec![None; nodes.len()];
    let mut contribution = vec![0.0; nodes.len()];
    let all: Vec<usize> = (0..ys.len()).collect();
    let gather = |idx: &[usize]| idx.iter().map(|&i| ys[i]).collect::<Vec<_>>();
    contribution[0] = leaf_contribution(spec, &gather(&all), value_box)?;
    members[0] = Some(all);
    let mut total = Accumulator::default();
    total.add(contribution[0]);

    let mut events: Vec<(f64, usize)> = nodes
        .iter()
        .enumerate()
        .filter_map(|(i, node)| node.birth_time().map(|t| (t, i)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut breakpoints = vec![0.0];
    let mut risks = vec![total.value() / n];
    for (t, idx) in events {
        let Node::Split {
            dim,
            threshold,
            left,
            right,
            ..
        } = &nodes[idx]
        else {
            unreachable!("only split nodes carry birth times")
        };
        let parent = members[idx]
            .take()
            .ok_or_else(|| MondrianError::input("split replayed before its parent"))?;
        let (l, r): (Vec<usize>, Vec<usize>) =
            parent.into_iter().partition(|&i| data.point(i)[*dim] < *threshold);
        contribution[*left] = leaf_contribution(spec, &gather(&l), value_box)?;
        contribution[*right] = leaf_contribution(spec, &gather(&r), value_box)?;
        total.add(-contribution[idx]);
        total.add(contribution[*left]);
        total.add(contribution[*right]);
        members[*left] = Some(l);
        members[*right] = Some(r);

        let risk = total.value() / n;
        if t == *breakpoints.last().unwrap() {
            *risks.last_mut().unwrap() = risk;
        } else {
            breakpoints.push(t);
            risks.push(risk);
        }
    }

    let mut path = PenaltyPath {
        breakpoints,
        risks,
        alpha,
        chosen_lambda: 0.0,
    };
    path.chosen_lambda = path.argmin(alpha);
    Ok(path)
}

/// Default upper end of the stopping-time search: `(1+lambda)^d = n`.
pub fn default_lambda_max(n: usize, dim: usize) -> f64 {
    ((n.max(1) as f64).powf(1.0 / dim as f64) - 1.0).max(0.0)
}

fn auto_params(config: &FitConfig, n: usize, dim: usize) -> Result<(f64, f64)> {
    match config.lambda_mode {
        LambdaMode::Auto { alpha, lambda_max } => {
            check_alpha(alpha)?;
            Ok((alpha, lambda_max.unwrap_or_else(|| default_lambda_max(n, dim))))
        }
        LambdaMode::Fixed(_) => Err(MondrianError::input("automatic selection needs an Auto config")),
    }
}

/// Penalty path of tree `tree` of the forest `config` describes.
pub fn tree_penalty_path(data: &Dataset, spec: &LossSpec, config: &FitConfig, tree: usize) -> Result<PenaltyPath> {
    config.validate()?;
    let (alpha, lambda_max) = auto_params(config, data.len(), data.dim())?;
    let value_box = resolve_box(spec, config, data.len())?;
    let partition = sample_partition(data.dim(), lambda_max, config.seed, tree as u64, config.leaf_cap)
        .map_err(|e| tag_tree(e, tree))?;
    penalty_path(&partition, data, spec, value_box, alpha)
}

/// Penalty paths of every tree the forest would grow for `config`.
pub fn penalty_paths(data: &Dataset, spec: &LossSpec, config: &FitConfig) -> Result<Vec<PenaltyPath>> {
    (0..config.tree_count)
        .into_par_iter()
        .map(|b| tree_penalty_path(data, spec, config, b))
        .collect()
}

/// Forest whose trees each stop at their own penalized stopping time.
pub fn fit_forest_auto(data: &Dataset, spec: &LossSpec, config: &FitConfig) -> Result<Forest> {
    config.validate()?;
    let (alpha, lambda_max) = auto_params(config, data.len(), data.dim())?;
    let value_box = resolve_box(spec, config, data.len())?;
    let trees = (0..config.tree_count)
        .into_par_iter()
        .map(|b| -> Result<FittedTree> {
            let partition = sample_partition(data.dim(), lambda_max, config.seed, b as u64, config.leaf_cap)
                .map_err(|e| tag_tree(e, b))?;
            let path = penalty_path(&partition, data, spec, value_box, alpha)?;
            fit_tree(&partition, path.chosen_lambda, data, spec, value_box)
        })
        .collect::<Result<Vec<_>>>()?;
    Forest::from_trees(trees, *spec, value_box, config.clone())
}
