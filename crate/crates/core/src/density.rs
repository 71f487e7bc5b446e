//! Log-density estimation on `[0,1]^d` with piecewise-constant log-heights.
//!
//! Each tree maximizes the normalized likelihood over its leaves, is shifted so
//! that its log-height integrates to zero, and the forest exponentiates the
//! average log-height divided by a normalizing constant.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};
use crate::forest::{resolve_box, tag_tree};
use crate::loss::LossSpec;
use crate::partition::{from_json_unbounded, sample_partition, PartitionTree};
use crate::rng::{mix, substream};
use crate::tree::FittedTree;
use crate::types::{check_point, Cell, Dataset, FitConfig, LambdaMode, ValueBox};

pub const DEFAULT_GRID_POINTS: usize = 1 << 15;
const CD_TOL: f64 = 1e-10;
const CD_MAX_SWEEPS: usize = 100_000;

/// How the normalizing constant of the ensemble is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    /// Single tree: finite sum over its leaves.
    ExactPartition,
    /// One dimension: finite sum over the merged breakpoints of all trees.
    ExactOverlay,
    /// Randomly shifted Halton points.
    GridMc { points: usize, seed: u64 },
}

/// `-(1/n) sum_j n_j c_j + ln sum_j vol_j e^{c_j}`.
pub fn density_objective(heights: &[f64], counts: &[usize], vols: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let linear: f64 = if n == 0 {
        0.0
    } else {
        heights.iter().zip(counts).map(|(c, &k)| c * k as f64).sum::<f64>() / n as f64
    };
    -linear + log_sum_exp(&heights.iter().copied().zip(vols.iter().copied()).collect::<Vec<_>>())
}

/// `ln sum w_i e^{a_i}` for positive weights, without overflow.
fn log_sum_exp(terms: &[(f64, f64)]) -> f64 {
    let top = terms.iter().map(|&(a, _)| a).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    let s: f64 = terms.iter().map(|&(a, w)| w * (a - top).exp()).sum();
    top + s.ln()
}

/// Box-constrained minimizer of [`density_objective`] for the given leaf counts and volumes.
///
/// Starts from the clamped stationary point `ln(n_j / (n vol_j))` and runs exact
/// projected coordinate descent until no coordinate moves by more than 1e-10.
pub fn solve_heights(counts: &[usize], vols: &[f64], bx: ValueBox) -> Result<Vec<f64>> {
    if counts.len() != vols.len() {
        return Err(MondrianError::input("counts and volumes differ in length"));
    }
    if let Some(v) = vols.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(MondrianError::numeric(format!("leaf volume {v} is not positive")));
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Ok(vec![bx.lo; counts.len()]);
    }
    let p: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
    let mut c: Vec<f64> = p
        .iter()
        .zip(vols)
        .map(|(&pj, &v)| if pj == 0.0 { bx.lo } else { bx.clamp((pj / v).ln()) })
        .collect();
    if counts.len() == 1 {
        return Ok(c);
    }
    let mut mass: Vec<f64> = c.iter().zip(vols).map(|(&cj, &v)| v * cj.exp()).collect();
    for _ in 0..CD_MAX_SWEEPS {
        let mut moved = 0.0f64;
        let mut total: f64 = mass.iter().sum();
        for j in 0..c.len() {
            let rest = (total - mass[j]).max(0.0);
            let target = if p[j] == 0.0 {
                bx.lo
            } else if p[j] == 1.0 {
                bx.hi
            } else {
                bx.clamp((p[j] * rest / ((1.0 - p[j]) * vols[j])).ln())
            };
            moved = moved.max((target - c[j]).abs());
            c[j] = target;
            mass[j] = vols[j] * target.exp();
            total = rest + mass[j];
        }
        if moved < CD_TOL {
            return Ok(c);
        }
    }
    Err(MondrianError::numeric("density coordinate descent did not converge"))
}

/// Pre-centering heights of the leaves of `partition` at `lambda`, in leaf-id order.
pub fn fit_density_tree(partition: &PartitionTree, lambda: f64, xs: &Dataset, bx: ValueBox) -> Result<Vec<f64>> {
    if xs.dim() != partition.dim() {
        return Err(MondrianError::input("points do not match the partition dimension"));
    }
    let view = partition.view(lambda)?;
    let mut counts = vec![0usize; view.leaf_count()];
    for x in xs.points() {
        counts[view.locate_unchecked(x)] += 1;
    }
    let vols: Vec<f64> = view.leaves().map(|l| l.cell.volume()).collect();
    solve_heights(&counts, &vols, bx)
}

/// Shifts `heights` so that `sum_j vol_j h_j = 0`.
pub fn recenter(heights: &[f64], cells: &[&Cell]) -> Vec<f64> {
    let shift: f64 = heights.iter().zip(cells).map(|(h, c)| h * c.volume()).sum();
    heights.iter().map(|h| h - shift).collect()
}

/// `sum_j vol_j h_j` of a piecewise-constant tree.
pub fn tree_integral(tree: &FittedTree) -> f64 {
    tree.leaves().map(|(cell, h)| cell.volume() * h).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireDensity", into = "WireDensity")]
pub struct DensityModel {
    trees: Vec<FittedTree>,
    log_normalizer: f64,
    integration: Integration,
}

/// Fits `config.tree_count` recentered density trees at the fixed stopping time of `config`.
///
/// `grid_points` is only used for `d >= 2` ensembles; it defaults to 2^15.
pub fn fit_density(xs: &Dataset, config: &FitConfig, grid_points: Option<usize>) -> Result<DensityModel> {
    config.validate()?;
    let LambdaMode::Fixed(lambda) = config.lambda_mode else {
        return Err(MondrianError::input("density estimation needs a fixed stopping time"));
    };
    if xs.is_empty() {
        return Err(MondrianError::input("density estimation needs at least one point"));
    }
    let spec = LossSpec::DensityPseudo;
    let bx = resolve_box(&spec, config, xs.len())?;
    let trees = (0..config.tree_count)
        .into_par_iter()
        .map(|b| {
            let partition = sample_partition(xs.dim(), lambda, config.seed, b as u64, config.leaf_cap)
                .map_err(|e| tag_tree(e, b))?;
            let raw = fit_density_tree(&partition, lambda, xs, bx)?;
            let view = partition.view(lambda)?;
            let cells: Vec<&Cell> = view.leaves().map(|l| l.cell).collect();
            let heights = recenter(&raw, &cells);
            FittedTree::from_parts(&partition, lambda, heights, spec, bx)
        })
        .collect::<Result<Vec<_>>>()?;
    let integration = if trees.len() == 1 {
        Integration::ExactPartition
    } else if xs.dim() == 1 {
        Integration::ExactOverlay
    } else {
        let points = grid_points.unwrap_or(DEFAULT_GRID_POINTS);
        if points == 0 {
            return Err(MondrianError::input("the integration grid needs at least one point"));
        }
        Integration::GridMc {
            points,
            seed: mix(config.seed, 0x6772_6964),
        }
    };
    DensityModel::new(trees, integration)
}

impl DensityModel {
    pub fn new(trees: Vec<FittedTree>, integration: Integration) -> Result<Self> {
        let dim = trees
            .first()
            .map(FittedTree::dim)
            .ok_or_else(|| MondrianError::input("a density model needs at least one tree"))?;
        if trees.iter().any(|t| t.dim() != dim) {
            return Err(MondrianError::input("density trees disagree on dimension"));
        }
        match integration {
            Integration::ExactPartition if trees.len() != 1 => {
                return Err(MondrianError::input("exact partition integration needs a single tree"))
            }
            Integration::ExactOverlay if dim != 1 => {
                return Err(MondrianError::input("exact overlay integration needs dimension 1"))
            }
            _ => {}
        }
        let mut model = DensityModel {
            trees,
            log_normalizer: 0.0,
            integration,
        };
        model.log_normalizer = model.compute_log_normalizer();
        if !model.log_normalizer.is_finite() {
            return Err(MondrianError::numeric("density normalizer is not finite"));
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.trees[0].dim()
    }

    pub fn trees(&self) -> &[FittedTree] {
        &self.trees
    }

    pub fn integration(&self) -> Integration {
        self.integration
    }

    /// `ln Z` with `Z` the integral of `exp` of the averaged log-height.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Averaged recentered log-height at `x`.
    pub fn log_height(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim())?;
        Ok(self.log_height_unchecked(x))
    }

    fn log_height_unchecked(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_unchecked(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok((self.log_height(x)? - self.log_normalizer).exp())
    }

    /// Intervals of the merged breakpoints of all trees (one dimension only).
    pub fn overlay_intervals(&self) -> Result<Vec<(f64, f64)>> {
        if self.dim() != 1 {
            return Err(MondrianError::input("overlay intervals exist only in dimension 1"));
        }
        let mut cuts: Vec<f64> = self
            .trees
            .iter()
            .flat_map(|t| t.leaves().flat_map(|(c, _)| [c.lo[0], c.hi[0]]).collect::<Vec<_>>())
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        Ok(cuts.windows(2).map(|w| (w[0], w[1])).collect())
    }

    /// Integral of the normalized density, exact for a single tree or in dimension 1.
    pub fn exact_integral(&self) -> Result<f64> {
        if self.trees.len() == 1 {
            return Ok(self.trees[0]
                .leaves()
                .map(|(c, h)| c.volume() * (h - self.log_normalizer).exp())
                .sum());
        }
        Ok(self
            .overlay_intervals()?
            .into_iter()
            .map(|(a, b)| (b - a) * (self.log_height_unchecked(&[0.5 * (a + b)]) - self.log_normalizer).exp())
            .sum())
    }

    fn compute_log_normalizer(&self) -> f64 {
        match self.integration {
            Integration::ExactPartition => {
                log_sum_exp(&self.trees[0].leaves().map(|(c, h)| (h, c.volume())).collect::<Vec<_>>())
            }
            Integration::ExactOverlay => {
                let cells: Vec<(f64, f64)> = self
                    .overlay_intervals()
                    .expect("overlay integration is only built in dimension 1")
                    .into_iter()
                    .map(|(a, b)| (self.log_height_unchecked(&[0.5 * (a + b)]), b - a))
                    .collect();
                log_sum_exp(&cells)
            }
            Integration::GridMc { points, seed } => {
                let grid = shifted_halton(self.dim(), points, seed);
                let values: Vec<f64> = grid
                    .par_chunks_exact(self.dim())
                    .map(|x| self.log_height_unchecked(x))
                    .collect();
                let w = 1.0 / points as f64;
                log_sum_exp(&values.iter().map(|&h| (h, w)).collect::<Vec<_>>())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        from_json_unbounded(text)
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn first_primes(k: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(k);
    let mut c = 2u64;
    while primes.len() < k {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// `points` Halton points in `[0,1)^dim` (row-major), shifted modulo 1 by a seeded uniform vector.
pub fn shifted_halton(dim: usize, points: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, 0);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let bases = first_primes(dim);
    let mut out = Vec::with_capacity(dim * points);
    for i in 0..points {
        for j in 0..dim {
            let v = radical_inverse(i as u64 + 1, bases[j]) + shift[j];
            out.push(if v >= 1.0 { v - 1.0 } else { v });
        }
    }
    out
}

const DENSITY_FORMAT: &str = "mondrian-density/1";

#[derive(Serialize, Deserialize)]
struct WireDensity {
    format: String,
    dimension: usize,
    tree_count: usize,
    integration: Integration,
    log_normalizer: f64,
    trees: Vec<FittedTree>,
}

impl From<DensityModel> for WireDensity {
    fn from(m: DensityModel) -> Self {
        WireDensity {
            format: DENSITY_FORMAT.into(),
            dimension: m.dim(),
            tree_count: m.trees.len(),
            integration: m.integration,
            log_normalizer: m.log_normalizer,
            trees: m.trees,
        }
    }
}

impl TryFrom<WireDensity> for DensityModel {
    type Error = MondrianError;

    fn try_from(w: WireDensity) -> Result<Self> {
        if w.format != DENSITY_FORMAT {
            return Err(MondrianError::input(format!("unknown density format {:?}", w.format)));
        }
        if w.trees.len() != w.tree_count {
            return Err(MondrianError::input("density header disagrees with its body"));
        }
        let model = DensityModel::new(w.trees, w.integration)?;
        if model.dim() != w.dimension {
            return Err(MondrianError::input("density header dimension disagrees with its trees"));
        }
        if (model.log_normalizer - w.log_normalizer).abs() > 1e-9 * (1.0 + w.log_normalizer.abs()) {
            return Err(MondrianError::input("stored normalizer does not match the trees"));
        }
        Ok(model)
    }
}
