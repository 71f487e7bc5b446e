//! Convergence sweeps over sample sizes and Monte-Carlo partition statistics.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};
use crate::forest::fit_forest;
use crate::loss::LossSpec;
use crate::partition::sample_partition;
use crate::rng::mix;
use crate::synth::{generate, true_excess_risk, uniform_points, TargetFunction, Task};
use crate::types::{FitConfig, ValueBox, DEFAULT_LEAF_CAP};

pub const DEFAULT_TEST_POINTS: usize = 10_000;

/// Stopping time as a function of the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// `n^{1/(2(p+d))}` for smoothness `p`.
    PaperRate { p: f64 },
    Fixed(f64),
    Auto { alpha: f64 },
}

impl LambdaRule {
    pub fn config(&self, n: usize, dim: usize, trees: usize, seed: u64) -> FitConfig {
        match *self {
            LambdaRule::PaperRate { p } => {
                FitConfig::fixed((n as f64).powf(1.0 / (2.0 * (p + dim as f64))), trees, seed)
            }
            LambdaRule::Fixed(l) => FitConfig::fixed(l, trees, seed),
            LambdaRule::Auto { alpha } => FitConfig::auto(alpha, None, trees, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub task: Task,
    pub loss: LossSpec,
    pub target: TargetFunction,
    pub dim: usize,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub lambda_rule: LambdaRule,
    pub trees: usize,
    pub seed: u64,
    pub test_points: usize,
    pub value_box: Option<ValueBox>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MondrianError::input("sample sizes must be non-empty and strictly ascending"));
        }
        if self.n_grid[0] == 0 {
            return Err(MondrianError::input("sample sizes must be positive"));
        }
        if self.reps == 0 || self.trees == 0 || self.test_points == 0 {
            return Err(MondrianError::input("replications, trees and test points must be positive"));
        }
        self.task.check(&self.target, self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub rep: usize,
    pub excess_risk: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<ExperimentRow>,
    /// `None` with fewer than two sample sizes or a zero mean risk.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
}

/// Failure part-way through a sweep, with the rows that did finish.
#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct ExperimentError {
    pub partial: Vec<ExperimentRow>,
    #[source]
    pub source: MondrianError,
}

fn run_one(spec: &ExperimentSpec, n: usize, rep: usize) -> Result<ExperimentRow> {
    let cell_seed = mix(mix(spec.seed, n as u64), rep as u64);
    let start = Instant::now();
    let data = generate(spec.task, &spec.target, n, spec.dim, mix(cell_seed, 1))?;
    let mut config = spec.lambda_rule.config(n, spec.dim, spec.trees, mix(cell_seed, 2));
    config.value_box = spec.value_box;
    let forest = fit_forest(&data, &spec.loss, &config)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let test = uniform_points(spec.test_points, spec.dim, mix(cell_seed, 3))?;
    let predictions = forest.predict_batch(&test)?;
    let excess_risk = true_excess_risk(spec.task, &spec.target, &test, &predictions)?;
    Ok(ExperimentRow {
        n,
        rep,
        excess_risk,
        wall_ms,
    })
}

/// Fits one forest per `(n, rep)` and measures its excess risk on fresh uniform points.
pub fn run_convergence(spec: &ExperimentSpec) -> std::result::Result<ExperimentResult, ExperimentError> {
    spec.validate().map_err(|source| ExperimentError {
        partial: Vec::new(),
        source,
    })?;
    let jobs: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.reps).map(move |r| (n, r)))
        .collect();
    let outcomes: Vec<Result<ExperimentRow>> = jobs.par_iter().map(|&(n, r)| run_one(spec, n, r)).collect();
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(source) = first_error {
        return Err(ExperimentError { partial: rows, source });
    }
    let (slope, slope_se) = match rate_slope(&rows) {
        Ok((s, se)) => (Some(s), se),
        Err(_) => (None, None),
    };
    Ok(ExperimentResult { rows, slope, slope_se })
}

/// Mean excess risk per sample size, in ascending order of `n`.
pub fn mean_by_n(rows: &[ExperimentRow]) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let v: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.excess_risk).collect();
            (n, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// Least-squares slope of `ln(mean excess risk)` on `ln n`, with its standard error
/// when there are at least three sample sizes.
pub fn rate_slope(rows: &[ExperimentRow]) -> Result<(f64, Option<f64>)> {
    let means = mean_by_n(rows);
    if means.len() < 2 {
        return Err(MondrianError::input("a slope needs at least two sample sizes"));
    }
    if means.iter().any(|&(_, m)| !(m > 0.0)) {
        return Err(MondrianError::numeric("a mean excess risk is not positive, its logarithm is undefined"));
    }
    let pts: Vec<(f64, f64)> = means.iter().map(|&(n, m)| ((n as f64).ln(), m.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let se = (pts.len() > 2).then(|| {
        let rss: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
        (rss / (k - 2.0) / sxx).sqrt()
    });
    Ok((slope, se))
}

/// Writes `n,rep,excess_risk,wall_ms`; with `record_time` off the time column is 0.
pub fn write_rows_csv<W: Write>(rows: &[ExperimentRow], record_time: bool, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "rep", "excess_risk", "wall_ms"])?;
    for r in rows {
        let ms = if record_time { r.wall_ms } else { 0.0 };
        w.write_record([r.n.to_string(), r.rep.to_string(), r.excess_risk.to_string(), ms.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionStats {
    pub trees: usize,
    pub mean_leaves: f64,
    pub se_leaves: f64,
    pub mean_diameter: f64,
    pub se_diameter: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Leaf count and diameter of the cell containing the centre over `trees` sampled partitions.
pub fn partition_stats(dim: usize, lambda: f64, trees: usize, seed: u64) -> Result<PartitionStats> {
    if trees < 100 {
        return Err(MondrianError::input("partition statistics need at least 100 trees"));
    }
    let centre = vec![0.5; dim];
    let samples = (0..trees)
        .into_par_iter()
        .map(|b| {
            let p = sample_partition(dim, lambda, seed, b as u64, DEFAULT_LEAF_CAP)?;
            let view = p.view(lambda)?;
            let leaf = view.locate(&centre)?;
            Ok((view.leaf_count() as f64, view.cell(leaf).diameter()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (leaves, diameters): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    let (mean_leaves, se_leaves) = mean_se(&leaves);
    let (mean_diameter, se_diameter) = mean_se(&diameters);
    Ok(PartitionStats {
        trees,
        mean_leaves,
        se_leaves,
        mean_diameter,
        se_diameter,
    })
}
