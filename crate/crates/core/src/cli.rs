//! The `mondrian` command-line tool.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::density::{fit_density, DensityModel};
use crate::error::{MondrianError, Result};
use crate::experiment::{
    partition_stats, run_convergence, write_rows_csv, ExperimentSpec, LambdaRule, DEFAULT_TEST_POINTS,
};
use crate::forest::{fit_forest, Forest};
use crate::loss::LossSpec;
use crate::selection::tree_penalty_path;
use crate::synth::{generate, TargetFunction, Task};
use crate::types::{Dataset, FitConfig, ValueBox, DEFAULT_LEAF_CAP, DEFAULT_TREE_COUNT};

#[derive(Debug, Parser)]
#[command(name = "mondrian", version, about = "Mondrian forests for convex losses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset
    Gen(GenArgs),
    /// Fit a forest (or a density model with --loss density)
    Fit(FitArgs),
    /// Predict with a fitted forest
    Predict(ApplyArgs),
    /// Sign decisions of a surrogate-loss forest
    Classify(ApplyArgs),
    /// Penalized stopping-time path of one tree
    SelectLambda(SelectArgs),
    /// Fit a density model
    Density(DensityArgs),
    /// Excess-risk sweep over sample sizes
    Converge(ConvergeArgs),
    /// Leaf-count and centre-cell diameter statistics
    PartitionStats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// gaussian, poisson, bernoulli, classification, geometric, quantile or density
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// const:C, sine:A or bump:A, optionally with +OFFSET (defaults depend on the task)
    #[arg(long)]
    pub target: Option<TargetFunction>,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    /// l2, pinball:TAU, huber:DELTA, gaussian, poisson, bernoulli, geometric, phi1..phi6 or density
    #[arg(long, default_value = "l2")]
    pub loss: LossSpec,
    /// Fixed stopping time
    #[arg(long, conflicts_with = "alpha")]
    pub lambda: Option<f64>,
    /// Penalty strength for automatic stopping times
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Upper end of the automatic search (default n^(1/d) - 1)
    #[arg(long, requires = "alpha")]
    pub lambda_max: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TREE_COUNT)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leaf value box as lo,hi (default depends on the loss and n)
    #[arg(long = "box", allow_hyphen_values = true)]
    pub value_box: Option<ValueBox>,
    #[arg(long, default_value_t = DEFAULT_LEAF_CAP)]
    pub leaf_cap: usize,
}

impl ForestArgs {
    fn config(&self) -> Result<FitConfig> {
        let mut config = match (self.lambda, self.alpha) {
            (Some(l), None) => FitConfig::fixed(l, self.trees, self.seed),
            (None, Some(a)) => FitConfig::auto(a, self.lambda_max, self.trees, self.seed),
            _ => return Err(MondrianError::input("give exactly one of --lambda and --alpha")),
        };
        config.value_box = self.value_box;
        config.leaf_cap = self.leaf_cap;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub forest: ForestArgs,
    /// Project coordinates onto [0,1] instead of rejecting them
    #[arg(long)]
    pub clamp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub clamp: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "l2")]
    pub loss: LossSpec,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Index of the tree whose path is printed
    #[arg(long, default_value_t = 0)]
    pub tree: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "box", allow_hyphen_values = true)]
    pub value_box: Option<ValueBox>,
    #[arg(long)]
    pub clamp: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_TREE_COUNT)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "box", allow_hyphen_values = true)]
    pub value_box: Option<ValueBox>,
    #[arg(long, default_value_t = DEFAULT_LEAF_CAP)]
    pub leaf_cap: usize,
    /// Integration points for the normalizer in dimension 2 and above
    #[arg(long)]
    pub mc_points: Option<usize>,
    #[arg(long)]
    pub clamp: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also evaluate the density on a midpoint grid with this many points per axis
    #[arg(long, requires = "grid_out")]
    pub grid: Option<usize>,
    #[arg(long, requires = "grid")]
    pub grid_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[arg(long, default_value = "gaussian")]
    pub task: String,
    /// Defaults to the natural loss of the task
    #[arg(long)]
    pub loss: Option<LossSpec>,
    #[arg(long)]
    pub target: Option<TargetFunction>,
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000,16000")]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Fixed stopping time instead of n^(1/(2(p+d)))
    #[arg(long, conflicts_with = "alpha")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Smoothness used by the default stopping-time schedule (default: that of the target)
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_TEST_POINTS)]
    pub test_points: usize,
    #[arg(long = "box", allow_hyphen_values = true)]
    pub value_box: Option<ValueBox>,
    /// Fill the wall_ms column (otherwise 0, keeping reruns byte-identical)
    #[arg(long)]
    pub record_time: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 2000)]
    pub trees: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes)
            .map_err(|e| MondrianError::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn read_model(path: &Path) -> Result<Forest> {
    let text = fs::read_to_string(path)
        .map_err(|e| MondrianError::input(format!("cannot read {}: {e}", path.display())))?;
    Forest::from_json(&text)
}

fn f64s_csv(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| MondrianError::Io(e.into_error()))
}

fn point_rows<'a>(data: &'a Dataset, extra: &'a [String]) -> impl Iterator<Item = Vec<String>> + 'a {
    data.points().zip(extra).map(|(x, e)| {
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(e.clone());
        row
    })
}

fn x_header(dim: usize, last: &str) -> Vec<String> {
    (1..=dim).map(|j| format!("x{j}")).chain([last.to_string()]).collect()
}

fn default_loss(task: Task) -> Result<LossSpec> {
    let name = match task {
        Task::Regression { .. } => "l2".to_string(),
        Task::Poisson => "poisson".into(),
        Task::Bernoulli => "bernoulli".into(),
        Task::Classification => "phi5".into(),
        Task::Geometric => "geometric".into(),
        Task::Quantile { tau, .. } => format!("pinball:{tau}"),
        Task::Density => return Err(MondrianError::input("converge does not support the density task")),
    };
    name.parse()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let task = Task::parse(&a.task, a.sigma, a.tau)?;
            let target = a.target.unwrap_or_else(|| task.default_target());
            let data = generate(task, &target, a.n, a.d, a.seed)?;
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            emit(a.out.as_deref(), &buf)
        }
        Command::Fit(a) => {
            let data = Dataset::read_csv_path(&a.input, a.clamp)?;
            let config = a.forest.config()?;
            let json = if a.forest.loss == LossSpec::DensityPseudo {
                fit_density(&data, &config, None)?.to_json()?
            } else {
                fit_forest(&data, &a.forest.loss, &config)?.to_json()?
            };
            emit(Some(&a.out), json.as_bytes())
        }
        Command::Predict(a) => {
            let forest = read_model(&a.model)?;
            let data = Dataset::read_csv_path(&a.input, a.clamp)?;
            let preds: Vec<String> = forest.predict_batch(&data)?.iter().map(f64::to_string).collect();
            let bytes = f64s_csv(x_header(data.dim(), "yhat"), point_rows(&data, &preds))?;
            emit(a.out.as_deref(), &bytes)
        }
        Command::Classify(a) => {
            let forest = read_model(&a.model)?;
            let data = Dataset::read_csv_path(&a.input, a.clamp)?;
            let labels = data
                .points()
                .map(|x| forest.classify(x).map(|c| c.to_string()))
                .collect::<Result<Vec<_>>>()?;
            let bytes = f64s_csv(x_header(data.dim(), "label"), point_rows(&data, &labels))?;
            emit(a.out.as_deref(), &bytes)
        }
        Command::SelectLambda(a) => {
            let data = Dataset::read_csv_path(&a.input, a.clamp)?;
            let mut config = FitConfig::auto(a.alpha, a.lambda_max, a.tree + 1, a.seed);
            config.value_box = a.value_box;
            let path = tree_penalty_path(&data, &a.loss, &config, a.tree)?;
            let rows = path
                .breakpoints
                .iter()
                .zip(&path.risks)
                .zip(path.penalties().zip(path.totals()))
                .map(|((l, r), (p, t))| vec![l.to_string(), r.to_string(), p.to_string(), t.to_string()]);
            let header = ["lambda", "risk", "penalty", "pen_total"].map(String::from).to_vec();
            let bytes = f64s_csv(header, rows)?;
            eprintln!("chosen lambda {}", path.chosen_lambda);
            emit(a.out.as_deref(), &bytes)
        }
        Command::Density(a) => {
            let data = Dataset::read_csv_path(&a.input, a.clamp)?;
            let mut config = FitConfig::fixed(a.lambda, a.trees, a.seed);
            config.value_box = a.value_box;
            config.leaf_cap = a.leaf_cap;
            let model = fit_density(&data, &config, a.mc_points)?;
            emit(Some(&a.out), model.to_json()?.as_bytes())?;
            if let (Some(k), Some(path)) = (a.grid, a.grid_out.as_deref()) {
                emit(Some(path), &density_grid(&model, k)?)?;
            }
            Ok(())
        }
        Command::Converge(a) => {
            let task = Task::parse(&a.task, a.sigma, a.tau)?;
            let target = a.target.unwrap_or_else(|| task.default_target());
            let loss = match a.loss {
                Some(l) => l,
                None => default_loss(task)?,
            };
            let lambda_rule = match (a.lambda, a.alpha) {
                (Some(l), _) => LambdaRule::Fixed(l),
                (None, Some(alpha)) => LambdaRule::Auto { alpha },
                (None, None) => LambdaRule::PaperRate {
                    p: a.p.unwrap_or_else(|| target.smoothness()),
                },
            };
            let spec = ExperimentSpec {
                task,
                loss,
                target,
                dim: a.d,
                n_grid: a.n_grid,
                reps: a.reps,
                lambda_rule,
                trees: a.trees,
                seed: a.seed,
                test_points: a.test_points,
                value_box: a.value_box,
            };
            match run_convergence(&spec) {
                Ok(result) => {
                    let mut buf = Vec::new();
                    write_rows_csv(&result.rows, a.record_time, &mut buf)?;
                    emit(a.out.as_deref(), &buf)?;
                    match (result.slope, result.slope_se) {
                        (Some(s), Some(se)) => eprintln!("log-log slope {s:.4} (se {se:.4})"),
                        (Some(s), None) => eprintln!("log-log slope {s:.4}"),
                        _ => {}
                    }
                    Ok(())
                }
                Err(e) => {
                    let mut buf = Vec::new();
                    write_rows_csv(&e.partial, a.record_time, &mut buf)?;
                    emit(a.out.as_deref(), &buf)?;
                    Err(e.source)
                }
            }
        }
        Command::PartitionStats(a) => {
            let s = partition_stats(a.d, a.lambda, a.trees, a.seed)?;
            let header = ["d", "lambda", "trees", "mean_leaves", "se_leaves", "mean_diameter", "se_diameter"]
                .map(String::from)
                .to_vec();
            let row = vec![
                a.d.to_string(),
                a.lambda.to_string(),
                s.trees.to_string(),
                s.mean_leaves.to_string(),
                s.se_leaves.to_string(),
                s.mean_diameter.to_string(),
                s.se_diameter.to_string(),
            ];
            emit(a.out.as_deref(), &f64s_csv(header, std::iter::once(row))?)
        }
    }
}

/// Density at the midpoints of a `k^d` grid, as `x1..xd,fhat` rows.
fn density_grid(model: &DensityModel, k: usize) -> Result<Vec<u8>> {
    let dim = model.dim();
    let total = k
        .checked_pow(dim as u32)
        .filter(|&t| t > 0 && t <= 10_000_000)
        .ok_or_else(|| MondrianError::input("density grid must have between 1 and 10^7 points"))?;
    let mut rows = Vec::with_capacity(total);
    let mut x = vec![0.0; dim];
    for idx in 0..total {
        let mut r = idx;
        for t in x.iter_mut().rev() {
            *t = ((r % k) as f64 + 0.5) / k as f64;
            r /= k;
        }
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(model.density(&x)?.to_string());
        rows.push(row);
    }
    f64s_csv(x_header(dim, "fhat"), rows.into_iter())
}
