// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
// Runs without the libtest harness so the lines always show up in `cargo test` output.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use mondrian::density::{fit_density, tree_integral};
use mondrian::experiment::{mean_by_n, partition_stats, run_convergence, ExperimentSpec, LambdaRule};
use mondrian::leaf::fit_leaf_numeric;
use mondrian::loss::all_families;
use mondrian::partition::sample_partition;
use mondrian::rng::substream;
use mondrian::selection::{default_lambda_max, penalty_path};
use mondrian::synth::{classification_error, generate, uniform_points, TargetFunction, Task};
use mondrian::{fit_forest, fit_leaf, fit_tree, Dataset, ExpFamily, FitConfig, LossSpec, Surrogate, ValueBox};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn leaf_counts() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (d, lambda) in [(1usize, 2.0f64), (2, 3.0), (3, 1.0)] {
        let s = partition_stats(d, lambda, 2000, 101).map_err(|e| e.to_string())?;
        let want = (1.0 + lambda).powi(d as i32);
        let z = (s.mean_leaves - want) / s.se_leaves;
        ok &= z.abs() <= 4.0;
        notes.push(format!("d={d} lambda={lambda}: {:.3} vs {want} ({z:+.2} se)", s.mean_leaves));
    }
    check(ok, notes.join("; "))
}

fn centre_diameter() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (d, lambda) in [(1usize, 5.0f64), (2, 5.0)] {
        let s = partition_stats(d, lambda, 2000, 202).map_err(|e| e.to_string())?;
        let bound = 2.0 * (d as f64).powf(1.5) / lambda;
        ok &= s.mean_diameter <= bound + 4.0 * s.se_diameter;
        notes.push(format!("d={d}: {:.4} <= {bound:.4} + 4*{:.4}", s.mean_diameter, s.se_diameter));
    }
    check(ok, notes.join("; "))
}

fn random_responses<R: Rng>(spec: &LossSpec, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| match spec {
            LossSpec::ExpFamily(ExpFamily::Poisson) => rng.random_range(0..8) as f64,
            LossSpec::ExpFamily(ExpFamily::Geometric) => rng.random_range(1..8) as f64,
            LossSpec::ExpFamily(ExpFamily::BernoulliShifted) => rng.random_range(0..2) as f64,
            LossSpec::Surrogate(_) => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => 3.0 * (rng.random::<f64>() - 0.5) + rng.random::<f64>(),
        })
        .collect()
}

fn random_box<R: Rng>(spec: &LossSpec, rng: &mut R) -> ValueBox {
    let (lo, hi) = match spec {
        LossSpec::ExpFamily(ExpFamily::BernoulliShifted) => (-0.49, 0.49),
        LossSpec::ExpFamily(ExpFamily::Geometric) => (-4.0, -0.05),
        _ => (-4.0, 4.0),
    };
    let mut a = lo + (hi - lo) * rng.random::<f64>();
    let mut b = lo + (hi - lo) * rng.random::<f64>();
    if a > b {
        std::mem::swap(&mut a, &mut b);
    }
    if b - a < 0.05 {
        b = (a + 0.05).min(hi);
        a = b - 0.05;
    }
    ValueBox::new(a, b).unwrap()
}

fn leaf_fit_oracle() -> Outcome {
    let families = all_families();
    let mut rng = substream(303, 0);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let spec = families[i % families.len()];
        let n = rng.random_range(1..40);
        let ys = random_responses(&spec, n, &mut rng);
        let bx = random_box(&spec, &mut rng);
        let fit = fit_leaf(&spec, &ys, bx).map_err(|e| format!("{spec}: {e}"))?;
        let objective = |z: f64| ys.iter().map(|&y| spec.eval(z, y).unwrap()).sum::<f64>();
        let grid = 100_000;
        let grid_min = (0..=grid)
            .map(|k| objective(bx.lo + bx.width() * k as f64 / grid as f64))
            .fold(f64::INFINITY, f64::min);
        let achieved = objective(fit.value);
        if !bx.contains(fit.value) || (achieved - fit.achieved_loss).abs() > 1e-9 * (1.0 + achieved.abs()) {
            return Err(format!("{spec}: inconsistent fit {fit:?}"));
        }
        let gap = (achieved - grid_min) / (1.0 + grid_min.abs());
        worst = worst.max(gap);
        if gap > 1e-6 {
            return Err(format!("{spec} ys={ys:?} box={bx}: {achieved} vs grid {grid_min}"));
        }
    }
    Ok(format!("200 instances, worst relative excess over grid {worst:.2e}"))
}

fn penalty_path_oracle() -> Outcome {
    let mut rng = substream(404, 0);
    let specs = [
        LossSpec::SquaredError,
        LossSpec::huber(0.5).unwrap(),
        LossSpec::Pinball { tau: 0.7 },
        LossSpec::ExpFamily(ExpFamily::Poisson),
        LossSpec::Surrogate(Surrogate::Logistic),
    ];
    let alphas: Vec<f64> = (0..60).map(|k| 10f64.powf(-5.0 + 5.0 * k as f64 / 59.0)).collect();
    let mut worst: f64 = 0.0;
    let mut breakpoints = 0;
    for inst in 0..20 {
        let spec = specs[inst % specs.len()];
        let dim = 1 + inst % 2;
        let n = rng.random_range(20..=200);
        let xs: Vec<f64> = (0..n * dim).map(|_| rng.random()).collect();
        let ys: Vec<f64> = (0..n)
            .map(|i| {
                let signal = (6.0 * xs[i * dim]).sin();
                match spec {
                    LossSpec::ExpFamily(ExpFamily::Poisson) => (2.0 + 2.0 * signal + 2.0 * rng.random::<f64>()).floor(),
                    LossSpec::Surrogate(_) => {
                        if signal + rng.random::<f64>() - 0.5 > 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    _ => signal + 0.3 * (rng.random::<f64>() - 0.5),
                }
            })
            .collect();
        let data = Dataset::new(dim, xs, Some(ys)).unwrap();
        let bx = spec.domain(n);
        let partition = sample_partition(dim, default_lambda_max(n, dim), 404, inst as u64, 1_000_000)
            .map_err(|e| e.to_string())?;
        let path = penalty_path(&partition, &data, &spec, bx, 0.01).map_err(|e| e.to_string())?;
        breakpoints += path.breakpoints.len();
        for (&l, &r) in path.breakpoints.iter().zip(&path.risks) {
            let refit = fit_tree(&partition, l, &data, &spec, bx).map_err(|e| e.to_string())?;
            let brute = refit.empirical_risk(&data).map_err(|e| e.to_string())?;
            let err = (brute - r).abs();
            worst = worst.max(err);
            if err > 1e-10 {
                return Err(format!("instance {inst} ({spec}) at lambda {l}: {r} vs refit {brute}"));
            }
        }
        let mut previous = f64::INFINITY;
        for &a in &alphas {
            // exhaustive evaluation, first minimizer wins
            let totals: Vec<f64> = path.breakpoints.iter().zip(&path.risks).map(|(l, r)| r + a * l).collect();
            let best = totals.iter().cloned().fold(f64::INFINITY, f64::min);
            let first = path.breakpoints[totals.iter().position(|&t| t == best).unwrap()];
            if path.argmin(a) != first {
                return Err(format!("instance {inst}: argmin disagrees at alpha {a}"));
            }
            if first > previous {
                return Err(format!("instance {inst}: lambda*(alpha) increased at alpha {a}"));
            }
            previous = first;
        }
    }
    Ok(format!("20 instances, {breakpoints} breakpoints, max |incremental - refit| {worst:.1e}; lambda*(alpha) monotone on 60 alphas"))
}

fn l2_rate() -> Outcome {
    let spec = ExperimentSpec {
        task: Task::Regression { sigma: 0.3 },
        loss: LossSpec::SquaredError,
        target: TargetFunction::sine(0.5),
        dim: 1,
        n_grid: vec![1000, 2000, 4000, 8000, 16000],
        reps: 10,
        lambda_rule: LambdaRule::PaperRate { p: 1.0 },
        trees: 50,
        seed: 505,
        test_points: 10_000,
        value_box: None,
    };
    let result = run_convergence(&spec).map_err(|e| e.to_string())?;
    let means = mean_by_n(&result.rows);
    let decreasing = means.windows(2).all(|w| w[1].1 < w[0].1);
    let slope = result.slope.ok_or("no slope")?;
    let curve: Vec<String> = means.iter().map(|(n, m)| format!("{n}:{m:.5}")).collect();
    check(
        decreasing && (-0.60..=-0.10).contains(&slope),
        format!("slope {slope:.3} (se {:.3}), means {}", result.slope_se.unwrap_or(f64::NAN), curve.join(" ")),
    )
}

fn quantile_calibration() -> Outcome {
    let n = 16_000;
    let target = TargetFunction::sine(0.5);
    let task = Task::Quantile { tau: 0.9, sigma: 1.0 };
    let train = generate(task, &target, n, 1, 606).map_err(|e| e.to_string())?;
    let lambda = (n as f64).powf(0.25);
    let forest = fit_forest(&train, &LossSpec::pinball(0.9).unwrap(), &FitConfig::fixed(lambda, 50, 607))
        .map_err(|e| e.to_string())?;
    let test = generate(task, &target, 20_000, 1, 608).map_err(|e| e.to_string())?;
    let preds = forest.predict_batch(&test).map_err(|e| e.to_string())?;
    let below = test.responses().unwrap().iter().zip(&preds).filter(|(y, h)| y < h).count();
    let frac = below as f64 / preds.len() as f64;
    check((0.87..=0.93).contains(&frac), format!("fraction below the fitted 0.9-quantile {frac:.4}"))
}

fn classification() -> Outcome {
    // eta = 1/2 + A sin(2 pi x); Bayes error 1/2 - 2A/pi = 0.2 for A = 0.15 pi
    let amplitude = 0.15 * std::f64::consts::PI;
    let target = TargetFunction::sine(amplitude);
    let k = 1_000_000;
    let bayes = (0..k)
        .map(|i| {
            let eta = 0.5 + target.eval(&[(i as f64 + 0.5) / k as f64]);
            eta.min(1.0 - eta)
        })
        .sum::<f64>()
        / k as f64;
    let n = 16_000;
    let train = generate(Task::Classification, &target, n, 1, 707).map_err(|e| e.to_string())?;
    let lambda = (n as f64).powf(0.25);
    let forest = fit_forest(&train, &LossSpec::Surrogate(Surrogate::Logistic), &FitConfig::fixed(lambda, 100, 708))
        .map_err(|e| e.to_string())?;
    let test = uniform_points(100_000, 1, 709).map_err(|e| e.to_string())?;
    let preds = forest.predict_batch(&test).map_err(|e| e.to_string())?;
    let error = classification_error(&target, &test, &preds).map_err(|e| e.to_string())?;
    check(
        (bayes - 0.2).abs() < 1e-3 && (error - bayes).abs() <= 0.05,
        format!("Bayes error {bayes:.4} (quadrature), forest 0-1 error {error:.4}"),
    )
}

fn density() -> Outcome {
    let target = TargetFunction::sine(1.0);
    let log_z = target.log_partition(1).map_err(|e| e.to_string())?;
    let f0 = |x: f64| (target.eval(&[x]) - log_z).exp();
    let mut errors = Vec::new();
    let mut worst_centre: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    for (i, n) in [1000usize, 4000, 16000].into_iter().enumerate() {
        let xs = generate(Task::Density, &target, n, 1, 800 + i as u64).map_err(|e| e.to_string())?;
        let lambda = (n as f64).powf(1.0 / 3.0);
        let model = fit_density(&xs, &FitConfig::fixed(lambda, 50, 810 + i as u64), None).map_err(|e| e.to_string())?;
        for t in model.trees() {
            worst_centre = worst_centre.max(tree_integral(t).abs());
        }
        worst_mass = worst_mass.max((model.exact_integral().map_err(|e| e.to_string())? - 1.0).abs());
        let k = 100_000;
        let l2 = (0..k)
            .map(|j| {
                let x = (j as f64 + 0.5) / k as f64;
                (model.density(&[x]).unwrap() - f0(x)).powi(2)
            })
            .sum::<f64>()
            / k as f64;
        errors.push(l2.sqrt());
    }
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    check(
        worst_centre <= 1e-12 && worst_mass <= 1e-12 && decreasing,
        format!(
            "max |int h| {worst_centre:.1e}, max |int f - 1| {worst_mass:.1e}, L2 errors {:.4} {:.4} {:.4}",
            errors[0], errors[1], errors[2]
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mondrian"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let commands: Vec<(Vec<&str>, Vec<&str>)> = vec![
        (vec!["gen", "--task", "gaussian", "--n", "400", "--d", "2", "--seed", "9", "--out", "reg.csv"], vec!["reg.csv"]),
        (vec!["gen", "--task", "classification", "--n", "400", "--seed", "9", "--out", "cls.csv"], vec!["cls.csv"]),
        (vec!["gen", "--task", "density", "--n", "400", "--d", "2", "--seed", "9", "--out", "pts.csv"], vec!["pts.csv"]),
        (vec!["fit", "--input", "reg.csv", "--loss", "huber:0.5", "--lambda", "4", "--trees", "8", "--seed", "1", "--out", "fixed.json"], vec!["fixed.json"]),
        (vec!["fit", "--input", "reg.csv", "--alpha", "0.01", "--trees", "8", "--seed", "1", "--out", "auto.json"], vec!["auto.json"]),
        (vec!["fit", "--input", "cls.csv", "--loss", "phi5", "--lambda", "5", "--trees", "8", "--seed", "2", "--box", "-3,3", "--out", "cls.json"], vec!["cls.json"]),
        (vec!["predict", "--model", "fixed.json", "--input", "reg.csv", "--out", "pred.csv"], vec!["pred.csv"]),
        (vec!["classify", "--model", "cls.json", "--input", "cls.csv", "--out", "labels.csv"], vec!["labels.csv"]),
        (vec!["select-lambda", "--input", "reg.csv", "--alpha", "0.01", "--seed", "3", "--tree", "2", "--out", "path.csv"], vec!["path.csv"]),
        (vec!["density", "--input", "pts.csv", "--lambda", "3", "--trees", "6", "--seed", "4", "--mc-points", "4096", "--out", "dens.json", "--grid", "10", "--grid-out", "grid.csv"], vec!["dens.json", "grid.csv"]),
        (vec!["converge", "--n-grid", "200,400", "--reps", "2", "--trees", "5", "--test-points", "1000", "--seed", "5", "--out", "conv.csv"], vec!["conv.csv"]),
        (vec!["partition-stats", "--d", "2", "--lambda", "3", "--trees", "200", "--seed", "6", "--out", "stats.csv"], vec!["stats.csv"]),
    ];
    let first = tempfile::tempdir().map_err(|e| e.to_string())?;
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    for dir in [first.path(), second.path()] {
        for (args, _) in &commands {
            run_cli(dir, args)?;
        }
    }
    let mut files = 0;
    for (args, outputs) in &commands {
        for file in outputs {
            let a = std::fs::read(first.path().join(file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(second.path().join(file)).map_err(|e| e.to_string())?;
            if a != b || a.is_empty() {
                return Err(format!("{} differs between runs ({file})", args[0]));
            }
            files += 1;
        }
    }
    Ok(format!("{} invocations, {files} output files byte-identical", commands.len()))
}

fn closed_forms() -> Outcome {
    let mut rng = substream(1010, 0);
    let mut notes = Vec::new();
    let wide = ValueBox::symmetric(6.0).unwrap();
    let cases = [
        ("gaussian", LossSpec::ExpFamily(ExpFamily::Gaussian)),
        ("poisson", LossSpec::ExpFamily(ExpFamily::Poisson)),
        ("phi5", LossSpec::Surrogate(Surrogate::Logistic)),
        ("phi6", LossSpec::Surrogate(Surrogate::Exponential)),
    ];
    for (name, spec) in cases {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.random_range(2..60);
            let mut ys = random_responses(&spec, n, &mut rng);
            // keep the optimum interior: both labels present, positive counts
            match spec {
                LossSpec::Surrogate(_) => {
                    ys[0] = 1.0;
                    ys[1] = -1.0;
                }
                LossSpec::ExpFamily(ExpFamily::Poisson) => ys[0] = ys[0].max(1.0),
                _ => {}
            }
            let closed = fit_leaf(&spec, &ys, wide).map_err(|e| e.to_string())?;
            let solver = fit_leaf_numeric(&spec, &ys, wide).map_err(|e| e.to_string())?;
            let mean = ys.iter().sum::<f64>() / n as f64;
            let pos = ys.iter().filter(|&&y| y > 0.0).count() as f64;
            let neg = n as f64 - pos;
            let formula = match name {
                "gaussian" => mean,
                "poisson" => mean.ln(),
                "phi5" => (pos / neg).ln(),
                _ => 0.5 * (pos / neg).ln(),
            };
            let err = (closed.value - solver.value).abs().max((closed.value - formula).abs());
            worst = worst.max(err);
        }
        if worst > 1e-8 {
            return Err(format!("{name}: closed form and solver differ by {worst:.2e}"));
        }
        notes.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("max |closed - solver| per family: {}", notes.join(", ")))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome, u64)> = vec![
        ("1 leaf-count identity", leaf_counts, 10),
        ("2 centre-cell diameter bound", centre_diameter, 10),
        ("3 leaf-fit grid oracle", leaf_fit_oracle, 30),
        ("4 penalty-path refit oracle", penalty_path_oracle, 60),
        ("5 l2 consistency rate", l2_rate, 600),
        ("6 quantile calibration", quantile_calibration, 120),
        ("7 classification vs Bayes", classification, 180),
        ("8 density normalization and error", density, 180),
        ("9 command determinism", determinism, 300),
        ("10 closed forms vs solver", closed_forms, 10),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let slow = elapsed > Duration::from_secs(limit);
        let (status, detail) = match outcome {
            Ok(d) if !slow => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d} [over the {limit}s budget]")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} criterion {name} ({:.1}s): {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
