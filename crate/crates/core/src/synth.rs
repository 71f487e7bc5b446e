//! Seeded synthetic data with known targets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{MondrianError, Result};
use crate::rng::substream;
use crate::types::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Constant,
    /// `(A/d) sum_j sin(2 pi x_j)`; Lipschitz.
    SineRidge { amplitude: f64 },
    /// `A (1 - sqrt(2 |x - 1/2| / sqrt(d)))`; Hölder with exponent 1/2.
    HolderBump { amplitude: f64 },
}

/// `m(x) = offset + kind(x)` on `[0,1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub kind: TargetKind,
    pub offset: f64,
}

impl TargetFunction {
    pub fn constant(c: f64) -> Self {
        TargetFunction {
            kind: TargetKind::Constant,
            offset: c,
        }
    }

    pub fn sine(amplitude: f64) -> Self {
        TargetFunction {
            kind: TargetKind::SineRidge { amplitude },
            offset: 0.0,
        }
    }

    pub fn bump(amplitude: f64) -> Self {
        TargetFunction {
            kind: TargetKind::HolderBump { amplitude },
            offset: 0.0,
        }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        self.offset
            + match self.kind {
                TargetKind::Constant => 0.0,
                TargetKind::SineRidge { amplitude } => {
                    amplitude / d * x.iter().map(|&t| (std::f64::consts::TAU * t).sin()).sum::<f64>()
                }
                TargetKind::HolderBump { amplitude } => {
                    let r = x.iter().map(|&t| (t - 0.5) * (t - 0.5)).sum::<f64>().sqrt();
                    amplitude * (1.0 - (2.0 * r / d.sqrt()).sqrt())
                }
            }
    }

    fn amplitude(&self) -> f64 {
        match self.kind {
            TargetKind::Constant => 0.0,
            TargetKind::SineRidge { amplitude } | TargetKind::HolderBump { amplitude } => amplitude,
        }
    }

    /// Bounds `(inf m, sup m)` valid in every dimension.
    pub fn range(&self) -> (f64, f64) {
        let a = self.amplitude();
        match self.kind {
            TargetKind::Constant => (self.offset, self.offset),
            TargetKind::SineRidge { .. } => (self.offset - a.abs(), self.offset + a.abs()),
            TargetKind::HolderBump { .. } => (self.offset + a.min(0.0), self.offset + a.max(0.0)),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        let (lo, hi) = self.range();
        lo.abs().max(hi.abs())
    }

    /// Hölder exponent `p` of the target.
    pub fn smoothness(&self) -> f64 {
        match self.kind {
            TargetKind::HolderBump { .. } => 0.5,
            _ => 1.0,
        }
    }

    /// A constant `C` with `|m(x) - m(y)| <= C |x - y|^p` in dimension `dim`.
    pub fn holder_constant(&self, dim: usize) -> f64 {
        let d = dim as f64;
        let a = self.amplitude().abs();
        match self.kind {
            TargetKind::Constant => 0.0,
            TargetKind::SineRidge { .. } => std::f64::consts::TAU * a / d.sqrt(),
            TargetKind::HolderBump { .. } => a * (2.0 / d.sqrt()).sqrt(),
        }
    }

    /// `ln` of the integral of `exp(m)` over `[0,1]^dim`; additive targets only.
    pub fn log_partition(&self, dim: usize) -> Result<f64> {
        match self.kind {
            TargetKind::Constant => Ok(self.offset),
            TargetKind::SineRidge { amplitude } => {
                // the trapezoid rule is exact to rounding for smooth periodic integrands
                let k = 512;
                let a = amplitude / dim as f64;
                let one: f64 = (0..k)
                    .map(|i| (a * (std::f64::consts::TAU * i as f64 / k as f64).sin()).exp())
                    .sum::<f64>()
                    / k as f64;
                Ok(self.offset + dim as f64 * one.ln())
            }
            TargetKind::HolderBump { .. } => Err(MondrianError::input(
                "density sampling supports constant and sine targets only",
            )),
        }
    }
}

impl fmt::Display for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TargetKind::Constant => write!(f, "const:{}", self.offset)?,
            TargetKind::SineRidge { amplitude } => write!(f, "sine:{amplitude}")?,
            TargetKind::HolderBump { amplitude } => write!(f, "bump:{amplitude}")?,
        }
        if self.offset != 0.0 && !matches!(self.kind, TargetKind::Constant) {
            write!(f, "+{}", self.offset)?;
        }
        Ok(())
    }
}

/// Parses `const:C`, `sine:A` or `bump:A`, optionally followed by `+OFFSET`.
impl FromStr for TargetFunction {
    type Err = MondrianError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MondrianError::input(format!("cannot parse target {s:?}"));
        let (name, rest) = s.split_once(':').ok_or_else(bad)?;
        let (value, offset) = match rest.split_once('+') {
            Some((v, o)) if !v.is_empty() && !v.ends_with(['e', 'E']) => (v, Some(o)),
            _ => (rest, None),
        };
        let value: f64 = value.trim().parse().map_err(|_| bad())?;
        let offset: f64 = match offset {
            Some(o) => o.trim().parse().map_err(|_| bad())?,
            None => 0.0,
        };
        if !(value.is_finite() && offset.is_finite()) {
            return Err(bad());
        }
        let t = match name.trim() {
            "const" => TargetFunction::constant(value + offset),
            "sine" => TargetFunction::sine(value).with_offset(offset),
            "bump" => TargetFunction::bump(value).with_offset(offset),
            _ => return Err(bad()),
        };
        Ok(t)
    }
}

/// Response model attached to a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// `Y = m(X) + sigma N(0,1)`.
    Regression { sigma: f64 },
    /// `Y ~ Poisson(e^{m(X)})`.
    Poisson,
    /// `Y ~ Bernoulli(1/2 + m(X))` on `{0,1}`.
    Bernoulli,
    /// Labels in `{-1,+1}` with `P(Y = 1 | x) = 1/2 + m(x)`.
    Classification,
    /// `Y` on `{1,2,...}` with success probability `1 - e^{m(X)}`.
    Geometric,
    /// `Y = m(X) + sigma N(0,1)`; the target of interest is the conditional `tau`-quantile.
    Quantile { tau: f64, sigma: f64 },
    /// Unlabelled points with density proportional to `e^{m}`.
    Density,
}

impl Task {
    /// Parses a task name; `sigma` and `tau` fill the parametrized tasks.
    pub fn parse(name: &str, sigma: f64, tau: f64) -> Result<Self> {
        let t = match name {
            "gaussian" | "regression" => Task::Regression { sigma },
            "poisson" => Task::Poisson,
            "bernoulli" => Task::Bernoulli,
            "classification" => Task::Classification,
            "geometric" => Task::Geometric,
            "quantile" => Task::Quantile { tau, sigma },
            "density" => Task::Density,
            _ => return Err(MondrianError::input(format!("unknown task {name:?}"))),
        };
        Ok(t)
    }

    /// Target used when none is given.
    pub fn default_target(&self) -> TargetFunction {
        match self {
            Task::Regression { .. } | Task::Quantile { .. } | Task::Poisson | Task::Density => {
                TargetFunction::sine(0.5)
            }
            Task::Bernoulli | Task::Classification => TargetFunction::sine(0.3),
            Task::Geometric => TargetFunction::sine(0.5).with_offset(-1.0),
        }
    }

    pub fn check(&self, target: &TargetFunction, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(MondrianError::input("dimension must be at least 1"));
        }
        let (lo, hi) = target.range();
        let bad = |why: &str| Err(MondrianError::input(format!("target {target} is inadmissible: {why}")));
        match *self {
            Task::Regression { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => bad("noise level must be >= 0"),
            Task::Quantile { tau, sigma } if !(tau > 0.0 && tau < 1.0 && sigma > 0.0 && sigma.is_finite()) => {
                bad("quantile level must lie in (0,1) and noise level must be > 0")
            }
            Task::Bernoulli | Task::Classification if !(lo > -0.5 && hi < 0.5) => bad("range must lie inside (-1/2, 1/2)"),
            Task::Geometric if hi >= 0.0 => bad("range must be negative"),
            Task::Poisson if hi > 20.0 => bad("log-rate above 20"),
            Task::Density => target.log_partition(dim).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// The function a consistent estimator converges to at `x`.
    pub fn truth(&self, target: &TargetFunction, x: &[f64]) -> f64 {
        let m = target.eval(x);
        match *self {
            Task::Quantile { tau, sigma } => m + sigma * std_normal_quantile(tau),
            _ => m,
        }
    }

    /// Conditional probability of the label `+1` for classification tasks.
    pub fn eta(&self, target: &TargetFunction, x: &[f64]) -> f64 {
        0.5 + target.eval(x)
    }
}

fn std_normal_quantile(p: f64) -> f64 {
    StdNormal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

/// Draws `n` points and responses for `task`; `X` is uniform on `[0,1]^dim` except for density tasks.
pub fn generate(task: Task, target: &TargetFunction, n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    task.check(target, dim)?;
    let mut rng = substream(seed, 0);
    if task == Task::Density {
        let (_, sup) = target.range();
        let mut xs = Vec::with_capacity(n * dim);
        let mut x = vec![0.0; dim];
        let mut accepted = 0;
        while accepted < n {
            x.iter_mut().for_each(|t| *t = rng.random::<f64>());
            if rng.random::<f64>() < (target.eval(&x) - sup).exp() {
                xs.extend_from_slice(&x);
                accepted += 1;
            }
        }
        return Dataset::new(dim, xs, None);
    }
    let xs: Vec<f64> = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    let mut ys = Vec::with_capacity(n);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for x in xs.chunks_exact(dim) {
        let m = target.eval(x);
        let y = match task {
            Task::Regression { sigma } | Task::Quantile { sigma, .. } => m + sigma * unit.sample(&mut rng),
            Task::Poisson => Poisson::new(m.exp())
                .map_err(|e| MondrianError::input(format!("poisson rate: {e}")))?
                .sample(&mut rng),
            Task::Bernoulli => rng.random_bool(0.5 + m) as u8 as f64,
            Task::Classification => {
                if rng.random_bool(0.5 + m) {
                    1.0
                } else {
                    -1.0
                }
            }
            Task::Geometric => {
                let failures = Geometric::new(-m.exp_m1())
                    .map_err(|e| MondrianError::input(format!("geometric probability: {e}")))?
                    .sample(&mut rng);
                failures as f64 + 1.0
            }
            Task::Density => unreachable!(),
        };
        ys.push(y);
    }
    Dataset::new(dim, xs, Some(ys))
}

/// `n` uniform test points of dimension `dim`.
pub fn uniform_points(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    let mut rng = substream(seed, 1);
    Dataset::new(dim, (0..n * dim).map(|_| rng.random::<f64>()).collect(), None)
}

/// Mean squared distance between predictions and the task's truth on `points`.
///
/// For classification tasks this is the excess 0-1 risk of `sign(prediction)`
/// (zero scores count as -1) over the Bayes rule.
pub fn true_excess_risk(task: Task, target: &TargetFunction, points: &Dataset, predictions: &[f64]) -> Result<f64> {
    if points.len() != predictions.len() || points.is_empty() {
        return Err(MondrianError::input("need one prediction per test point"));
    }
    let total: f64 = points
        .points()
        .zip(predictions)
        .map(|(x, &h)| match task {
            Task::Classification => {
                let eta = task.eta(target, x);
                let bayes_positive = eta > 0.5;
                if bayes_positive != (h > 0.0) {
                    (2.0 * eta - 1.0).abs()
                } else {
                    0.0
                }
            }
            _ => {
                let e = h - task.truth(target, x);
                e * e
            }
        })
        .sum();
    Ok(total / points.len() as f64)
}

/// Expected 0-1 error of `sign(prediction)` at the test points given `eta`.
pub fn classification_error(target: &TargetFunction, points: &Dataset, predictions: &[f64]) -> Result<f64> {
    if points.len() != predictions.len() || points.is_empty() {
        return Err(MondrianError::input("need one prediction per test point"));
    }
    let total: f64 = points
        .points()
        .zip(predictions)
        .map(|(x, &h)| {
            let eta = Task::Classification.eta(target, x);
            if h > 0.0 {
                1.0 - eta
            } else {
                eta
            }
        })
        .sum();
    Ok(total / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn noiseless_regression_is_exact() {
        let t = TargetFunction::sine(0.5);
        let data = generate(Task::Regression { sigma: 0.0 }, &t, 100, 2, 1).unwrap();
        for (x, &y) in data.points().zip(data.responses().unwrap()) {
            assert_eq!(y, t.eval(x));
        }
    }

    #[test]
    fn bernoulli_mean() {
        let data = generate(Task::Bernoulli, &TargetFunction::constant(0.3), 20_000, 1, 2).unwrap();
        let (m, se) = mean(data.responses().unwrap());
        assert!((m - 0.8).abs() < 3.0 * se, "{m} {se}");
    }

    #[test]
    fn poisson_mean() {
        let data = generate(Task::Poisson, &TargetFunction::constant(0.0), 20_000, 1, 3).unwrap();
        let (m, se) = mean(data.responses().unwrap());
        assert!((m - 1.0).abs() < 3.0 * se, "{m} {se}");
    }

    #[test]
    fn geometric_mean() {
        // success probability 1 - e^{-1}, mean 1 / p
        let data = generate(Task::Geometric, &TargetFunction::constant(-1.0), 20_000, 1, 4).unwrap();
        let (m, se) = mean(data.responses().unwrap());
        let want = 1.0 / (1.0 - (-1.0f64).exp());
        assert!((m - want).abs() < 3.0 * se, "{m} {want}");
        assert!(data.responses().unwrap().iter().all(|&y| y >= 1.0));
    }

    #[test]
    fn density_sampler_matches_target_mean() {
        let t = TargetFunction::sine(1.0);
        let data = generate(Task::Density, &t, 20_000, 1, 5).unwrap();
        let xs: Vec<f64> = data.points().map(|x| x[0]).collect();
        let (m, se) = mean(&xs);
        // E[X] under exp(sin 2 pi x) / Z by midpoint quadrature
        let k = 100_000;
        let z = t.log_partition(1).unwrap().exp();
        let want: f64 = (0..k)
            .map(|i| {
                let x = (i as f64 + 0.5) / k as f64;
                x * t.eval(&[x]).exp()
            })
            .sum::<f64>()
            / k as f64
            / z;
        assert!((m - want).abs() < 3.0 * se, "{m} {want}");
    }

    #[test]
    fn log_partition_against_quadrature() {
        let t = TargetFunction::sine(0.8).with_offset(0.2);
        let k = 400;
        let mut z = 0.0;
        for i in 0..k {
            for j in 0..k {
                let x = [(i as f64 + 0.5) / k as f64, (j as f64 + 0.5) / k as f64];
                z += t.eval(&x).exp();
            }
        }
        z /= (k * k) as f64;
        assert!((t.log_partition(2).unwrap() - z.ln()).abs() < 1e-9);
        assert!(TargetFunction::bump(1.0).log_partition(1).is_err());
    }

    #[test]
    fn inadmissible_ranges_are_rejected() {
        assert!(generate(Task::Bernoulli, &TargetFunction::sine(0.6), 10, 1, 0).is_err());
        assert!(generate(Task::Geometric, &TargetFunction::sine(0.5), 10, 1, 0).is_err());
        assert!(generate(Task::Regression { sigma: -1.0 }, &TargetFunction::sine(0.5), 10, 1, 0).is_err());
        assert!(generate(Task::Density, &TargetFunction::bump(0.5), 10, 1, 0).is_err());
    }

    #[test]
    fn targets_stay_in_their_holder_ball() {
        let mut rng = substream(7, 7);
        for dim in 1..=3 {
            for t in [TargetFunction::sine(0.5), TargetFunction::bump(0.7)] {
                let (lo, hi) = t.range();
                let c = t.holder_constant(dim);
                let p = t.smoothness();
                for _ in 0..10_000 {
                    let x: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
                    let y: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
                    let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    let (mx, my) = (t.eval(&x), t.eval(&y));
                    assert!(mx >= lo - 1e-12 && mx <= hi + 1e-12);
                    assert!((mx - my).abs() <= 1.05 * c * dist.powf(p) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn excess_risk_examples() {
        let t = TargetFunction::sine(0.5);
        let pts = uniform_points(1000, 1, 3).unwrap();
        let exact: Vec<f64> = pts.points().map(|x| t.eval(x)).collect();
        let task = Task::Regression { sigma: 1.0 };
        assert_eq!(true_excess_risk(task, &t, &pts, &exact).unwrap(), 0.0);
        let shifted: Vec<f64> = exact.iter().map(|v| v + 1.0).collect();
        assert!((true_excess_risk(task, &t, &pts, &shifted).unwrap() - 1.0).abs() < 1e-12);
        // loop oracle
        let noisy: Vec<f64> = exact.iter().enumerate().map(|(i, v)| v + (i as f64).cos()).collect();
        let mut direct = 0.0;
        for i in 0..pts.len() {
            direct += (noisy[i] - t.eval(pts.point(i))).powi(2);
        }
        assert!((true_excess_risk(task, &t, &pts, &noisy).unwrap() - direct / 1000.0).abs() < 1e-12);
    }

    #[test]
    fn bayes_rule_has_zero_classification_excess() {
        let t = TargetFunction::sine(0.3);
        let pts = uniform_points(2000, 1, 4).unwrap();
        let bayes: Vec<f64> = pts.points().map(|x| t.eval(x)).collect();
        assert_eq!(true_excess_risk(Task::Classification, &t, &pts, &bayes).unwrap(), 0.0);
        let flipped: Vec<f64> = bayes.iter().map(|v| -v).collect();
        let e0 = classification_error(&t, &pts, &bayes).unwrap();
        let e1 = classification_error(&t, &pts, &flipped).unwrap();
        let excess = true_excess_risk(Task::Classification, &t, &pts, &flipped).unwrap();
        assert!((e1 - e0 - excess).abs() < 1e-12);
    }

    #[test]
    fn quantile_truth_shifts_by_normal_quantile() {
        let t = TargetFunction::constant(1.0);
        let task = Task::Quantile { tau: 0.975, sigma: 2.0 };
        assert!((task.truth(&t, &[0.3]) - (1.0 + 2.0 * 1.959963984540054)).abs() < 1e-9);
    }

    #[test]
    fn target_parsing() {
        assert_eq!("sine:0.5".parse::<TargetFunction>().unwrap(), TargetFunction::sine(0.5));
        assert_eq!(
            "sine:0.5+-1".parse::<TargetFunction>().unwrap(),
            TargetFunction::sine(0.5).with_offset(-1.0)
        );
        assert_eq!("const:2".parse::<TargetFunction>().unwrap(), TargetFunction::constant(2.0));
        assert_eq!("bump:1e+0".parse::<TargetFunction>().unwrap(), TargetFunction::bump(1.0));
        for t in [TargetFunction::sine(0.4).with_offset(-1.5), TargetFunction::bump(0.7)] {
            assert_eq!(t.to_string().parse::<TargetFunction>().unwrap(), t);
        }
        assert!("wave:1".parse::<TargetFunction>().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let t = TargetFunction::sine(0.3);
        let a = generate(Task::Classification, &t, 500, 2, 9).unwrap();
        let b = generate(Task::Classification, &t, 500, 2, 9).unwrap();
        assert_eq!(a, b);
    }
}
