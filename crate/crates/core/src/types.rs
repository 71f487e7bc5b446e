//! Shared domain vocabulary: points, datasets, cells, value boxes and fit configuration.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};

/// Default cap on the number of leaves a single sampled partition may hold.
pub const DEFAULT_LEAF_CAP: usize = 1_000_000;

/// Default number of trees in a forest.
pub const DEFAULT_TREE_COUNT: usize = 100;

/// Checks that `x` is a point of `[0,1]^dim`.
pub fn check_point(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(MondrianError::input(format!(
            "point has dimension {} but {} was expected",
            x.len(),
            dim
        )));
    }
    if let Some((j, v)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(MondrianError::input(format!(
            "coordinate {j} = {v} lies outside [0,1]"
        )));
    }
    Ok(())
}

/// A point of the unit cube `[0,1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(MondrianError::input("a point needs at least one coordinate"));
        }
        check_point(&coords, coords.len())?;
        Ok(Point(coords))
    }

    /// Projects arbitrary finite coordinates onto `[0,1]^d`.
    pub fn clamped(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(MondrianError::input("non-finite coordinate"));
        }
        Point::new(coords.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Observations `(X_i, Y_i)` stored row-major; responses are absent for density tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    responses: Option<Vec<f64>>,
}

impl Dataset {
    /// Builds a dataset from row-major features. Every coordinate must lie in `[0,1]`.
    pub fn new(dim: usize, features: Vec<f64>, responses: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(MondrianError::input("dimension must be at least 1"));
        }
        if features.len() % dim != 0 {
            return Err(MondrianError::input(format!(
                "{} feature values do not form rows of width {dim}",
                features.len()
            )));
        }
        for row in features.chunks_exact(dim) {
            check_point(row, dim)?;
        }
        let n = features.len() / dim;
        if let Some(ys) = &responses {
            if ys.len() != n {
                return Err(MondrianError::input(format!(
                    "{} responses for {n} points",
                    ys.len()
                )));
            }
            if ys.iter().any(|y| !y.is_finite()) {
                return Err(MondrianError::input("non-finite response"));
            }
        }
        Ok(Dataset {
            dim,
            features,
            responses,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], responses: Option<Vec<f64>>) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| MondrianError::input("cannot infer dimension of an empty row set"))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(MondrianError::input("rows have differing dimensions"));
        }
        Dataset::new(dim, rows.concat(), responses)
    }

    /// An empty dataset of the given dimension.
    pub fn empty(dim: usize, with_responses: bool) -> Result<Self> {
        Dataset::new(dim, Vec::new(), with_responses.then(Vec::new))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    pub(crate) fn require_responses(&self) -> Result<&[f64]> {
        self.responses()
            .ok_or_else(|| MondrianError::input("this task needs a response column"))
    }

    /// Reads the comma-separated format: header `x1,...,xd[,y]`, one row per observation.
    /// With `clamp`, coordinates are projected onto `[0,1]` instead of rejected.
    pub fn read_csv<R: Read>(reader: R, clamp: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        let has_y = names.last() == Some(&"y");
        let dim = if has_y { names.len() - 1 } else { names.len() };
        if dim == 0 {
            return Err(MondrianError::input("header names no feature columns"));
        }
        for (j, name) in names[..dim].iter().enumerate() {
            if *name != format!("x{}", j + 1) {
                return Err(MondrianError::input(format!(
                    "column {} is named {name:?}, expected \"x{}\"",
                    j + 1,
                    j + 1
                )));
            }
        }
        let mut features = Vec::new();
        let mut ys = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() {
                return Err(MondrianError::input(format!(
                    "row {} has {} fields, expected {}",
                    line + 1,
                    record.len(),
                    names.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    MondrianError::input(format!("row {}: cannot parse {field:?}", line + 1))
                })?;
                if j < dim {
                    if clamp && v.is_finite() {
                        features.push(v.clamp(0.0, 1.0));
                    } else {
                        features.push(v);
                    }
                } else {
                    ys.push(v);
                }
            }
        }
        Dataset::new(dim, features, has_y.then_some(ys))
    }

    pub fn read_csv_path(path: impl AsRef<Path>, clamp: bool) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| {
            MondrianError::input(format!("cannot open {}: {e}", path.as_ref().display()))
        })?;
        Dataset::read_csv(std::io::BufReader::new(file), clamp)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        if self.responses.is_some() {
            header.push("y".into());
        }
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.point(i).iter().map(f64::to_string).collect();
            if let Some(ys) = &self.responses {
                row.push(ys[i].to_string());
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// An axis-aligned box `prod_j [lo_j, hi_j]` inside the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cell {
    pub fn unit(dim: usize) -> Self {
        Cell {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(MondrianError::input("cell bounds have mismatched dimensions"));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(0.0 <= *a && a <= b && *b <= 1.0) {
                return Err(MondrianError::input(format!(
                    "invalid cell side [{a}, {b}]"
                )));
            }
        }
        Ok(Cell { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Sum of side lengths, the splitting rate of the cell.
    pub fn linear_size(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).sum()
    }

    pub fn side(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    /// Half-open membership `lo <= x < hi`, with the outer face `hi = 1` inclusive.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        if x.len() != self.dim() {
            return Err(MondrianError::input(format!(
                "point has dimension {} but the cell has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&a, &b))| a <= v && (v < b || (b == 1.0 && v == 1.0)))
    }

    /// Splits along `dim` at `threshold`: left is `[lo, s)`, right is `[s, hi]`.
    pub(crate) fn split(&self, dim: usize, threshold: f64) -> (Cell, Cell) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[dim] = threshold;
        right.lo[dim] = threshold;
        (left, right)
    }
}

/// Closed interval `[lo, hi]` constraining the per-leaf constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBox {
    pub lo: f64,
    pub hi: f64,
}

impl ValueBox {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MondrianError::input(format!(
                "value box [{lo}, {hi}] must be finite with lo < hi"
            )));
        }
        Ok(ValueBox { lo, hi })
    }

    /// Symmetric box `[-beta, beta]`.
    pub fn symmetric(beta: f64) -> Result<Self> {
        ValueBox::new(-beta, beta)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// The feasible value nearest to zero.
    pub fn nearest_to_zero(&self) -> f64 {
        self.clamp(0.0)
    }
}

impl fmt::Display for ValueBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

impl std::str::FromStr for ValueBox {
    type Err = MondrianError;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(',')
            .ok_or_else(|| MondrianError::input(format!("box {s:?} is not of the form lo,hi")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| MondrianError::input(format!("cannot parse box bound {t:?}")))
        };
        ValueBox::new(parse(lo)?, parse(hi)?)
    }
}

/// How the stopping time of each tree is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Every tree is pruned at the same time.
    Fixed(f64),
    /// Penalized selection per tree over `[0, lambda_max]`. A missing `lambda_max`
    /// defaults to `n^(1/d) - 1`, where `(1+lambda)^d` expected leaves equal `n`.
    Auto { alpha: f64, lambda_max: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub tree_count: usize,
    pub lambda_mode: LambdaMode,
    /// `None` uses the loss family's default box for the sample size.
    pub value_box: Option<ValueBox>,
    pub seed: u64,
    pub leaf_cap: usize,
}

impl FitConfig {
    pub fn fixed(lambda: f64, tree_count: usize, seed: u64) -> Self {
        FitConfig {
            tree_count,
            lambda_mode: LambdaMode::Fixed(lambda),
            value_box: None,
            seed,
            leaf_cap: DEFAULT_LEAF_CAP,
        }
    }

    pub fn auto(alpha: f64, lambda_max: Option<f64>, tree_count: usize, seed: u64) -> Self {
        FitConfig {
            tree_count,
            lambda_mode: LambdaMode::Auto { alpha, lambda_max },
            value_box: None,
            seed,
            leaf_cap: DEFAULT_LEAF_CAP,
        }
    }

    pub fn with_box(mut self, value_box: ValueBox) -> Self {
        self.value_box = Some(value_box);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tree_count == 0 {
            return Err(MondrianError::input("tree count must be positive"));
        }
        if self.leaf_cap == 0 {
            return Err(MondrianError::input("leaf cap must be positive"));
        }
        match self.lambda_mode {
            LambdaMode::Fixed(l) if !(l.is_finite() && l >= 0.0) => Err(MondrianError::input(
                format!("stopping time {l} must be finite and non-negative"),
            )),
            LambdaMode::Auto { alpha, .. } if !(alpha > 0.0 && alpha <= 1.0) => Err(
                MondrianError::input(format!("penalty strength {alpha} must lie in (0,1]")),
            ),
            LambdaMode::Auto {
                lambda_max: Some(m),
                ..
            } if !(m.is_finite() && m > 0.0) => Err(MondrianError::input(format!(
                "lambda_max {m} must be finite and positive"
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_size_examples() {
        assert_eq!(Cell::unit(2).linear_size(), 2.0);
        let c = Cell::new(vec![0.0, 0.0], vec![1.0, 0.5]).unwrap();
        assert_eq!(c.linear_size(), 1.5);
        let degenerate = Cell::new(vec![0.3, 0.7], vec![0.3, 0.7]).unwrap();
        assert_eq!(degenerate.linear_size(), 0.0);
    }

    #[test]
    fn contains_half_open() {
        let left = Cell::new(vec![0.0], vec![0.5]).unwrap();
        assert!(left.contains(&[0.25]).unwrap());
        assert!(!left.contains(&[0.5]).unwrap());
        let right = Cell::new(vec![0.5], vec![1.0]).unwrap();
        assert!(right.contains(&[1.0]).unwrap());
        assert!(right.contains(&[0.5]).unwrap());
        assert!(left.contains(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(2, vec![0.1, 0.2, 0.3], None).is_err());
        assert!(Dataset::new(1, vec![1.5], None).is_err());
        assert!(Dataset::new(1, vec![0.5, 0.2], Some(vec![1.0])).is_err());
        assert!(Dataset::new(1, vec![0.5], Some(vec![f64::NAN])).is_err());
        let ds = Dataset::new(2, vec![0.1, 0.2, 0.3, 0.4], Some(vec![1.0, 2.0])).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.point(1), &[0.3, 0.4]);
    }

    #[test]
    fn csv_round_trip_and_clamp() {
        let ds = Dataset::new(2, vec![0.1, 0.25, 1.0, 0.0], Some(vec![-1.5, 3.0])).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        assert_eq!(Dataset::read_csv(&buf[..], false).unwrap(), ds);

        let raw = "x1\n1.2\n-0.1\n";
        assert!(Dataset::read_csv(raw.as_bytes(), false).is_err());
        let clamped = Dataset::read_csv(raw.as_bytes(), true).unwrap();
        assert_eq!(clamped.features(), &[1.0, 0.0]);
        assert!(clamped.responses().is_none());

        assert!(Dataset::read_csv("a,b\n0.1,0.2\n".as_bytes(), false).is_err());
    }

    #[test]
    fn value_box_parsing() {
        let b: ValueBox = "-2,0.5".parse().unwrap();
        assert_eq!(b, ValueBox { lo: -2.0, hi: 0.5 });
        assert!("1,1".parse::<ValueBox>().is_err());
        assert!("abc".parse::<ValueBox>().is_err());
        assert_eq!(b.nearest_to_zero(), 0.0);
        assert_eq!(ValueBox::new(-2.0, -0.5).unwrap().nearest_to_zero(), -0.5);
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::fixed(-1.0, 10, 0).validate().is_err());
        assert!(FitConfig::fixed(1.0, 0, 0).validate().is_err());
        assert!(FitConfig::auto(0.0, None, 10, 0).validate().is_err());
        assert!(FitConfig::auto(1.5, None, 10, 0).validate().is_err());
        assert!(FitConfig::auto(1.0, None, 10, 0).validate().is_ok());
    }
}
