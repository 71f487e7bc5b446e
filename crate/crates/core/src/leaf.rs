//! Per-leaf box-constrained fits `argmin_{z in box} sum_i l(z, y_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};
use crate::loss::{ExpFamily, LossSpec, Surrogate};
use crate::types::ValueBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    ClosedForm,
    Solver,
    EmptyDefault,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafFit {
    pub value: f64,
    /// `sum_i l(value, y_i)`.
    pub achieved_loss: f64,
    pub method: FitMethod,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimum of a convex `f` on `box`.
///
/// The endpoints are evaluated as well, so a minimum on the boundary is found exactly.
/// `tol_x` defaults to `1e-10 * width` when `None`.
pub fn golden_section_min<F>(mut f: F, bx: ValueBox, tol_x: Option<f64>, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let tol = tol_x.unwrap_or(1e-10 * bx.width());
    if !(tol > 0.0) {
        return Err(MondrianError::input("golden-section tolerance must be positive"));
    }
    let mut eval = |z: f64| {
        let v = f(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MondrianError::numeric(format!("objective is not finite at {z}")))
        }
    };
    let (mut a, mut b) = (bx.lo, bx.hi);
    let mut best = (a, eval(a)?);
    let fb = eval(b)?;
    if fb < best.1 {
        best = (b, fb);
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    for _ in 0..max_iter {
        if b - a <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    for (z, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (z, v);
        }
    }
    Ok(best.0)
}

/// Smallest `z` in the box whose right slope is non-negative; for a convex objective
/// this is a minimizer. `slope` must be non-decreasing.
fn slope_bisection<G: Fn(f64) -> f64>(slope: G, bx: ValueBox) -> f64 {
    if slope(bx.lo) >= 0.0 {
        return bx.lo;
    }
    if slope(bx.hi) < 0.0 {
        return bx.hi;
    }
    let (mut a, mut b) = (bx.lo, bx.hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if slope(m) >= 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

fn total_loss(spec: &LossSpec, z: f64, ys: &[f64]) -> f64 {
    ys.iter().map(|&y| spec.eval_unchecked(z, y)).sum()
}

fn check_inputs(spec: &LossSpec, ys: &[f64], bx: ValueBox) -> Result<()> {
    for &y in ys {
        spec.check_response(y)?;
    }
    spec.check_value(bx.lo)
        .and_then(|_| spec.check_value(bx.hi))
        .map_err(|_| MondrianError::input(format!("box [{}, {}] leaves the domain of {spec}", bx.lo, bx.hi)))
}

/// Minimizes `z -> sum_i l(z, y_i)` over `bx` numerically, ignoring closed forms.
///
/// Golden-section search on the objective and bisection on the right slope run
/// independently; the better of the two (preferring the bisection point on ties
/// within rounding) is returned.
pub fn fit_leaf_numeric(spec: &LossSpec, ys: &[f64], bx: ValueBox) -> Result<LeafFit> {
    check_inputs(spec, ys, bx)?;
    if ys.is_empty() {
        return Ok(empty_fit(bx));
    }
    let objective = |z: f64| total_loss(spec, z, ys);
    let z_golden = golden_section_min(objective, bx, None, 200)?;
    let z_slope = slope_bisection(|z| ys.iter().map(|&y| spec.right_slope(z, y)).sum(), bx);
    let (f_golden, f_slope) = (objective(z_golden), objective(z_slope));
    if !f_slope.is_finite() && !f_golden.is_finite() {
        return Err(MondrianError::numeric(format!("{spec} objective is not finite on the box")));
    }
    let slack = 1e-12 * (1.0 + f_golden.abs());
    let (value, achieved_loss) = if f_slope <= f_golden + slack {
        (z_slope, f_slope)
    } else {
        (z_golden, f_golden)
    };
    Ok(LeafFit {
        value,
        achieved_loss,
        method: FitMethod::Solver,
    })
}

fn empty_fit(bx: ValueBox) -> LeafFit {
    LeafFit {
        value: bx.nearest_to_zero(),
        achieved_loss: 0.0,
        method: FitMethod::EmptyDefault,
    }
}

/// Box-constrained leaf constant for the responses `ys`.
///
/// An empty leaf gets 0, or the box endpoint nearest 0 when 0 is infeasible.
pub fn fit_leaf(spec: &LossSpec, ys: &[f64], bx: ValueBox) -> Result<LeafFit> {
    check_inputs(spec, ys, bx)?;
    if ys.is_empty() {
        return Ok(empty_fit(bx));
    }
    let n = ys.len() as f64;
    let closed = match spec {
        LossSpec::SquaredError
        | LossSpec::ExpFamily(ExpFamily::Gaussian)
        | LossSpec::Surrogate(Surrogate::Square) => Some(ys.iter().sum::<f64>() / n),
        LossSpec::Pinball { tau } => Some(lower_quantile(ys, *tau)),
        LossSpec::ExpFamily(ExpFamily::Poisson) => {
            let mean = ys.iter().sum::<f64>() / n;
            Some(if mean > 0.0 { mean.ln() } else { bx.lo })
        }
        LossSpec::Surrogate(phi @ (Surrogate::Logistic | Surrogate::Exponential)) => {
            let pos = ys.iter().filter(|&&y| y > 0.0).count() as f64;
            let neg = n - pos;
            let scale = if *phi == Surrogate::Logistic { 1.0 } else { 0.5 };
            Some(if neg == 0.0 {
                bx.hi
            } else if pos == 0.0 {
                bx.lo
            } else {
                scale * (pos / neg).ln()
            })
        }
        _ => None,
    };
    match closed {
        Some(z) => {
            let value = bx.clamp(z);
            Ok(LeafFit {
                value,
                achieved_loss: total_loss(spec, value, ys),
                method: FitMethod::ClosedForm,
            })
        }
        None => fit_leaf_numeric(spec, ys, bx),
    }
}

/// Empirical tau-quantile by lower interpolation: the `ceil(tau n)`-th order statistic.
pub fn lower_quantile(ys: &[f64], tau: f64) -> f64 {
    let n = ys.len();
    let k = ((tau * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = ys.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}
