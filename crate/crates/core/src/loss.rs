//! Convex losses `l(v, y)` of the leaf value `v` for a fixed response `y`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MondrianError, Result};
use crate::types::ValueBox;

/// Exponential-family negative log-likelihoods `-B(v) y + D(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpFamily {
    /// `B(v) = v`, `D(v) = v^2 / 2`.
    Gaussian,
    /// `B(v) = v`, `D(v) = e^v`; `v` is the log-rate.
    Poisson,
    /// Bernoulli on `{0,1}` with success probability `1/2 + v`, `v` in `(-1/2, 1/2)`.
    BernoulliShifted,
    /// Geometric on `{1,2,...}` with `v = ln(1 - p) < 0`; `D(v) = -ln(e^{-v} - 1)`.
    Geometric,
}

/// Classification cost `phi_k` applied to the margin.
///
/// `Square`, `Logistic` and `Exponential` are increasing costs evaluated at `-y v`;
/// `Hinge`, `SmoothHinge` and `ModifiedSquare` are decreasing costs evaluated at `y v`.
/// Both readings penalize a wrong sign of `v` relative to the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// phi_1(u) = (1 + u)^2
    Square,
    /// phi_2(u) = max(1 - u, 0)
    Hinge,
    /// phi_3: 1/2 - u for u <= 0, (1 - u)^2 / 2 on (0, 1], 0 beyond
    SmoothHinge,
    /// phi_4(u) = max(1 - u, 0)^2
    ModifiedSquare,
    /// phi_5(u) = log2(1 + e^u)
    Logistic,
    /// phi_6(u) = e^u
    Exponential,
}

impl Surrogate {
    pub fn index(self) -> u8 {
        match self {
            Surrogate::Square => 1,
            Surrogate::Hinge => 2,
            Surrogate::SmoothHinge => 3,
            Surrogate::ModifiedSquare => 4,
            Surrogate::Logistic => 5,
            Surrogate::Exponential => 6,
        }
    }

    pub fn from_index(k: u8) -> Result<Self> {
        Ok(match k {
            1 => Surrogate::Square,
            2 => Surrogate::Hinge,
            3 => Surrogate::SmoothHinge,
            4 => Surrogate::ModifiedSquare,
            5 => Surrogate::Logistic,
            6 => Surrogate::Exponential,
            _ => return Err(MondrianError::input(format!("no surrogate cost phi{k}"))),
        })
    }

    /// +1 when the cost is taken at `-y v`, -1 when at `y v`.
    fn orientation(self) -> f64 {
        match self {
            Surrogate::Square | Surrogate::Logistic | Surrogate::Exponential => 1.0,
            Surrogate::Hinge | Surrogate::SmoothHinge | Surrogate::ModifiedSquare => -1.0,
        }
    }

    pub fn cost(self, u: f64) -> f64 {
        match self {
            Surrogate::Square => (1.0 + u) * (1.0 + u),
            Surrogate::Hinge => (1.0 - u).max(0.0),
            Surrogate::SmoothHinge => {
                if u <= 0.0 {
                    0.5 - u
                } else if u <= 1.0 {
                    0.5 * (1.0 - u) * (1.0 - u)
                } else {
                    0.0
                }
            }
            Surrogate::ModifiedSquare => {
                let t = (1.0 - u).max(0.0);
                t * t
            }
            Surrogate::Logistic => (u.max(0.0) + (-u.abs()).exp().ln_1p()) / std::f64::consts::LN_2,
            Surrogate::Exponential => u.exp(),
        }
    }

    /// One-sided derivatives of the cost at `u`: (left, right).
    fn cost_slopes(self, u: f64) -> (f64, f64) {
        match self {
            Surrogate::Square => {
                let g = 2.0 * (1.0 + u);
                (g, g)
            }
            Surrogate::Hinge => (
                if u <= 1.0 { -1.0 } else { 0.0 },
                if u < 1.0 { -1.0 } else { 0.0 },
            ),
            Surrogate::SmoothHinge => {
                let g = if u <= 0.0 {
                    -1.0
                } else if u < 1.0 {
                    u - 1.0
                } else {
                    0.0
                };
                (g, g)
            }
            Surrogate::ModifiedSquare => {
                let g = -2.0 * (1.0 - u).max(0.0);
                (g, g)
            }
            Surrogate::Logistic => {
                let s = if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                };
                let g = s / std::f64::consts::LN_2;
                (g, g)
            }
            Surrogate::Exponential => {
                let g = u.exp();
                (g, g)
            }
        }
    }
}

/// A loss family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LossSpec {
    SquaredError,
    /// Check loss `rho_tau(y - v)`.
    Pinball { tau: f64 },
    Huber { delta: f64 },
    ExpFamily(ExpFamily),
    Surrogate(Surrogate),
    /// `l(v, y) = -v`, the data term of the log-density likelihood.
    DensityPseudo,
}

impl LossSpec {
    pub fn pinball(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(MondrianError::input(format!("quantile level {tau} must lie in (0,1)")));
        }
        Ok(LossSpec::Pinball { tau })
    }

    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(MondrianError::input(format!("Huber threshold {delta} must be positive")));
        }
        Ok(LossSpec::Huber { delta })
    }

    pub fn is_surrogate(&self) -> bool {
        matches!(self, LossSpec::Surrogate(_))
    }

    /// Checks that `y` is an admissible response for the family.
    pub fn check_response(&self, y: f64) -> Result<()> {
        let ok = y.is_finite()
            && match self {
                LossSpec::ExpFamily(ExpFamily::Poisson) => y >= 0.0 && y.fract() == 0.0,
                LossSpec::ExpFamily(ExpFamily::Geometric) => y >= 1.0 && y.fract() == 0.0,
                LossSpec::ExpFamily(ExpFamily::BernoulliShifted) => y == 0.0 || y == 1.0,
                LossSpec::Surrogate(_) => y == 1.0 || y == -1.0,
                _ => true,
            };
        if ok {
            Ok(())
        } else {
            Err(MondrianError::input(format!("response {y} is not admissible for {self}")))
        }
    }

    /// Checks that `v` lies in the family's natural parameter domain.
    pub fn check_value(&self, v: f64) -> Result<()> {
        let ok = v.is_finite()
            && match self {
                LossSpec::ExpFamily(ExpFamily::BernoulliShifted) => v.abs() < 0.5,
                LossSpec::ExpFamily(ExpFamily::Geometric) => v < 0.0,
                _ => true,
            };
        if ok {
            Ok(())
        } else {
            Err(MondrianError::input(format!("value {v} is outside the domain of {self}")))
        }
    }

    /// `l(v, y)` with domain checks.
    pub fn eval(&self, v: f64, y: f64) -> Result<f64> {
        self.check_value(v)?;
        self.check_response(y)?;
        Ok(self.eval_unchecked(v, y))
    }

    pub(crate) fn eval_unchecked(&self, v: f64, y: f64) -> f64 {
        match *self {
            LossSpec::SquaredError => (v - y) * (v - y),
            LossSpec::Pinball { tau } => {
                let u = y - v;
                if u < 0.0 {
                    (tau - 1.0) * u
                } else {
                    tau * u
                }
            }
            LossSpec::Huber { delta } => {
                let r = (v - y).abs();
                if r <= delta {
                    0.5 * r * r
                } else {
                    delta * (r - 0.5 * delta)
                }
            }
            LossSpec::ExpFamily(kind) => match kind {
                ExpFamily::Gaussian => -v * y + 0.5 * v * v,
                ExpFamily::Poisson => -v * y + v.exp(),
                ExpFamily::BernoulliShifted => {
                    -y * ((0.5 + v).ln() - (0.5 - v).ln()) - (0.5 - v).ln()
                }
                // -ln(e^{-v} - 1) = v - ln(1 - e^v)
                ExpFamily::Geometric => -v * y + v - (-v.exp_m1()).ln(),
            },
            LossSpec::Surrogate(phi) => phi.cost(phi.orientation() * -y * v),
            LossSpec::DensityPseudo => -v,
        }
    }

    /// Right derivative of `v -> l(v, y)`.
    pub(crate) fn right_slope(&self, v: f64, y: f64) -> f64 {
        match *self {
            LossSpec::SquaredError => 2.0 * (v - y),
            LossSpec::Pinball { tau } => {
                if v < y {
                    -tau
                } else {
                    1.0 - tau
                }
            }
            LossSpec::Huber { delta } => (v - y).clamp(-delta, delta),
            LossSpec::ExpFamily(kind) => match kind {
                ExpFamily::Gaussian => v - y,
                ExpFamily::Poisson => v.exp() - y,
                ExpFamily::BernoulliShifted => {
                    -y * (1.0 / (0.5 + v) + 1.0 / (0.5 - v)) + 1.0 / (0.5 - v)
                }
                ExpFamily::Geometric => -y - 1.0 / v.exp_m1(),
            },
            LossSpec::Surrogate(phi) => {
                // l(v) = phi(s v) with s = -orientation * y
                let s = phi.orientation() * -y;
                let (left, right) = phi.cost_slopes(s * v);
                if s > 0.0 {
                    s * right
                } else {
                    s * left
                }
            }
            LossSpec::DensityPseudo => -1.0,
        }
    }

    /// Default value box for sample size `n`, with unit constants in the growth rates.
    pub fn domain(&self, n: usize) -> ValueBox {
        let n = n.max(2) as f64;
        let log_n = n.ln();
        let loglog = |floor: f64| log_n.ln().max(floor);
        let (lo, hi) = match self {
            LossSpec::SquaredError | LossSpec::Huber { .. } => (-log_n, log_n),
            LossSpec::ExpFamily(ExpFamily::Gaussian) => (-log_n, log_n),
            LossSpec::Surrogate(Surrogate::Exponential)
            | LossSpec::ExpFamily(ExpFamily::Poisson)
            | LossSpec::DensityPseudo => (-loglog(1.0), loglog(1.0)),
            LossSpec::Surrogate(_) => (-log_n, log_n),
            LossSpec::ExpFamily(ExpFamily::BernoulliShifted) => {
                let b = (0.5 - 1.0 / log_n).max(0.1);
                (-b, b)
            }
            LossSpec::ExpFamily(ExpFamily::Geometric) => {
                let b = loglog(2.0);
                (-b, -1.0 / b)
            }
            LossSpec::Pinball { .. } => {
                let b = loglog(std::f64::consts::E).sqrt();
                (-b, b)
            }
        };
        ValueBox { lo, hi }
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::SquaredError => write!(f, "l2"),
            LossSpec::Pinball { tau } => write!(f, "pinball:{tau}"),
            LossSpec::Huber { delta } => write!(f, "huber:{delta}"),
            LossSpec::ExpFamily(ExpFamily::Gaussian) => write!(f, "gaussian"),
            LossSpec::ExpFamily(ExpFamily::Poisson) => write!(f, "poisson"),
            LossSpec::ExpFamily(ExpFamily::BernoulliShifted) => write!(f, "bernoulli"),
            LossSpec::ExpFamily(ExpFamily::Geometric) => write!(f, "geometric"),
            LossSpec::Surrogate(phi) => write!(f, "phi{}", phi.index()),
            LossSpec::DensityPseudo => write!(f, "density"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = MondrianError;

    fn from_str(s: &str) -> Result<Self> {
        let param = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| MondrianError::input(format!("cannot parse loss parameter {t:?}")))
        };
        match s.split_once(':') {
            Some(("pinball", t)) => LossSpec::pinball(param(t)?),
            Some(("huber", t)) => LossSpec::huber(param(t)?),
            Some(_) => Err(MondrianError::input(format!("unknown loss {s:?}"))),
            None => match s {
                "l2" => Ok(LossSpec::SquaredError),
                "gaussian" => Ok(LossSpec::ExpFamily(ExpFamily::Gaussian)),
                "poisson" => Ok(LossSpec::ExpFamily(ExpFamily::Poisson)),
                "bernoulli" => Ok(LossSpec::ExpFamily(ExpFamily::BernoulliShifted)),
                "geometric" => Ok(LossSpec::ExpFamily(ExpFamily::Geometric)),
                "density" => Ok(LossSpec::DensityPseudo),
                _ => match s.strip_prefix("phi").and_then(|k| k.parse::<u8>().ok()) {
                    Some(k) => Ok(LossSpec::Surrogate(Surrogate::from_index(k)?)),
                    None => Err(MondrianError::input(format!("unknown loss {s:?}"))),
                },
            },
        }
    }
}

impl TryFrom<String> for LossSpec {
    type Error = MondrianError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LossSpec> for String {
    fn from(spec: LossSpec) -> String {
        spec.to_string()
    }
}

/// Every family with representative parameters; handy for sweeps.
pub fn all_families() -> Vec<LossSpec> {
    let mut out = vec![
        LossSpec::SquaredError,
        LossSpec::Pinball { tau: 0.3 },
        LossSpec::Pinball { tau: 0.9 },
        LossSpec::Huber { delta: 0.7 },
        LossSpec::ExpFamily(ExpFamily::Gaussian),
        LossSpec::ExpFamily(ExpFamily::Poisson),
        LossSpec::ExpFamily(ExpFamily::BernoulliShifted),
        LossSpec::ExpFamily(ExpFamily::Geometric),
        LossSpec::DensityPseudo,
    ];
    out.extend((1..=6).map(|k| LossSpec::Surrogate(Surrogate::from_index(k).unwrap())));
    out
}
