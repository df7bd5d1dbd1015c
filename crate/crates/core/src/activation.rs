//! Componentwise nonlinearities and softmax.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    /// Slope for `z <= 0`, in `(0, 1)`.
    LeakyRelu(f64),
    /// Forward evaluation only; rejected by anything that differentiates.
    Step,
    Identity,
}

impl ActivationKind {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::config(
                "activation",
                format!("leaky_relu slope must lie in (0, 1), got {slope}"),
            ));
        }
        Ok(ActivationKind::LeakyRelu(slope))
    }

    pub fn eval(self, z: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
            ActivationKind::Step => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Identity => z,
        }
    }

    /// Derivative at `z`. ReLU and leaky ReLU take the lower branch at exactly 0.
    pub fn eval_derivative(self, z: f64) -> Result<f64> {
        Ok(match self {
            ActivationKind::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            ActivationKind::Step => return Err(Error::UnsupportedDerivative),
            ActivationKind::Identity => 1.0,
        })
    }

    pub fn is_differentiable(self) -> bool {
        !matches!(self, ActivationKind::Step)
    }

    /// True for the piecewise-linear kinds whose derivative jumps at 0.
    pub fn has_kink(self) -> bool {
        matches!(self, ActivationKind::Relu | ActivationKind::LeakyRelu(_) | ActivationKind::Step)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Sigmoid => write!(f, "sigmoid"),
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            ActivationKind::Step => write!(f, "step"),
            ActivationKind::Identity => write!(f, "identity"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "relu" => Ok(ActivationKind::Relu),
            "step" => Ok(ActivationKind::Step),
            "identity" => Ok(ActivationKind::Identity),
            "leaky_relu" => Ok(ActivationKind::LeakyRelu(DEFAULT_LEAKY_SLOPE)),
            _ => match s.strip_prefix("leaky_relu:") {
                Some(slope) => {
                    let slope: f64 = slope.parse().map_err(|_| {
                        Error::config("activation", format!("bad leaky_relu slope `{slope}`"))
                    })?;
                    ActivationKind::leaky_relu(slope)
                }
                None => Err(Error::config("activation", format!("unknown activation `{s}`"))),
            },
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn apply(kind: ActivationKind, z: &Vector) -> Vector {
    z.map(|x| kind.eval(x))
}

pub fn derivative(kind: ActivationKind, z: &Vector) -> Result<Vector> {
    let d = z.iter().map(|&x| kind.eval_derivative(x)).collect::<Result<Vec<_>>>()?;
    Ok(Vector::new(d))
}

/// `e^{v_s - max v} / Σ_j e^{v_j - max v}`.
pub fn softmax(v: &Vector) -> Vector {
    let m = v.max();
    let e = v.map(|x| (x - m).exp());
    let total = e.sum();
    e.scale(1.0 / total)
}

/// `log Σ_j e^{v_j}`, shifted by the max for stability.
pub fn log_sum_exp(v: &Vector) -> f64 {
    let m = v.max();
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
