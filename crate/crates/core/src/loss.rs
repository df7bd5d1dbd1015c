//! Cost functions and the output-layer delta.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::activation::{self, ActivationKind};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::network::{ForwardTrace, NetworkSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `½ ‖y − a^[L]‖₂²` per sample.
    Quadratic,
    /// `−log softmax(a^[L])_label`; the network's final activation must be the identity.
    SoftmaxLogLoss,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Quadratic => "quadratic",
            LossKind::SoftmaxLogLoss => "softmax_log_loss",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(LossKind::Quadratic),
            "softmax_log_loss" => Ok(LossKind::SoftmaxLogLoss),
            _ => Err(Error::config("loss", format!("unknown loss `{s}`"))),
        }
    }
}

/// A loss together with its L2 weight penalty. The penalty term of the
/// dataset cost is `(λ/N) Σ_l ‖W^[l]‖_F²`; biases are not penalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss {
    pub kind: LossKind,
    pub lambda: f64,
}

impl Loss {
    pub fn new(kind: LossKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be a nonnegative real, got {lambda}")));
        }
        Ok(Loss { kind, lambda })
    }

    pub const fn quadratic() -> Self {
        Loss {
            kind: LossKind::Quadratic,
            lambda: 0.0,
        }
    }

    pub const fn softmax_log_loss() -> Self {
        Loss {
            kind: LossKind::SoftmaxLogLoss,
            lambda: 0.0,
        }
    }

    /// Rejects loss/network pairings that would apply a nonlinearity twice
    /// or cannot be differentiated.
    pub fn check_network(&self, net: &NetworkSpec) -> Result<()> {
        let act = net.output_activation();
        if self.kind == LossKind::SoftmaxLogLoss && act != ActivationKind::Identity {
            return Err(Error::config(
                "loss",
                format!("softmax_log_loss needs an identity output layer, found {act}"),
            ));
        }
        Ok(())
    }
}

/// What a sample's output is compared against.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Values(&'a Vector),
    Label(usize),
}

impl<'a> From<&'a Vector> for Target<'a> {
    fn from(v: &'a Vector) -> Self {
        Target::Values(v)
    }
}

impl Target<'_> {
    /// Dense target vector of length `k`.
    fn dense(&self, k: usize) -> Result<Vector> {
        match *self {
            Target::Values(y) => {
                if y.len() != k {
                    return Err(Error::shape(
                        "target",
                        format!("output of length {k}"),
                        format!("target of length {}", y.len()),
                    ));
                }
                Ok(y.clone())
            }
            Target::Label(l) => Vector::basis(k, l).map_err(|_| Error::Index {
                what: "class label",
                index: l,
                len: k,
            }),
        }
    }
}

/// Cost of one sample, without any weight penalty.
pub fn sample_cost(kind: LossKind, output: &Vector, target: Target<'_>) -> Result<f64> {
    match kind {
        LossKind::Quadratic => {
            let y = target.dense(output.len())?;
            Ok(0.5 * linalg::sq_norm(&y.sub(output)?))
        }
        LossKind::SoftmaxLogLoss => {
            let lse = activation::log_sum_exp(output);
            match target {
                Target::Label(l) => {
                    if l >= output.len() {
                        return Err(Error::Index {
                            what: "class label",
                            index: l,
                            len: output.len(),
                        });
                    }
                    Ok(lse - output[l])
                }
                // general (soft) targets: −Σ_j y_j log softmax_j
                Target::Values(_) => {
                    let y = target.dense(output.len())?;
                    Ok(y.iter().zip(output.iter()).map(|(yj, vj)| yj * (lse - vj)).sum())
                }
            }
        }
    }
}

/// Mean sample cost over `data` plus `(λ/N) Σ ‖W‖_F²`.
pub fn dataset_cost(loss: &Loss, net: &NetworkSpec, data: &LabeledDataset) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::Domain("cost of an empty dataset is undefined".into()));
    }
    let per_sample = |i: usize| -> Result<f64> {
        let out = net.output(data.input(i))?;
        sample_cost(loss.kind, &out, data.target(i))
    };
    let costs: Vec<f64> = if n >= 64 {
        (0..n).into_par_iter().map(per_sample).collect::<Result<_>>()?
    } else {
        (0..n).map(per_sample).collect::<Result<_>>()?
    };
    let mean = costs.iter().sum::<f64>() / n as f64;
    Ok(mean + penalty(loss, net, n))
}

/// `(λ/N) Σ_l ‖W^[l]‖_F²`.
pub fn penalty(loss: &Loss, net: &NetworkSpec, dataset_len: usize) -> f64 {
    if loss.lambda == 0.0 {
        0.0
    } else {
        loss.lambda / dataset_len as f64 * net.weight_sq_norm()
    }
}

/// `Σ_i ‖y(x_i) − F(x_i)‖₂²`: the quadratic cost without the ½ and 1/N
/// factors, i.e. `2N · Cost`. Rescaling does not move the minimizer.
pub fn sum_squared_residuals(net: &NetworkSpec, data: &LabeledDataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        total += 2.0 * sample_cost(LossKind::Quadratic, &net.output(data.input(i))?, data.target(i))?;
    }
    Ok(total)
}

/// `δ^[L] = ∂C/∂z^[L]` for one sample.
pub fn output_delta(kind: LossKind, trace: &ForwardTrace, act: ActivationKind, target: Target<'_>) -> Result<Vector> {
    let a = trace.output();
    match kind {
        LossKind::Quadratic => {
            let y = target.dense(a.len())?;
            let d = activation::derivative(act, trace.output_weighted_input())?;
            linalg::hadamard(&d, &a.sub(&y)?)
        }
        LossKind::SoftmaxLogLoss => {
            if act != ActivationKind::Identity {
                return Err(Error::config(
                    "loss",
                    format!("softmax_log_loss needs an identity output layer, found {act}"),
                ));
            }
            let y = target.dense(a.len())?;
            let p = activation::softmax(a);
            // d/dv [Σ y_j (lse − v_j)] = softmax · Σ y − y
            p.scale(y.sum()).sub(&y)
        }
    }
}
