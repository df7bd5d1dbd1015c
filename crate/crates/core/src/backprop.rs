//! Back-propagation and its finite-difference oracle.
//!
//! With `δ^[l] = ∂C/∂z^[l]`:
//!
//! * `δ^[L] = σ′(z^[L]) ∘ (a^[L] − y)` (or the softmax form, see [`loss::output_delta`]),
//! * `δ^[l] = σ′(z^[l]) ∘ (W^[l+1])ᵀ δ^[l+1]`,
//! * `∂C/∂b^[l] = δ^[l]` and `∂C/∂W^[l] = δ^[l] (a^[l−1])ᵀ`.
//!
//! Conv and pool layers plug into the same recursion through their
//! Jacobian-transpose actions in place of `(W^[l+1])ᵀ`.
//!
//! [`backward`] uses Hadamard products; [`backward_diagonal_form`] builds the
//! explicit matrices `D^[l] = diag(σ′(z^[l]))` and full layer Jacobians
//! instead, and exists to cross-check the first.

use rayon::prelude::*;

use crate::activation;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::loss::{self, Loss, Target};
use crate::network::{ForwardTrace, Layer, NetworkSpec};

pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Per-layer parameter gradients, shaped like the network's parameters.
/// Pool layers carry empty entries.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub weight_grads: Vec<Matrix>,
    pub bias_grads: Vec<Vector>,
}

impl GradientBundle {
    pub fn zeros_like(net: &NetworkSpec) -> Self {
        let weight_grads = net
            .layers()
            .iter()
            .map(|l| l.weights().map_or_else(|| Matrix::zeros(0, 0), |w| Matrix::zeros(w.rows(), w.cols())))
            .collect();
        let bias_grads = net
            .layers()
            .iter()
            .map(|l| Vector::zeros(l.biases().map_or(0, Vector::len)))
            .collect();
        GradientBundle {
            weight_grads,
            bias_grads,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weight_grads.len()
    }

    fn check_same_shape(&self, other: &GradientBundle) -> Result<()> {
        let same = self.num_layers() == other.num_layers()
            && self.weight_grads.iter().zip(&other.weight_grads).all(|(a, b)| a.rows() == b.rows() && a.cols() == b.cols())
            && self.bias_grads.iter().zip(&other.bias_grads).all(|(a, b)| a.len() == b.len());
        if !same {
            return Err(Error::shape("gradient bundle", "bundle", "bundle of a different network"));
        }
        Ok(())
    }

    /// `self += alpha * other`; only between bundles of the same network shape.
    pub fn add_scaled(&mut self, alpha: f64, other: &GradientBundle) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.weight_grads.iter_mut().zip(&other.weight_grads) {
            a.axpy(alpha, b)?;
        }
        for (a, b) in self.bias_grads.iter_mut().zip(&other.bias_grads) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weight_grads {
            w.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        }
        for b in &mut self.bias_grads {
            b.as_mut_slice().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// All entries, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.weight_grads
            .iter()
            .zip(&self.bias_grads)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.as_slice()).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

/// Which parameter of a layer a gradient entry belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Largest relative discrepancy within one layer and where it occurred.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerDiscrepancy {
    pub layer: usize,
    pub max_rel_error: f64,
    pub worst: Option<(ParamKind, usize)>,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`. The floor keeps entries
/// that are zero up to rounding from dominating the comparison.
pub fn relative_error(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-2;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Per-layer worst relative error between two bundles.
pub fn compare(analytic: &GradientBundle, numeric: &GradientBundle) -> Result<Vec<LayerDiscrepancy>> {
    analytic.check_same_shape(numeric)?;
    let mut out = Vec::with_capacity(analytic.num_layers());
    for l in 0..analytic.num_layers() {
        let mut d = LayerDiscrepancy {
            layer: l,
            max_rel_error: 0.0,
            worst: None,
            analytic: 0.0,
            numeric: 0.0,
        };
        let pairs = [
            (ParamKind::Weight, analytic.weight_grads[l].as_slice(), numeric.weight_grads[l].as_slice()),
            (ParamKind::Bias, analytic.bias_grads[l].as_slice(), numeric.bias_grads[l].as_slice()),
        ];
        for (kind, a, n) in pairs {
            for (i, (&x, &y)) in a.iter().zip(n).enumerate() {
                let e = relative_error(x, y);
                let e = if e.is_nan() { f64::INFINITY } else { e };
                if d.worst.is_none() || e > d.max_rel_error {
                    d = LayerDiscrepancy {
                        layer: l,
                        max_rel_error: e,
                        worst: Some((kind, i)),
                        analytic: x,
                        numeric: y,
                    };
                }
            }
        }
        out.push(d);
    }
    Ok(out)
}

/// Largest relative error over all parameters.
pub fn max_relative_error(a: &GradientBundle, b: &GradientBundle) -> Result<f64> {
    Ok(compare(a, b)?.iter().map(|d| d.max_rel_error).fold(0.0, f64::max))
}

fn check_trace(net: &NetworkSpec, trace: &ForwardTrace) -> Result<()> {
    let n = net.num_layers();
    if trace.weighted_inputs.len() != n || trace.activations.len() != n + 1 {
        return Err(Error::shape(
            "forward trace",
            format!("network with {n} layers"),
            format!("trace with {} weighted inputs", trace.weighted_inputs.len()),
        ));
    }
    for l in 0..n {
        if trace.weighted_inputs[l].len() != net.layer_output_shape(l).len()
            || trace.activations[l].len() != net.layer_input_shape(l).len()
        {
            return Err(Error::shape(
                "forward trace",
                format!("layer {l} of shape {} -> {}", net.layer_input_shape(l), net.layer_output_shape(l)),
                format!(
                    "recorded input {} / weighted input {}",
                    trace.activations[l].len(),
                    trace.weighted_inputs[l].len()
                ),
            ));
        }
    }
    if trace.masks.last().is_some_and(Option::is_some) {
        return Err(Error::config("dropout", "the output layer cannot use dropout"));
    }
    Ok(())
}

fn add_penalty_gradient(net: &NetworkSpec, loss: &Loss, dataset_len: usize, grads: &mut GradientBundle) -> Result<()> {
    if loss.lambda == 0.0 {
        return Ok(());
    }
    let c = 2.0 * loss.lambda / dataset_len as f64;
    for (layer, g) in net.layers().iter().zip(&mut grads.weight_grads) {
        if let Some(w) = layer.weights() {
            g.axpy(c, w)?;
        }
    }
    Ok(())
}

fn pool_trace(trace: &ForwardTrace, l: usize) -> Result<&crate::conv::PoolTrace> {
    trace.pool_traces[l]
        .as_ref()
        .ok_or_else(|| Error::shape("forward trace", format!("pool layer {l}"), "no pooling trace"))
}

/// `∂C/∂z^[l-1]` from `∂C/∂a^[l-1]`: multiply by the dropout mask and `σ′(z^[l-1])`.
fn delta_through_activation(net: &NetworkSpec, trace: &ForwardTrace, l: usize, grad_a: Vector) -> Result<Vector> {
    let d = activation::derivative(net.layers()[l].activation(), &trace.weighted_inputs[l])?;
    let g = match &trace.masks[l] {
        Some(m) => linalg::hadamard(&grad_a, m)?,
        None => grad_a,
    };
    linalg::hadamard(&d, &g)
}

/// Gradient of the per-sample cost (plus `(λ/N) Σ ‖W‖²` when `λ > 0`) for the
/// sample recorded in `trace`.
pub fn backward(
    net: &NetworkSpec,
    trace: &ForwardTrace,
    target: Target<'_>,
    loss: &Loss,
    dataset_len: usize,
) -> Result<GradientBundle> {
    check_trace(net, trace)?;
    let delta = loss::output_delta(loss.kind, trace, net.output_activation(), target)?;
    let mut grads = propagate(net, trace, delta)?;
    add_penalty_gradient(net, loss, dataset_len, &mut grads)?;
    Ok(grads)
}

/// Runs the δ-recursion down from a given `δ^[L]` and assembles the
/// (unpenalized) parameter gradients.
pub(crate) fn propagate(net: &NetworkSpec, trace: &ForwardTrace, mut delta: Vector) -> Result<GradientBundle> {
    let mut grads = GradientBundle::zeros_like(net);
    for l in (0..net.num_layers()).rev() {
        let a_prev = &trace.activations[l];
        let in_shape = net.layer_input_shape(l);
        let grad_in = match &net.layers()[l] {
            Layer::Dense(d) => {
                grads.weight_grads[l] = linalg::outer(&delta, a_prev);
                grads.bias_grads[l] = delta.clone();
                (l > 0).then(|| d.weights.matvec_transposed(&delta)).transpose()?
            }
            Layer::Conv(c) => {
                let (gi, gw, gb) = c.backward(in_shape, a_prev.as_slice(), delta.as_slice())?;
                grads.weight_grads[l] = gw;
                grads.bias_grads[l] = gb;
                Some(Vector::new(gi))
            }
            Layer::Pool(p) => Some(Vector::new(p.backward(in_shape, pool_trace(trace, l)?, delta.as_slice())?)),
        };
        if l > 0 {
            delta = delta_through_activation(net, trace, l - 1, grad_in.expect("computed for l > 0"))?;
        }
    }
    Ok(grads)
}

/// Same contract as [`backward`], computed with explicit matrices:
/// `δ^[l] = D^[l] J^[l+1]ᵀ δ^[l+1]` where `J` is each layer's full Jacobian
/// with respect to its input and `D^[l] = diag(σ′(z^[l]) ∘ mask)`.
pub fn backward_diagonal_form(
    net: &NetworkSpec,
    trace: &ForwardTrace,
    target: Target<'_>,
    loss: &Loss,
    dataset_len: usize,
) -> Result<GradientBundle> {
    check_trace(net, trace)?;
    let mut grads = GradientBundle::zeros_like(net);
    let output_d = activation::derivative(net.output_activation(), trace.output_weighted_input());
    let mut delta = match loss.kind {
        loss::LossKind::Quadratic => {
            let y = match target {
                Target::Values(v) => v.clone(),
                Target::Label(l) => Vector::basis(trace.output().len(), l)?,
            };
            linalg::matvec(&Matrix::diag(&output_d?), &trace.output().sub(&y)?)?
        }
        loss::LossKind::SoftmaxLogLoss => loss::output_delta(loss.kind, trace, net.output_activation(), target)?,
    };
    for l in (0..net.num_layers()).rev() {
        let a_prev = &trace.activations[l];
        let in_shape = net.layer_input_shape(l);
        let jacobian = match &net.layers()[l] {
            Layer::Dense(d) => {
                grads.weight_grads[l] = linalg::outer(&delta, a_prev);
                grads.bias_grads[l] = delta.clone();
                d.weights.clone()
            }
            Layer::Conv(c) => {
                // filter gradient = patchesᵀ Δ, bias gradient = Δᵀ 1
                let out_shape = net.layer_output_shape(l);
                let positions = out_shape.height * out_shape.width;
                let d = Matrix::new(positions, out_shape.channels, delta.as_slice().to_vec())?;
                let patches = c.im2col(in_shape, a_prev.as_slice())?;
                grads.weight_grads[l] = patches.transpose().matmul(&d)?;
                grads.bias_grads[l] = d.matvec_transposed(&Vector::ones(positions))?;
                c.as_matrix(in_shape)?
            }
            Layer::Pool(p) => p.jacobian(in_shape, pool_trace(trace, l)?)?,
        };
        if l > 0 {
            let mut diag = activation::derivative(net.layers()[l - 1].activation(), &trace.weighted_inputs[l - 1])?;
            if let Some(m) = &trace.masks[l - 1] {
                diag = linalg::hadamard(&diag, m)?;
            }
            let back = linalg::matvec(&jacobian.transpose(), &delta)?;
            delta = linalg::matvec(&Matrix::diag(&diag), &back)?;
        }
    }
    add_penalty_gradient(net, loss, dataset_len, &mut grads)?;
    Ok(grads)
}

/// Per-sample cost including the weight penalty, via a fresh forward pass.
pub fn regularized_sample_cost(net: &NetworkSpec, x: &Vector, target: Target<'_>, loss: &Loss, dataset_len: usize) -> Result<f64> {
    let out = net.output(x)?;
    Ok(loss::sample_cost(loss.kind, &out, target)? + loss::penalty(loss, net, dataset_len))
}

/// Central-difference gradient, one fresh forward pass per perturbation.
pub fn fd_gradient(
    net: &NetworkSpec,
    x: &Vector,
    target: Target<'_>,
    loss: &Loss,
    dataset_len: usize,
    h: f64,
) -> Result<GradientBundle> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grads = GradientBundle::zeros_like(net);
    // (layer, is_bias, index) for every parameter, in bundle order
    let coords: Vec<(usize, ParamKind, usize)> = net
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(l, layer)| {
            let nw = layer.weights().map_or(0, Matrix::len);
            let nb = layer.biases().map_or(0, Vector::len);
            (0..nw).map(move |i| (l, ParamKind::Weight, i)).chain((0..nb).map(move |i| (l, ParamKind::Bias, i)))
        })
        .collect();
    let partials: Vec<f64> = coords
        .par_iter()
        .map(|&(l, kind, i)| {
            let mut probe = net.clone();
            let eval = |probe: &mut NetworkSpec, value: f64| -> Result<f64> {
                let (w, b) = probe.params_mut(l);
                match kind {
                    ParamKind::Weight => w[i] = value,
                    ParamKind::Bias => b[i] = value,
                }
                regularized_sample_cost(probe, x, target, loss, dataset_len)
            };
            let p0 = {
                let (w, b) = probe.params_mut(l);
                match kind {
                    ParamKind::Weight => w[i],
                    ParamKind::Bias => b[i],
                }
            };
            let plus = eval(&mut probe, p0 + h)?;
            let minus = eval(&mut probe, p0 - h)?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    for (&(l, kind, i), g) in coords.iter().zip(partials) {
        match kind {
            ParamKind::Weight => grads.weight_grads[l].as_mut_slice()[i] = g,
            ParamKind::Bias => grads.bias_grads[l][i] = g,
        }
    }
    Ok(grads)
}
