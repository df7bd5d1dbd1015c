//! Convolution and pooling.
//!
//! Two conventions coexist here. [`conv1d`] implements the signal-processing
//! convolution sum `y_k = Σ_n x_n g_{k-n}` where the filter is listed as
//! `filter[j] = g_{-j}`; written out, each output is the dot product of `filter`
//! with an aligned input window, so [`conv1d_as_matrix`] rows carry the filter
//! left to right. [`ConvLayer`] is a cross-correlation (no flip), the usual
//! layer convention. The two coincide once the filter is indexed as above.
//!
//! Tensors are stored in `(row, col, channel)` order.

use crate::activation::{self, ActivationKind};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape3 {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape3 {
            height,
            width,
            channels,
        }
    }

    /// A plain vector of length `n`, viewed as `1 × 1 × n`.
    pub const fn flat(n: usize) -> Self {
        Shape3::new(1, 1, n)
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, r: usize, c: usize, ch: usize) -> usize {
        (r * self.width + c) * self.channels + ch
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    shape: Shape3,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape("tensor construction", shape, format!("{} entries", data.len())));
        }
        Ok(Tensor3 { shape, data })
    }

    pub fn zeros(shape: Shape3) -> Self {
        Tensor3 {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn get(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[self.shape.index(r, c, ch)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vector(self) -> Vector {
        Vector::new(self.data)
    }
}

/// Output length of a strided window sweep, or `None` if no window fits.
pub fn sweep_len(input: usize, pad_total: usize, window: usize, stride: usize) -> Option<usize> {
    let padded = input + pad_total;
    if window == 0 || stride == 0 || window > padded {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// Zero padding for the 1-D case, which may be asymmetric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Pad1d {
    pub before: usize,
    pub after: usize,
}

impl Pad1d {
    pub const fn symmetric(p: usize) -> Self {
        Pad1d { before: p, after: p }
    }

    pub const fn trailing(p: usize) -> Self {
        Pad1d { before: 0, after: p }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        let mut out = vec![0.0; self.before];
        out.extend_from_slice(x.as_slice());
        out.resize(out.len() + self.after, 0.0);
        Vector::new(out)
    }
}

fn conv1d_len(input_len: usize, filter_len: usize, stride: usize, pad: Pad1d) -> Result<usize> {
    sweep_len(input_len, pad.before + pad.after, filter_len, stride).ok_or_else(|| {
        Error::shape(
            "conv1d",
            format!("padded input of length {}", input_len + pad.before + pad.after),
            format!("filter of length {filter_len} with stride {stride}"),
        )
    })
}

/// 1-D convolution with stride and zero padding.
pub fn conv1d(x: &Vector, filter: &Vector, stride: usize, pad: Pad1d) -> Result<Vector> {
    let n_out = conv1d_len(x.len(), filter.len(), stride, pad)?;
    let padded = pad.apply(x);
    let out = (0..n_out)
        .map(|k| {
            let start = k * stride;
            filter
                .iter()
                .enumerate()
                .map(|(j, &f)| f * padded[start + j])
                .sum()
        })
        .collect();
    Ok(Vector::new(out))
}

/// The banded (Toeplitz-structured) matrix of [`conv1d`], acting on the
/// *padded* input: `M · pad.apply(x) == conv1d(x, ..)`.
pub fn conv1d_as_matrix(input_len: usize, filter: &Vector, stride: usize, pad: Pad1d) -> Result<Matrix> {
    let n_out = conv1d_len(input_len, filter.len(), stride, pad)?;
    let cols = input_len + pad.before + pad.after;
    let mut m = Matrix::zeros(n_out, cols);
    for k in 0..n_out {
        for (j, &f) in filter.iter().enumerate() {
            m.set(k, k * stride + j, f);
        }
    }
    Ok(m)
}

/// Multi-channel 2-D convolutional layer.
///
/// `filters` is a `(fh·fw·in_channels) × out_channels` matrix whose row-major
/// storage is the 4-way array `filter(i, j, ch, o)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub fh: usize,
    pub fw: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad: usize,
    pub filters: Matrix,
    pub biases: Vector,
    pub activation: ActivationKind,
}

impl ConvLayer {
    pub fn zeros(
        (fh, fw): (usize, usize),
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
        activation: ActivationKind,
    ) -> Result<Self> {
        if fh == 0 || fw == 0 || in_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(Error::config(
                "conv",
                "filter sizes, channel counts and stride must be positive",
            ));
        }
        Ok(ConvLayer {
            fh,
            fw,
            in_channels,
            out_channels,
            stride,
            pad,
            filters: Matrix::zeros(fh * fw * in_channels, out_channels),
            biases: Vector::zeros(out_channels),
            activation,
        })
    }

    #[inline]
    fn filter_row(&self, i: usize, j: usize, ch: usize) -> usize {
        (i * self.fw + j) * self.in_channels + ch
    }

    pub fn filter(&self, i: usize, j: usize, ch: usize, o: usize) -> f64 {
        self.filters.get(self.filter_row(i, j, ch), o)
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        if input.channels != self.in_channels {
            return Err(Error::shape(
                "conv input channels",
                format!("layer expecting {} channels", self.in_channels),
                format!("input {input}"),
            ));
        }
        let h = sweep_len(input.height, 2 * self.pad, self.fh, self.stride);
        let w = sweep_len(input.width, 2 * self.pad, self.fw, self.stride);
        match (h, w) {
            (Some(h), Some(w)) => Ok(Shape3::new(h, w, self.out_channels)),
            _ => Err(Error::shape(
                "conv output size",
                format!("input {input} with pad {}", self.pad),
                format!("{}x{} filter with stride {}", self.fh, self.fw, self.stride),
            )),
        }
    }

    /// Input coordinate read by output `o_r` at filter offset `i`, if not padding.
    #[inline]
    fn source(&self, out_pos: usize, offset: usize, extent: usize) -> Option<usize> {
        let p = (out_pos * self.stride + offset).checked_sub(self.pad)?;
        (p < extent).then_some(p)
    }

    /// Weighted input `z` (before the activation).
    pub fn linear_forward(&self, in_shape: Shape3, input: &[f64]) -> Result<(Shape3, Vec<f64>)> {
        let out_shape = self.output_shape(in_shape)?;
        check_len("conv forward", in_shape, input)?;
        let oc = self.out_channels;
        let mut out = vec![0.0; out_shape.len()];
        for r in 0..out_shape.height {
            for c in 0..out_shape.width {
                let dst = &mut out[out_shape.index(r, c, 0)..out_shape.index(r, c, 0) + oc];
                dst.copy_from_slice(self.biases.as_slice());
                for i in 0..self.fh {
                    let Some(y) = self.source(r, i, in_shape.height) else { continue };
                    for j in 0..self.fw {
                        let Some(x) = self.source(c, j, in_shape.width) else { continue };
                        let base = in_shape.index(y, x, 0);
                        for ch in 0..self.in_channels {
                            let v = input[base + ch];
                            if v == 0.0 {
                                continue;
                            }
                            let w = self.filters.row(self.filter_row(i, j, ch));
                            for (d, &wf) in dst.iter_mut().zip(w) {
                                *d += wf * v;
                            }
                        }
                    }
                }
            }
        }
        Ok((out_shape, out))
    }

    /// Jacobian-transpose action. Given `∂C/∂z` for this layer's output, returns
    /// `∂C/∂input` together with the filter and bias gradients.
    pub fn backward(
        &self,
        in_shape: Shape3,
        input: &[f64],
        delta: &[f64],
    ) -> Result<(Vec<f64>, Matrix, Vector)> {
        let out_shape = self.output_shape(in_shape)?;
        check_len("conv backward input", in_shape, input)?;
        check_len("conv backward delta", out_shape, delta)?;
        let oc = self.out_channels;
        let mut grad_in = vec![0.0; in_shape.len()];
        let mut grad_w = Matrix::zeros(self.filters.rows(), oc);
        let mut grad_b = Vector::zeros(oc);
        for r in 0..out_shape.height {
            for c in 0..out_shape.width {
                let d = &delta[out_shape.index(r, c, 0)..out_shape.index(r, c, 0) + oc];
                for (gb, &dv) in grad_b.as_mut_slice().iter_mut().zip(d) {
                    *gb += dv;
                }
                for i in 0..self.fh {
                    let Some(y) = self.source(r, i, in_shape.height) else { continue };
                    for j in 0..self.fw {
                        let Some(x) = self.source(c, j, in_shape.width) else { continue };
                        let base = in_shape.index(y, x, 0);
                        for ch in 0..self.in_channels {
                            let row = self.filter_row(i, j, ch);
                            let v = input[base + ch];
                            let w = self.filters.row(row);
                            let mut acc = 0.0;
                            for (&wf, &dv) in w.iter().zip(d) {
                                acc += wf * dv;
                            }
                            grad_in[base + ch] += acc;
                            let gw = &mut grad_w.as_mut_slice()[row * oc..(row + 1) * oc];
                            for (g, &dv) in gw.iter_mut().zip(d) {
                                *g += dv * v;
                            }
                        }
                    }
                }
            }
        }
        Ok((grad_in, grad_w, grad_b))
    }

    /// The linear part of the layer as an explicit `out.len() × in.len()`
    /// matrix on the unpadded, flattened input (padding taps are dropped).
    pub fn as_matrix(&self, in_shape: Shape3) -> Result<Matrix> {
        let out_shape = self.output_shape(in_shape)?;
        let mut m = Matrix::zeros(out_shape.len(), in_shape.len());
        for r in 0..out_shape.height {
            for c in 0..out_shape.width {
                for o in 0..self.out_channels {
                    let row = out_shape.index(r, c, o);
                    for i in 0..self.fh {
                        let Some(y) = self.source(r, i, in_shape.height) else { continue };
                        for j in 0..self.fw {
                            let Some(x) = self.source(c, j, in_shape.width) else { continue };
                            for ch in 0..self.in_channels {
                                m.set(row, in_shape.index(y, x, ch), self.filter(i, j, ch, o));
                            }
                        }
                    }
                }
            }
        }
        Ok(m)
    }

    /// Patch matrix: one row per output position, one column per filter row
    /// `(i, j, ch)`, padding read as zero. `z = patches · filters + bias`.
    pub fn im2col(&self, in_shape: Shape3, input: &[f64]) -> Result<Matrix> {
        let out_shape = self.output_shape(in_shape)?;
        check_len("im2col", in_shape, input)?;
        let positions = out_shape.height * out_shape.width;
        let mut m = Matrix::zeros(positions, self.filters.rows());
        for r in 0..out_shape.height {
            for c in 0..out_shape.width {
                let p = r * out_shape.width + c;
                for i in 0..self.fh {
                    let Some(y) = self.source(r, i, in_shape.height) else { continue };
                    for j in 0..self.fw {
                        let Some(x) = self.source(c, j, in_shape.width) else { continue };
                        for ch in 0..self.in_channels {
                            m.set(p, self.filter_row(i, j, ch), input[in_shape.index(y, x, ch)]);
                        }
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Convolution followed by the layer's activation.
pub fn conv2d_forward(layer: &ConvLayer, input: &Tensor3) -> Result<Tensor3> {
    let (shape, z) = layer.linear_forward(input.shape, &input.data)?;
    let a = activation::apply(layer.activation, &Vector::new(z));
    Tensor3::new(shape, a.into_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Average,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolMode::Max => "max",
            PoolMode::Average => "avg",
        }
    }
}

/// Square-window pooling. The optional activation runs after the reduction,
/// which is how a block can pool before activating.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolLayer {
    pub mode: PoolMode,
    pub window: usize,
    pub stride: usize,
    pub activation: ActivationKind,
}

/// For max pooling, the flat input index that won each output; empty for average.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PoolTrace {
    pub argmax: Vec<usize>,
}

impl PoolLayer {
    pub fn new(mode: PoolMode, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::config("pool", "window and stride must be at least 1"));
        }
        Ok(PoolLayer {
            mode,
            window,
            stride,
            activation: ActivationKind::Identity,
        })
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        let h = sweep_len(input.height, 0, self.window, self.stride);
        let w = sweep_len(input.width, 0, self.window, self.stride);
        match (h, w) {
            (Some(h), Some(w)) => Ok(Shape3::new(h, w, input.channels)),
            _ => Err(Error::shape(
                "pool output size",
                format!("input {input}"),
                format!("window {} with stride {}", self.window, self.stride),
            )),
        }
    }

    /// Pooled values (before the activation) and the routing trace.
    pub fn linear_forward(&self, in_shape: Shape3, input: &[f64]) -> Result<(Shape3, Vec<f64>, PoolTrace)> {
        let out_shape = self.output_shape(in_shape)?;
        check_len("pool forward", in_shape, input)?;
        let mut out = vec![0.0; out_shape.len()];
        let mut trace = PoolTrace::default();
        if self.mode == PoolMode::Max {
            trace.argmax = vec![0; out_shape.len()];
        }
        let area = (self.window * self.window) as f64;
        for r in 0..out_shape.height {
            for c in 0..out_shape.width {
                for ch in 0..in_shape.channels {
                    let o = out_shape.index(r, c, ch);
                    let mut best = (usize::MAX, f64::NEG_INFINITY);
                    let mut sum = 0.0;
                    for i in 0..self.window {
                        for j in 0..self.window {
                            let idx = in_shape.index(r * self.stride + i, c * self.stride + j, ch);
                            let v = input[idx];
                            sum += v;
                            // strict comparison keeps the first row-major maximum
                            if best.0 == usize::MAX || v > best.1 {
                                best = (idx, v);
                            }
                        }
                    }
                    match self.mode {
                        PoolMode::Max => {
                            out[o] = best.1;
                            trace.argmax[o] = best.0;
                        }
                        PoolMode::Average => out[o] = sum / area,
                    }
                }
            }
        }
        Ok((out_shape, out, trace))
    }

    /// Routes `∂C/∂(pooled)` back to the input.
    pub fn backward(&self, in_shape: Shape3, trace: &PoolTrace, delta: &[f64]) -> Result<Vec<f64>> {
        let out_shape = self.output_shape(in_shape)?;
        check_len("pool backward delta", out_shape, delta)?;
        let mut grad = vec![0.0; in_shape.len()];
        match self.mode {
            PoolMode::Max => {
                if trace.argmax.len() != delta.len() {
                    return Err(Error::shape(
                        "max-pool trace",
                        format!("{} recorded positions", trace.argmax.len()),
                        format!("{} deltas", delta.len()),
                    ));
                }
                for (&idx, &d) in trace.argmax.iter().zip(delta) {
                    grad[idx] += d;
                }
            }
            PoolMode::Average => {
                let area = (self.window * self.window) as f64;
                for r in 0..out_shape.height {
                    for c in 0..out_shape.width {
                        for ch in 0..in_shape.channels {
                            let d = delta[out_shape.index(r, c, ch)] / area;
                            for i in 0..self.window {
                                for j in 0..self.window {
                                    grad[in_shape.index(r * self.stride + i, c * self.stride + j, ch)] += d;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Jacobian of the reduction: fixed for average pooling, and for max
    /// pooling the selection matrix of the recorded trace.
    pub fn jacobian(&self, in_shape: Shape3, trace: &PoolTrace) -> Result<Matrix> {
        let out_shape = self.output_shape(in_shape)?;
        let mut m = Matrix::zeros(out_shape.len(), in_shape.len());
        match self.mode {
            PoolMode::Max => {
                for (o, &idx) in trace.argmax.iter().enumerate() {
                    m.set(o, idx, 1.0);
                }
            }
            PoolMode::Average => {
                let w = 1.0 / (self.window * self.window) as f64;
                for r in 0..out_shape.height {
                    for c in 0..out_shape.width {
                        for ch in 0..in_shape.channels {
                            for i in 0..self.window {
                                for j in 0..self.window {
                                    let src = in_shape.index(r * self.stride + i, c * self.stride + j, ch);
                                    m.set(out_shape.index(r, c, ch), src, w);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Pooling followed by the layer's activation.
pub fn pool_forward(layer: &PoolLayer, input: &Tensor3) -> Result<(Tensor3, PoolTrace)> {
    let (shape, pooled, trace) = layer.linear_forward(input.shape, &input.data)?;
    let a = activation::apply(layer.activation, &Vector::new(pooled));
    Ok((Tensor3::new(shape, a.into_vec())?, trace))
}

/// Input delta for a pool layer whose activation has already been folded into
/// `upstream_delta` (i.e. `upstream_delta = ∂C/∂pooled`).
pub fn pool_backward(layer: &PoolLayer, in_shape: Shape3, trace: &PoolTrace, upstream_delta: &Tensor3) -> Result<Tensor3> {
    let g = layer.backward(in_shape, trace, &upstream_delta.data)?;
    Tensor3::new(in_shape, g)
}

/// Input delta and parameter gradients of a conv layer given `∂C/∂z`.
pub fn conv_backward(layer: &ConvLayer, input: &Tensor3, upstream_delta: &Tensor3) -> Result<(Tensor3, Matrix, Vector)> {
    let (g, w, b) = layer.backward(input.shape, &input.data, &upstream_delta.data)?;
    Ok((Tensor3::new(input.shape, g)?, w, b))
}

fn check_len(op: &'static str, shape: Shape3, data: &[f64]) -> Result<()> {
    if shape.len() != data.len() {
        return Err(Error::shape(op, format!("shape {shape}"), format!("{} values", data.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from(x)
    }

    fn random_conv(rng: &mut rng::Rng, f: (usize, usize), cin: usize, cout: usize, stride: usize, pad: usize) -> ConvLayer {
        let mut l = ConvLayer::zeros(f, cin, cout, stride, pad, ActivationKind::Identity).unwrap();
        for w in l.filters.as_mut_slice() {
            *w = rng.random_range(-1.0..1.0);
        }
        for b in l.biases.as_mut_slice() {
            *b = rng.random_range(-1.0..1.0);
        }
        l
    }

    fn random_tensor(rng: &mut rng::Rng, shape: Shape3) -> Tensor3 {
        Tensor3::new(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv1d_differences_of_neighbours() {
        let y = conv1d(&v(&[1., 2., 3., 4., 5., 6.]), &v(&[1., -1.]), 1, Pad1d::default()).unwrap();
        assert_eq!(y, v(&[-1.; 5]));
    }

    #[test]
    fn conv1d_identity_filter() {
        let x = v(&[0.3, -2.0, 7.5]);
        assert_eq!(conv1d(&x, &v(&[1.]), 1, Pad1d::default()).unwrap(), x);
    }

    #[test]
    fn conv1d_filter_longer_than_input() {
        assert!(conv1d(&v(&[1., 2.]), &v(&[1., 1., 1.]), 1, Pad1d::default()).is_err());
        assert!(conv1d(&v(&[1., 2.]), &v(&[1., 1., 1.]), 1, Pad1d::trailing(1)).is_ok());
    }

    #[test]
    fn conv1d_matches_convolution_sum() {
        // y_k = Σ_n x_n g_{k-n} with g_0 = 1, g_{-1} = -1
        let x = [2.0, 7.0, 1.0, 8.0, 2.0, 8.0];
        let g = |m: i64| match m {
            0 => 1.0,
            -1 => -1.0,
            _ => 0.0,
        };
        let y = conv1d(&v(&x), &v(&[1., -1.]), 1, Pad1d::default()).unwrap();
        for k in 0..y.len() {
            let s: f64 = (0..x.len()).map(|n| x[n] * g(k as i64 - n as i64)).sum();
            assert_eq!(y[k], s);
        }
    }

    #[test]
    fn conv1d_matrix_matches_direct_on_random_instances() {
        let mut r = rng::from_u64(11);
        for _ in 0..200 {
            let flen = r.random_range(1..5);
            let n = r.random_range(flen..12);
            let stride = r.random_range(1..4);
            let pad = Pad1d {
                before: r.random_range(0..3),
                after: r.random_range(0..3),
            };
            let x = Vector::new((0..n).map(|_| r.random_range(-5.0..5.0)).collect());
            let f = Vector::new((0..flen).map(|_| r.random_range(-5.0..5.0)).collect());
            let m = conv1d_as_matrix(n, &f, stride, pad).unwrap();
            let direct = conv1d(&x, &f, stride, pad).unwrap();
            let lowered = m.matvec(&pad.apply(&x)).unwrap();
            for k in 0..direct.len() {
                assert!((direct[k] - lowered[k]).abs() <= 1e-12 * direct[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn scalar_conv() {
        let mut l = ConvLayer::zeros((1, 1), 1, 1, 1, 0, ActivationKind::Identity).unwrap();
        l.filters.set(0, 0, 3.0);
        let out = conv2d_forward(&l, &Tensor3::new(Shape3::new(1, 1, 1), vec![2.5]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[7.5]);
    }

    #[test]
    fn scalar_conv_backward_is_dense_rule() {
        let mut l = ConvLayer::zeros((1, 1), 1, 1, 1, 0, ActivationKind::Identity).unwrap();
        l.filters.set(0, 0, 3.0);
        let (gi, gw, gb) = l.backward(Shape3::flat(1), &[2.5], &[0.4]).unwrap();
        assert_eq!(gi, vec![3.0 * 0.4]);
        assert_eq!(gw.as_slice(), &[0.4 * 2.5]);
        assert_eq!(gb.as_slice(), &[0.4]);
    }

    #[test]
    fn conv_block_one_shape() {
        let l = ConvLayer::zeros((5, 5), 3, 32, 1, 2, ActivationKind::Relu).unwrap();
        assert_eq!(l.output_shape(Shape3::new(32, 32, 3)).unwrap(), Shape3::new(32, 32, 32));
        assert!(l.output_shape(Shape3::new(32, 32, 4)).is_err());
    }

    #[test]
    fn conv_forward_matches_lowering() {
        let mut r = rng::from_u64(5);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let l = random_conv(&mut r, (3, 2), 2, 3, stride, pad);
            let input = random_tensor(&mut r, Shape3::new(6, 6, 2));
            let (_, z) = l.linear_forward(input.shape(), input.as_slice()).unwrap();
            let m = l.as_matrix(input.shape()).unwrap();
            let lowered = m.matvec(&Vector::from(input.as_slice())).unwrap();
            let out_shape = l.output_shape(input.shape()).unwrap();
            for idx in 0..z.len() {
                let o = idx % out_shape.channels;
                assert!((z[idx] - (lowered[idx] + l.biases[o])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_lowering_transpose() {
        let mut r = rng::from_u64(6);
        let l = random_conv(&mut r, (3, 3), 2, 2, 2, 1);
        let input = random_tensor(&mut r, Shape3::new(6, 5, 2));
        let out_shape = l.output_shape(input.shape()).unwrap();
        let delta = random_tensor(&mut r, out_shape);
        let (gi, gw, gb) = l.backward(input.shape(), input.as_slice(), delta.as_slice()).unwrap();
        let expected = l.as_matrix(input.shape()).unwrap().matvec_transposed(&Vector::from(delta.as_slice())).unwrap();
        for k in 0..gi.len() {
            assert!((gi[k] - expected[k]).abs() < 1e-12);
        }
        // filter gradient via the patch matrix: patchesᵀ Δ
        let patches = l.im2col(input.shape(), input.as_slice()).unwrap();
        let d = Matrix::new(out_shape.height * out_shape.width, out_shape.channels, delta.as_slice().to_vec()).unwrap();
        let gw2 = patches.transpose().matmul(&d).unwrap();
        for (a, b) in gw.as_slice().iter().zip(gw2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for o in 0..2 {
            let s: f64 = (0..out_shape.height * out_shape.width).map(|p| d.get(p, o)).sum();
            assert!((gb[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut r = rng::from_u64(7);
        let l = random_conv(&mut r, (2, 2), 1, 2, 1, 0);
        let input = random_tensor(&mut r, Shape3::new(4, 4, 1));
        let out_shape = l.output_shape(input.shape()).unwrap();
        let (gi, gw, gb) = l.backward(input.shape(), input.as_slice(), &vec![0.0; out_shape.len()]).unwrap();
        assert!(gi.iter().chain(gw.as_slice()).chain(gb.as_slice()).all(|&x| x == 0.0));
        let p = PoolLayer::new(PoolMode::Max, 2, 2).unwrap();
        let (_, _, tr) = p.linear_forward(input.shape(), input.as_slice()).unwrap();
        assert!(p.backward(input.shape(), &tr, &[0.0; 4]).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pool_examples() {
        let input = Tensor3::new(Shape3::new(2, 2, 1), vec![1., 2., 3., 4.]).unwrap();
        let (max, tr) = pool_forward(&PoolLayer::new(PoolMode::Max, 2, 2).unwrap(), &input).unwrap();
        assert_eq!(max.as_slice(), &[4.0]);
        assert_eq!(tr.argmax, vec![3]);
        let (avg, _) = pool_forward(&PoolLayer::new(PoolMode::Average, 2, 2).unwrap(), &input).unwrap();
        assert_eq!(avg.as_slice(), &[2.5]);
        let p = PoolLayer::new(PoolMode::Max, 2, 2).unwrap();
        assert_eq!(p.output_shape(Shape3::new(32, 32, 32)).unwrap(), Shape3::new(16, 16, 32));
    }

    #[test]
    fn max_pool_ties_take_first_position() {
        let input = Tensor3::new(Shape3::new(2, 2, 1), vec![5., 5., 5., 5.]).unwrap();
        let (_, tr) = pool_forward(&PoolLayer::new(PoolMode::Max, 2, 2).unwrap(), &input).unwrap();
        assert_eq!(tr.argmax, vec![0]);
    }

    #[test]
    fn max_pool_backward_conserves_delta_mass() {
        let mut r = rng::from_u64(8);
        let p = PoolLayer::new(PoolMode::Max, 2, 2).unwrap();
        let input = random_tensor(&mut r, Shape3::new(6, 6, 3));
        let (out_shape, _, tr) = p.linear_forward(input.shape(), input.as_slice()).unwrap();
        let delta = random_tensor(&mut r, out_shape);
        let g = pool_backward(&p, input.shape(), &tr, &delta).unwrap();
        let total: f64 = delta.as_slice().iter().sum();
        assert!((g.as_slice().iter().sum::<f64>() - total).abs() < 1e-12);
    }

    #[test]
    fn average_pool_backward_is_forward_transpose() {
        let mut r = rng::from_u64(9);
        for (window, stride) in [(2, 2), (3, 1), (2, 1)] {
            let p = PoolLayer::new(PoolMode::Average, window, stride).unwrap();
            let input = random_tensor(&mut r, Shape3::new(5, 6, 2));
            let (out_shape, pooled, tr) = p.linear_forward(input.shape(), input.as_slice()).unwrap();
            let m = p.jacobian(input.shape(), &tr).unwrap();
            let fwd = m.matvec(&Vector::from(input.as_slice())).unwrap();
            for k in 0..pooled.len() {
                assert!((fwd[k] - pooled[k]).abs() < 1e-12);
            }
            let delta = random_tensor(&mut r, out_shape);
            let g = p.backward(input.shape(), &tr, delta.as_slice()).unwrap();
            let gt = m.matvec_transposed(&Vector::from(delta.as_slice())).unwrap();
            for k in 0..g.len() {
                assert!((g[k] - gt[k]).abs() < 1e-12);
            }
        }
    }
}
