//! Layer stacks and the forward pass.
//!
//! Layer 1 of the textbook formulation (the input) is not stored as a layer;
//! it only fixes [`NetworkSpec::input_shape`]. Every stored layer maps
//! `a^[l-1] ↦ z^[l] ↦ a^[l] = σ(z^[l])`.

use rand_distr::{Distribution, StandardNormal};

use crate::activation::{self, ActivationKind};
use crate::conv::{ConvLayer, PoolLayer, PoolTrace, Shape3};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vector,
    pub activation: ActivationKind,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vector, activation: ActivationKind) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::shape(
                "dense layer",
                format!("weights {}x{}", weights.rows(), weights.cols()),
                format!("biases of length {}", biases.len()),
            ));
        }
        Ok(DenseLayer {
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: ActivationKind) -> Self {
        DenseLayer {
            weights: Matrix::zeros(outputs, inputs),
            biases: Vector::zeros(outputs),
            activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
    Pool(PoolLayer),
}

impl Layer {
    pub fn activation(&self) -> ActivationKind {
        match self {
            Layer::Dense(d) => d.activation,
            Layer::Conv(c) => c.activation,
            Layer::Pool(p) => p.activation,
        }
    }

    pub fn output_shape(&self, input: Shape3) -> Result<Shape3> {
        match self {
            Layer::Dense(d) => {
                if d.weights.cols() != input.len() {
                    return Err(Error::shape(
                        "dense layer input",
                        format!("weights {}x{}", d.weights.rows(), d.weights.cols()),
                        format!("input of size {}", input.len()),
                    ));
                }
                Ok(Shape3::flat(d.weights.rows()))
            }
            Layer::Conv(c) => c.output_shape(input),
            Layer::Pool(p) => p.output_shape(input),
        }
    }

    /// Weight matrix, if the layer has parameters.
    pub fn weights(&self) -> Option<&Matrix> {
        match self {
            Layer::Dense(d) => Some(&d.weights),
            Layer::Conv(c) => Some(&c.filters),
            Layer::Pool(_) => None,
        }
    }

    pub fn weights_mut(&mut self) -> Option<&mut Matrix> {
        match self {
            Layer::Dense(d) => Some(&mut d.weights),
            Layer::Conv(c) => Some(&mut c.filters),
            Layer::Pool(_) => None,
        }
    }

    pub fn biases(&self) -> Option<&Vector> {
        match self {
            Layer::Dense(d) => Some(&d.biases),
            Layer::Conv(c) => Some(&c.biases),
            Layer::Pool(_) => None,
        }
    }

    pub fn biases_mut(&mut self) -> Option<&mut Vector> {
        match self {
            Layer::Dense(d) => Some(&mut d.biases),
            Layer::Conv(c) => Some(&mut c.biases),
            Layer::Pool(_) => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights().map_or(0, Matrix::len) + self.biases().map_or(0, Vector::len)
    }

    /// `(weights, biases)` as mutable slices; empty for pool layers.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        match self {
            Layer::Dense(d) => (d.weights.as_mut_slice(), d.biases.as_mut_slice()),
            Layer::Conv(c) => (c.filters.as_mut_slice(), c.biases.as_mut_slice()),
            Layer::Pool(_) => (&mut [], &mut []),
        }
    }

    /// Weighted input for this layer, plus the pooling trace where relevant.
    pub(crate) fn linear_forward(&self, in_shape: Shape3, input: &Vector) -> Result<(Vector, Option<PoolTrace>)> {
        match self {
            Layer::Dense(d) => Ok((linalg::matvec(&d.weights, input)?.add(&d.biases)?, None)),
            Layer::Conv(c) => {
                let (_, z) = c.linear_forward(in_shape, input.as_slice())?;
                Ok((Vector::new(z), None))
            }
            Layer::Pool(p) => {
                let (_, z, trace) = p.linear_forward(in_shape, input.as_slice())?;
                Ok((Vector::new(z), Some(trace)))
            }
        }
    }
}

/// An ordered stack of layers over a fixed input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    input_shape: Shape3,
    layers: Vec<Layer>,
    /// `shapes[l]` is the input shape of layer `l`; the last entry is the output shape.
    shapes: Vec<Shape3>,
}

impl NetworkSpec {
    /// Validates that layer shapes chain.
    pub fn new(input_shape: Shape3, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layers", "a network needs at least one layer"));
        }
        if input_shape.is_empty() {
            return Err(Error::config("input", "input dimension must be positive"));
        }
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(input_shape);
        for layer in &layers {
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(NetworkSpec {
            input_shape,
            layers,
            shapes,
        })
    }

    /// Zero-initialized fully connected network with widths
    /// `[n_1, n_2, …, n_L]` and one activation throughout.
    pub fn dense(widths: &[usize], activation: ActivationKind) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("layers", "need an input width and at least one layer width"));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer::Dense(DenseLayer::zeros(w[0], w[1], activation)))
            .collect();
        Self::new(Shape3::flat(widths[0]), layers)
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.len()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Mutable access to a layer's parameters. Shapes cannot change through it.
    pub fn params_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        self.layers[layer].params_mut()
    }

    pub fn layer_input_shape(&self, l: usize) -> Shape3 {
        self.shapes[l]
    }

    pub fn layer_output_shape(&self, l: usize) -> Shape3 {
        self.shapes[l + 1]
    }

    pub fn shapes(&self) -> &[Shape3] {
        &self.shapes
    }

    pub fn output_activation(&self) -> ActivationKind {
        self.layers.last().unwrap().activation()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `Σ_l ‖W^[l]‖_F²` over every layer with weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers.iter().filter_map(Layer::weights).map(Matrix::frobenius_sq).sum()
    }

    /// Fresh standard-normal weights and biases, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> NetworkSpec {
        let mut net = self.clone();
        let mut rng = rng::stream(seed, Stream::Init);
        for layer in &mut net.layers {
            let (w, b) = layer.params_mut();
            for p in w.iter_mut().chain(b.iter_mut()) {
                *p = StandardNormal.sample(&mut rng);
            }
        }
        net
    }

    pub fn forward(&self, x: &Vector) -> Result<ForwardTrace> {
        self.forward_with(x, |_, a| (a, None))
    }

    /// Forward pass where `post(l, a)` may rewrite the activation of layer `l`
    /// and return the mask it applied (used by dropout).
    pub(crate) fn forward_with(
        &self,
        x: &Vector,
        mut post: impl FnMut(usize, Vector) -> (Vector, Option<Vector>),
    ) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut trace = ForwardTrace {
            activations: Vec::with_capacity(n + 1),
            weighted_inputs: Vec::with_capacity(n),
            pool_traces: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        trace.activations.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let (z, pool) = layer.linear_forward(self.shapes[l], trace.activations.last().unwrap())?;
            let a = activation::apply(layer.activation(), &z);
            let (a, m) = post(l, a);
            trace.weighted_inputs.push(z);
            trace.pool_traces.push(pool);
            trace.masks.push(m);
            trace.activations.push(a);
        }
        Ok(trace)
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(
                "network input",
                format!("network expecting {} inputs ({})", self.input_dim(), self.input_shape),
                format!("vector of length {}", x.len()),
            ));
        }
        Ok(())
    }

    /// Network output `F(x)`.
    pub fn output(&self, x: &Vector) -> Result<Vector> {
        self.check_input(x)?;
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let (z, _) = layer.linear_forward(self.shapes[l], &a)?;
            a = activation::apply(layer.activation(), &z);
        }
        Ok(a)
    }

    /// Index of the largest output; ties go to the lowest index.
    pub fn predict_class(&self, x: &Vector) -> Result<usize> {
        Ok(self.output(x)?.argmax().expect("networks have nonempty outputs"))
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l + 1]` is the output of layer `l`.
    pub activations: Vec<Vector>,
    /// `weighted_inputs[l]` is `z` for layer `l`.
    pub weighted_inputs: Vec<Vector>,
    pub pool_traces: Vec<Option<PoolTrace>>,
    /// Dropout masks applied to each layer's activation (1 = kept).
    pub masks: Vec<Option<Vector>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Vector {
        self.activations.last().unwrap()
    }

    pub fn into_output(mut self) -> Vector {
        self.activations.pop().unwrap()
    }

    pub fn output_weighted_input(&self) -> &Vector {
        self.weighted_inputs.last().unwrap()
    }
}

pub fn forward(net: &NetworkSpec, x: &Vector) -> Result<ForwardTrace> {
    net.forward(x)
}

pub fn predict_class(net: &NetworkSpec, x: &Vector) -> Result<usize> {
    net.predict_class(x)
}

pub fn param_count(net: &NetworkSpec) -> usize {
    net.param_count()
}

pub fn init_params(net: &NetworkSpec, seed: u64) -> NetworkSpec {
    net.init_params(seed)
}
