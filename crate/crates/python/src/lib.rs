//! Python bindings: `import gradforge`.

use std::path::PathBuf;

use gradforge::activation::{self, ActivationKind};
use gradforge::backprop;
use gradforge::conv::{self, Pad1d, Shape3};
use gradforge::data::{self, LabeledDataset};
use gradforge::linalg::Vector;
use gradforge::loss::{self, Loss, LossKind, Target};
use gradforge::metrics;
use gradforge::model_io;
use gradforge::network::NetworkSpec;
use gradforge::optimize::{self, Budget, LrSchedule, Scheme, TrainConfig};
use gradforge::Error;
use pyo3::exceptions::{PyFloatingPointError, PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Diverged { .. } => PyFloatingPointError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn make_loss(kind: &str, lambda: f64) -> PyResult<Loss> {
    Loss::new(parse::<LossKind>(kind)?, lambda).map_err(to_py)
}

/// A layered network with its parameters.
#[pyclass(name = "Network", module = "gradforge", from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: NetworkSpec,
}

#[pymethods]
impl PyNetwork {
    /// Network from an input shape `(H, W, C)` and layer descriptions such as
    /// `"dense 2 3 sigmoid"`, `"conv 5 5 3 32 1 2 relu"` or `"pool max 2 2"`.
    /// Parameters start at zero; call `init` to draw them.
    #[new]
    fn new(input_shape: (usize, usize, usize), layers: Vec<String>) -> PyResult<Self> {
        let (h, w, c) = input_shape;
        let layers = layers
            .iter()
            .map(|l| model_io::parse_layer_line(l))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        let inner = NetworkSpec::new(Shape3::new(h, w, c), layers).map_err(to_py)?;
        Ok(PyNetwork { inner })
    }

    /// Fully connected network with the given layer widths.
    #[staticmethod]
    #[pyo3(signature = (widths, activation = "sigmoid"))]
    fn dense(widths: Vec<usize>, activation: &str) -> PyResult<Self> {
        let act: ActivationKind = parse(activation)?;
        let inner = NetworkSpec::dense(&widths, act).map_err(to_py)?;
        Ok(PyNetwork { inner })
    }

    /// Copy with every parameter drawn from N(0, 1) using `seed`.
    fn init(&self, seed: u64) -> Self {
        PyNetwork {
            inner: self.inner.init_params(seed),
        }
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    /// Layer descriptions, input to output.
    #[getter]
    fn layers(&self) -> Vec<String> {
        self.inner.layers().iter().map(model_io::layer_line).collect()
    }

    /// `(H, W, C)` at the input and after every layer.
    #[getter]
    fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.inner.shapes().iter().map(|s| (s.height, s.width, s.channels)).collect()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.output(&Vector::new(x)).map_err(to_py)?.into_vec())
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.predict_class(&Vector::new(x)).map_err(to_py)
    }

    /// Back-propagated gradient for one sample, flattened layer by layer
    /// (weights row-major, then biases).
    #[pyo3(signature = (x, label, loss = "quadratic", lambda_ = 0.0, dataset_len = 1))]
    fn gradient(&self, x: Vec<f64>, label: usize, loss: &str, lambda_: f64, dataset_len: usize) -> PyResult<Vec<f64>> {
        let loss = make_loss(loss, lambda_)?;
        let x = Vector::new(x);
        let trace = self.inner.forward(&x).map_err(to_py)?;
        let g = backprop::backward(&self.inner, &trace, Target::Label(label), &loss, dataset_len).map_err(to_py)?;
        Ok(g.flatten())
    }

    /// Per-layer largest relative error between back-propagation and central
    /// finite differences.
    #[pyo3(signature = (x, label, loss = "quadratic", lambda_ = 0.0, dataset_len = 1, h = backprop::DEFAULT_FD_STEP))]
    fn gradcheck(&self, x: Vec<f64>, label: usize, loss: &str, lambda_: f64, dataset_len: usize, h: f64) -> PyResult<Vec<f64>> {
        let loss = make_loss(loss, lambda_)?;
        let x = Vector::new(x);
        let target = Target::Label(label);
        let trace = self.inner.forward(&x).map_err(to_py)?;
        let analytic = backprop::backward(&self.inner, &trace, target, &loss, dataset_len).map_err(to_py)?;
        let numeric = backprop::fd_gradient(&self.inner, &x, target, &loss, dataset_len, h).map_err(to_py)?;
        let report = backprop::compare(&analytic, &numeric).map_err(to_py)?;
        Ok(report.iter().map(|d| d.max_rel_error).collect())
    }

    fn to_text(&self) -> String {
        model_io::to_text(&self.inner)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: model_io::from_text(text).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model_io::save(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: model_io::load(path).map_err(to_py)?,
        })
    }

    fn __eq__(&self, other: &PyNetwork) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Network({} parameters: {})", self.inner.param_count(), self.layers().join(", "))
    }
}

/// Labeled points for classification.
#[pyclass(name = "Dataset", module = "gradforge", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> PyResult<Self> {
        let inputs = inputs.into_iter().map(Vector::new).collect();
        Ok(PyDataset {
            inner: LabeledDataset::new(inputs, labels, num_classes).map_err(to_py)?,
        })
    }

    /// The ten-point, two-class problem in the unit square.
    #[staticmethod]
    fn toy() -> Self {
        PyDataset { inner: data::toy_dataset() }
    }

    #[staticmethod]
    fn toy_extended() -> Self {
        PyDataset {
            inner: data::toy_dataset_extended(),
        }
    }

    /// Synthetic `side x side x 3` images in `num_classes` classes.
    #[staticmethod]
    fn toy_images(n: usize, side: usize, num_classes: usize, seed: u64) -> Self {
        PyDataset {
            inner: data::toy_images(n, side, num_classes, seed),
        }
    }

    #[staticmethod]
    fn from_csv(path: PathBuf, n_features: usize, num_classes: usize) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::load_csv(path, n_features, num_classes).map_err(to_py)?,
        })
    }

    #[getter]
    fn inputs(&self) -> Vec<Vec<f64>> {
        self.inner.inputs().iter().map(|x| x.as_slice().to_vec()).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// `(step, train_cost, val_cost)`.
type HistoryRow = (usize, f64, Option<f64>);

/// Trains `net` and returns `(trained_net, history)` where each history entry
/// is `(step, train_cost, val_cost or None)`.
#[pyfunction]
#[pyo3(signature = (
    net, data, *, scheme = "single_with_replacement", eta = 0.05, lr_schedule = None,
    niter = None, epochs = None, momentum = 0.0, dropout = None, seed = 0,
    loss = "quadratic", lambda_ = 0.0, cost_log_stride = 1000, val = None
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    net: &PyNetwork,
    data: &PyDataset,
    scheme: &str,
    eta: f64,
    lr_schedule: Option<&str>,
    niter: Option<usize>,
    epochs: Option<usize>,
    momentum: f64,
    dropout: Option<Vec<f64>>,
    seed: u64,
    loss: &str,
    lambda_: f64,
    cost_log_stride: usize,
    val: Option<&PyDataset>,
) -> PyResult<(PyNetwork, Vec<HistoryRow>)> {
    let budget = match (niter, epochs) {
        (Some(_), Some(_)) => return Err(PyValueError::new_err("give either niter or epochs, not both")),
        (Some(n), None) => Budget::Steps(n),
        (None, Some(e)) => Budget::Epochs(e),
        (None, None) => Budget::Steps(1000),
    };
    let lr_schedule = match lr_schedule {
        Some(s) => parse(s)?,
        None => LrSchedule::constant(eta),
    };
    let config = TrainConfig {
        scheme: parse::<Scheme>(scheme)?,
        lr_schedule,
        momentum,
        dropout: dropout.unwrap_or_default(),
        budget,
        seed,
        cost_log_stride,
        record_samples: false,
    };
    let loss = make_loss(loss, lambda_)?;
    let val = val.map(|v| &v.inner);
    let report = py
        .detach(|| optimize::train(&net.inner, &data.inner, val, &loss, &config))
        .map_err(to_py)?;
    let history = report.cost_history.iter().map(|r| (r.step, r.train_cost, r.val_cost)).collect();
    Ok((PyNetwork { inner: report.final_net }, history))
}

/// Mean cost over the dataset, including the weight penalty.
#[pyfunction]
#[pyo3(signature = (net, data, loss = "quadratic", lambda_ = 0.0))]
fn dataset_cost(net: &PyNetwork, data: &PyDataset, loss: &str, lambda_: f64) -> PyResult<f64> {
    loss::dataset_cost(&make_loss(loss, lambda_)?, &net.inner, &data.inner).map_err(to_py)
}

/// Sum over the dataset of squared output residuals.
#[pyfunction]
fn sum_squared_residuals(net: &PyNetwork, data: &PyDataset) -> PyResult<f64> {
    loss::sum_squared_residuals(&net.inner, &data.inner).map_err(to_py)
}

#[pyfunction]
fn softmax(v: Vec<f64>) -> Vec<f64> {
    activation::softmax(&Vector::new(v)).into_vec()
}

#[pyfunction]
#[pyo3(signature = (x, filter, stride = 1, pad_before = 0, pad_after = 0))]
fn conv1d(x: Vec<f64>, filter: Vec<f64>, stride: usize, pad_before: usize, pad_after: usize) -> PyResult<Vec<f64>> {
    let pad = Pad1d {
        before: pad_before,
        after: pad_after,
    };
    Ok(conv::conv1d(&Vector::new(x), &Vector::new(filter), stride, pad).map_err(to_py)?.into_vec())
}

/// The matrix that maps the zero-padded input to the 1-D convolution output.
#[pyfunction]
#[pyo3(signature = (input_len, filter, stride = 1, pad_before = 0, pad_after = 0))]
fn conv1d_as_matrix(
    input_len: usize,
    filter: Vec<f64>,
    stride: usize,
    pad_before: usize,
    pad_after: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let pad = Pad1d {
        before: pad_before,
        after: pad_after,
    };
    let m = conv::conv1d_as_matrix(input_len, &Vector::new(filter), stride, pad).map_err(to_py)?;
    Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
}

/// Confusion matrix and derived rates: a dict with `counts` (rows are
/// predictions, columns true classes), `accuracy`, `precision`, `recall`
/// and the rendered `report`.
#[pyfunction]
fn evaluate(py: Python<'_>, net: &PyNetwork, data: &PyDataset) -> PyResult<Py<PyAny>> {
    let cm = metrics::evaluate(&net.inner, &data.inner).map_err(to_py)?;
    let k = cm.num_classes();
    let counts: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| cm.count(i, j)).collect()).collect();
    let s = cm.summarize();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("counts", counts)?;
    d.set_item("accuracy", s.accuracy)?;
    d.set_item("precision", s.precision)?;
    d.set_item("recall", s.recall)?;
    d.set_item("report", cm.to_text(None))?;
    Ok(d.into_any().unbind())
}

/// `(x, y, class)` on a `resolution x resolution` lattice over the unit square.
#[pyfunction]
fn boundary_grid(net: &PyNetwork, resolution: usize) -> PyResult<Vec<(f64, f64, usize)>> {
    let nodes = data::boundary_grid(&net.inner, resolution).map_err(to_py)?;
    Ok(nodes.into_iter().map(|n| (n.x, n.y, n.class)).collect())
}

#[pymodule(name = "gradforge")]
fn gradforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_cost, m)?)?;
    m.add_function(wrap_pyfunction!(sum_squared_residuals, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(conv1d, m)?)?;
    m.add_function(wrap_pyfunction!(conv1d_as_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_grid, m)?)?;
    m.add("PRNG", gradforge::rng::PRNG_NAME)?;
    Ok(())
}
