//! Neural networks from first principles.
//!
//! Dense, convolutional and pooling layers with sigmoid/ReLU-family
//! activations, trained by back-propagation and stochastic gradient descent.
//! Every gradient path can be checked against a central finite-difference
//! oracle ([`backprop::fd_gradient`]).
//!
//! ```
//! use gradforge::{activation::ActivationKind, backprop, data, loss::Loss, network::NetworkSpec};
//!
//! let net = NetworkSpec::dense(&[2, 2, 3, 2], ActivationKind::Sigmoid)?.init_params(1);
//! assert_eq!(net.param_count(), 23);
//!
//! let toy = data::toy_dataset();
//! let trace = net.forward(toy.input(0))?;
//! let grad = backprop::backward(&net, &trace, toy.target(0), &Loss::quadratic(), toy.len())?;
//! let fd = backprop::fd_gradient(&net, toy.input(0), toy.target(0), &Loss::quadratic(), toy.len(), 1e-6)?;
//! assert!(backprop::max_relative_error(&grad, &fd)? < 1e-6);
//! # Ok::<(), gradforge::Error>(())
//! ```

pub mod activation;
pub mod backprop;
pub mod cli;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model_io;
pub mod network;
pub mod optimize;
pub mod rng;

pub use error::{Error, Result};
