//! Small dense-tensor engine with tape-based reverse-mode differentiation.
//!
//! Everything is `f64` and single-threaded. A [`Graph`] is built fresh for
//! each forward pass; trainable values live in a [`ParamStore`] and are
//! pulled onto the graph with [`Graph::param`].

mod error;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use error::TensorError;
pub use gradcheck::{grad_check, grad_check_coords, max_relative_error, numeric_gradient, relative_error};
pub use graph::{Graph, Var};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
