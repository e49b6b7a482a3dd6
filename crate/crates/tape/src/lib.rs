//! Reverse-mode differentiation over dense matrices.
//!
//! Operations are recorded on a [`Graph`] as they execute; [`Graph::backward`]
//! then sweeps the tape once in reverse and returns gradients for every node
//! that was recorded as differentiable. Parameters live in a [`ParamStore`],
//! are bound onto a fresh graph per forward pass, and are updated with
//! [`Adam`].
//!
//! ```
//! use vndm_tape::{Graph, Matrix};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Matrix::scalar(3.0));
//! let y = g.mul(x, x);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod adam;
mod graph;
mod matrix;
mod params;

pub use adam::{Adam, AdamConfig, Moments};
pub use graph::{Gradients, Graph, RowMix, Var};
pub use matrix::Matrix;
pub use params::{Bound, ParamEntry, ParamId, ParamStore};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TapeError {
    #[error("backward needs a 1x1 output, got {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },
}
