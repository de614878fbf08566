//! Dense tensors and a define-by-run reverse-mode autodiff tape.
//!
//! Values live in [`Tensor`]; every differentiable operation is a method on
//! [`Tape`] that records its inputs and returns a [`Var`] handle. Leaves are
//! registered with [`Tape::param`] (trainable) or [`Tape::constant`].
//!
//! ```
//! use vitlab::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

mod dense;
mod gradcheck;
mod scalar;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use scalar::{DType, Scalar};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },
    #[error("{op}: {detail}")]
    Numeric { op: &'static str, detail: String },
    #[error("{0}")]
    Contract(String),
}
