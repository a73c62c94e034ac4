//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! The primitive set is deliberately closed: everything the network and the
//! loss need is expressed with the methods on [`Tape`]. Values are checked for
//! finiteness after every primitive.
//!
//! ```
//! use ctsn_core::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let s = tape.sum_all(sq).unwrap();
//! let loss = tape.scale(s, 0.5).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[1.0, -2.0, 0.5]);
//! ```

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use gradcheck::{finite_diff_check, finite_diff_check_subset, relative_error, GradCheck};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub(crate) use tape::{matmul_raw, sigmoid};
pub use tensor::Tensor;

