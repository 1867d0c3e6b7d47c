//! Reverse-mode differentiation over dense rank-1/rank-2 tensors.
//!
//! A [`Tape`] records each primitive as it is evaluated. Calling
//! [`Tape::backward`] on a scalar sweeps the record in reverse and returns
//! gradients for every named parameter bound on the tape (zero when the
//! loss does not reach it) and for any other recorded variable on request.
//!
//! ```
//! use cheatlab::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param("x", Tensor::vector(vec![3.0])).unwrap();
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.named().get("x").unwrap().data(), &[6.0]);
//! ```
//!
//! Parameters live in a [`ParamSet`] and are updated with [`Adam`]. The
//! numeric kernels in [`kernels`] are shared with the tape-free forward
//! passes used by evolution and closed-loop rollouts.

mod adam;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use kernels::Activation;
pub use params::{Bound, ParamEntry, ParamSet};
pub(crate) use params::push_dense;
pub use tape::{GradMap, Gradients, Tape, Var};
pub use tensor::Tensor;
