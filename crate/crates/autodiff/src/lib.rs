//! Dense `f64` arrays with reverse-mode automatic differentiation.
//!
//! The crate is deliberately small: a [`Tape`] records eagerly evaluated
//! primitives over row-major [`Array`]s, [`Tape::backward`] sweeps it in
//! reverse, and [`ParameterStore`] holds named trainable arrays together
//! with their Adam state. Matrix products go through `matrixmultiply`.

pub mod array;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod prob;
pub mod rng;
pub mod tape;

pub use array::Array;
pub use error::{Result, TensorError};
pub use optim::{AdamConfig, Parameter, ParameterStore};
pub use prob::DiagGaussian;
pub use tape::{Gradients, Grads, Tape, Var};
