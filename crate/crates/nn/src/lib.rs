//! Differentiable building blocks for the relation-fact VQA models.
//!
//! Everything runs in `f64` on the CPU. Models are written against a
//! [`Tape`] that borrows a [`ParameterStore`]; gradients come back as a
//! [`Gradients`] value and are folded into the store before an
//! [`RmsProp`] step.

pub mod array;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;

pub use array::DenseArray;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::GruCell;
pub use optim::{RmsProp, RmsPropConfig, RMSPROP_VARIANT};
pub use params::{Parameter, ParameterStore};
pub use rng::{RngState, SeededRng};
pub use tape::{Gradients, Mode, Tape, Var};
