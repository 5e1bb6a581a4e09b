//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Enough machinery to train the toy encoder-decoder and compute all of the
//! training losses: a recording [`Tape`], [`Tensor`] storage, AdamW, and a
//! finite-difference gradient checker used as the test oracle.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{assert_gradients_close, finite_difference, max_rel_error};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};
pub use tape::{Tape, Var};
pub use tensor::{mm, mm_nt, mm_tn, Tensor};
