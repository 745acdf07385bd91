//! Dense matrices, activation and normalization kernels, sequence scans,
//! and the reverse-mode gradient tape.

mod activation;
mod gradcheck;
mod matrix;
pub mod meter;
mod norm;
mod real;
mod sequence;
mod tape;

pub use activation::{sigmoid, silu, sq_relu, Activation};
pub use gradcheck::{central_difference, grad_check, max_relative_error, GradCheck};
pub use matrix::Matrix;
pub use norm::{group_norm, group_norm_rows, layer_norm, NORM_EPS};
pub use real::{Precision, Real};
pub use sequence::{decay_from_raw, token_shift_seq, wkv_scan, WkvStates};
pub use tape::{Gradients, OpKind, Tape, Var};
