//! Dense tensors, a gradient tape, finite-difference checks and checkpoints.

pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod param;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_all, relative_error};
pub use param::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
