//! Dense tensors with a reverse-mode autodiff tape.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, ABS_FLOOR};
pub use kernels::{conv_out_extent, ConvAlgo};
pub use tape::{BnMode, Gradients, LinearOp, RunningStats, Tape, Var, BN_EPSILON, BN_MOMENTUM};
pub use tensor::{Element, Tensor};
mod params;
pub use params::{Bound, BufferId, ParamId, ParamStore};
