//! Dense tensors, a reverse-mode tape, gradient checking and Adam.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{finite_diff_check, finite_diff_check_with_floor, GradCheckReport, ParamCheck, REL_FLOOR};
pub use params::{Bound, ParamGrads, ParamId, ParamStore};
pub use tape::{
    log_sum_exp, sigmoid, softmax_rows, xlogx, Gradients, OpAttr, OpKind, Tape, Var,
};
pub use tensor::Tensor;
