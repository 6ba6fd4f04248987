//! Differentiable computation substrate: tensors, the tape, initialization,
//! gradient clipping, Adam, and the checkpoint container.

mod gradcheck;
mod init;
mod optim;
mod params;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_gradients, check_against_finite_differences, grad_check, relative_error, GradCheckOptions,
    GradCheckReport,
};
pub use init::{uniform, xavier_uniform};
pub use optim::{clip_global_norm, global_norm, AdamConfig, AdamState};
pub use params::{Param, ParamId, ParamSet, CHECKPOINT_VERSION};
pub use rng::SeededRng;
pub use scalar::{log_sum_exp, Scalar};
pub use tape::{Binding, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{sigmoid, softmax_in_place};
#[allow(unused_imports)]
pub(crate) use tensor::{gemm_nn, gemm_nt, gemm_tn};
