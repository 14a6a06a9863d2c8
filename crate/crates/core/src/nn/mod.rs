//! Differentiable building blocks: tensors, the autodiff tape, layers, the
//! optimizer and the finite-difference verification harness.

pub mod gradcheck;
pub mod layers;
pub mod numeric;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_params, GradCheckReport, FD_STEP};
pub use layers::{apply_buffer_updates, BatchNorm1d, BindMode, Blstm, Conv1d, Ctx, Linear, Lstm, Phase};
pub use ops::{max_pool_time, scaled_dot_attention, AttentionOutput};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamKind, ParamStore};
pub use tape::{AttentionMode, Backward, Grads, Tape, Var};
pub use tensor::Tensor;
