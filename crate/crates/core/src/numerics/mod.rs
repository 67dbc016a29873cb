//! Dense tensors, reverse-mode differentiation, optimization and
//! gradient verification.

mod gradcheck;
mod graph;
mod optim;
mod parallel;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, GradcheckReport, MAX_CHECKED_PER_TENSOR, RELATIVE_FLOOR, RETRY_ABOVE};
pub use graph::Graph;
pub use optim::{adam_step, cosine_warm_restart_lr, AdamConfig, AdamState, WarmRestartSchedule};
pub use parallel::parallel_map;
pub use params::{Gradients, ParamId, ParamStore};
pub(crate) use tape::column_moments;
pub use tape::{Tape, Var};
pub(crate) use tensor::softmax_in_place;
pub use tensor::{argmax, cross_entropy, layer_norm, matmul, softmax, Tensor};
