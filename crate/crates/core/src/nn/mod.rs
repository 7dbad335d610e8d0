//! Rank-4 tensors and the handful of differentiable layers the
//! discriminators and toy generator are built from.

mod act;
mod checkpoint;
mod conv;
mod optim;
mod param;
mod tensor;

pub use act::{upsample_time, upsample_time_backward, LeakyRelu, Tanh, LEAKY_SLOPE};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{Conv2d, ConvSpec};
pub use optim::{AdamW, AdamWConfig};
pub use param::{scoped, Module, Param};
pub use tensor::Tensor4;

/// Default standard deviation of the initial direction tensors.
pub const INIT_STD: f64 = 0.01;
