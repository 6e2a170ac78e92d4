//! Differentiable building blocks: tensors, a reverse-mode tape, parameter
//! containers, RMSProp and the checkpoint format.

pub mod checkpoint;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use optim::RmsProp;
pub use params::{uniform_weight, BoundParams, GradBundle, NetParams, ParamSet};
pub use tape::{euclid, kl_to_uniform, log_softmax, Gradients, Tape, Var};
pub use tensor::Tensor;
