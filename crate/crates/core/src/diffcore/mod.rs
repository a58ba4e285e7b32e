//! A small double-precision differentiable substrate: tensors, a fixed op set
//! with hand-written backward passes, a seeded RNG, SGD and checkpoints.

pub mod checkpoint;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use ops::*;
pub use optim::{cosine_lr, Sgd};
pub use rng::Rng;
pub use tensor::{Param, Tensor};
