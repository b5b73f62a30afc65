//! Layer vocabulary, loss, optimizer and gradient verification.

pub mod activation;
pub mod adam;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod norm;

mod gemm;

pub use activation::{Activation, LEAKY_SLOPE};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Network, NodeId, Op, Param, ParamId};
pub use loss::logcosh_loss;

/// Switches dropout and batch normalization between their training and
/// deterministic inference behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Inference,
}
