//! Dense matrices, small feedforward networks with exact reverse-mode
//! gradients, and the two optimizers used across the crate.

pub mod linalg;
pub mod matrix;
pub mod net;
pub mod optim;

pub use linalg::Cholesky;
pub use matrix::Matrix;
pub use net::{net_backward, net_forward, Activation, FeedForwardNet, ForwardTrace};
pub use optim::{optimize_adaptive_step, optimize_scg, AdamState, Objective, ScgOptions, ScgReport};
