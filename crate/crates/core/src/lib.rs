//! Causal coordinated concurrent reinforcement learning.
//!
//! Agents acting in environments that share structure but differ in hidden
//! parameters first extract a latent mechanism parameter per agent (a
//! back-constrained GP latent variable model with an HSIC independence
//! penalty), soft-cluster those parameters, and then share replay data in
//! proportion to mechanism similarity while exploring with coordinated
//! Ornstein-Uhlenbeck noise.

pub mod agents;
pub mod anm_mm;
pub mod clustering;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod par;

pub use error::{Error, Result};
