//! Federated LoRA fine-tuning with heterogeneous per-layer allocation.
//!
//! Clients with different memory budgets train different subsets of LoRA
//! layers of a shared frozen encoder. The server decides each client's
//! allocation map from layer-importance scores, geometric patterns, or a
//! randomized prior derived from them, and aggregates every layer over the
//! clients that actually trained it.
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases at
//! the crate root fix it to `f64`, which is what the simulator runs in.

pub mod allocation;
pub mod data;
mod error;
pub mod federation;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
mod scalar;

pub use error::{Error, Result};
pub use scalar::{ProbScalar, Scalar};

pub type Matrix = numerics::Matrix<f64>;
pub type FrozenBase = model::FrozenBase<f64>;
pub type TrainableParams = model::TrainableParams<f64>;
pub type Gradients = model::Gradients<f64>;
pub type LayerDeltas = model::LayerDeltas<f64>;
pub type ClientUpdate = federation::ClientUpdate<f64>;
pub type GlobalState = federation::GlobalState<f64>;
pub type Simulation = federation::Simulation<f64>;
