//! Server loop: client sampling, masked local training, masked aggregation.

mod aggregate;
mod client;
mod config;
mod sim;

pub use aggregate::aggregate;
pub use client::{local_update, sample_clients, ClientUpdate};
pub use config::FederationConfig;
pub use sim::{GlobalState, RoundCosts, RoundRecord, Simulation, SimulationData};
