//! Simulator and learning library for blockchain-aided satellite-ground
//! digital-twin networks.

pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod federation;
pub mod ledger;
pub mod maml;
pub mod nn;
pub mod oracle;
pub mod output;
pub mod policy;
pub mod queueing;
pub mod rng;
pub mod sim;
pub mod stackelberg;
pub mod sweep;
pub mod topology;

pub use config::SimConfig;
pub use error::{ModelError, SimError};
