//! Simulation and training of strategic bidding agents on a pay-as-bid
//! electricity market, with a reference OPF clearing and a learned surrogate.

pub mod env;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod grid;
pub mod market;
pub mod neural;
pub mod params;
pub mod power_flow;
pub mod registry;
pub mod replay;
pub mod surrogate;
pub mod trainers;

pub use error::{Error, Result};
