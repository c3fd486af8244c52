//! Simulation of a RIS-assisted cell-free mmWave network with passive and
//! active eavesdroppers, a CSI dataset generator, a from-scratch early-exit
//! CNN detector trained with federated averaging, and the secrecy-rate
//! campaigns built on top of them.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod federated;
pub mod io;
pub mod network;
pub mod nn;
pub mod scenario;
pub mod secrecy;
pub mod topology;

pub use error::{Error, Result};
pub use scenario::ScenarioConfig;
