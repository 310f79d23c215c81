//! Market-based coordination of generalized energy storages (GES) for joint
//! participation in energy and frequency-regulation markets.

pub mod aggregate;
pub mod config;
pub mod devices;
pub mod error;
pub mod market;
pub mod metrics;
pub mod optimizer;
pub mod report;
pub mod sim;
pub mod signals;

pub use error::{Error, Result};
