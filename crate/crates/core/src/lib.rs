//! Agent-based simulator of Ethereum block production under plain
//! proof-of-stake and enshrined proposer-builder separation.

pub mod agents;
pub mod auction;
pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod netlat;
pub mod par;
pub mod sim;
pub mod sweep;

pub use config::{Mode, SimConfig};
pub use error::{Error, Result};
