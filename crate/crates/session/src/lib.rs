//! Session layer: configuration, trial-log archives, cohort simulation,
//! analysis output and the live WebSocket server.

pub mod analysis;
pub mod archive;
pub mod cohort;
pub mod config;
pub mod error;
pub mod serve;
pub mod wire;

pub use error::{Result, SessionError};
