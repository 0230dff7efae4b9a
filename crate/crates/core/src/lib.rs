//! Slot-level simulator of IAB nodes and WiGig access points sharing an
//! unlicensed mmWave channel.

pub mod analytics;
pub mod channel;
pub mod controller;
pub mod error;
pub mod mac;
pub mod montecarlo;
pub mod radio;
pub mod report;
pub mod rng;
pub mod schedulers;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
