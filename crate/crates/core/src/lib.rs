//! Deterministic discrete-event simulator for time-sensitive Ethernet networks
//! whose switches are managed by an SDN controller.
//!
//! The crate is organised bottom-up: `time` and `engine` provide the event
//! core, `frames`, `link` and `topology` the network substrate, `switch` the
//! TSN bridge model, `control` the southbound channel and controller, `srp`
//! the reservation arithmetic, `hosts` the end-point applications and
//! `scenario` the configuration, run loop and reporting.

pub mod control;
pub mod engine;
pub mod frames;
pub mod hosts;
pub mod link;
pub mod scenario;
pub mod srp;
pub mod switch;
pub mod time;
pub mod topology;

pub use engine::{Engine, NodeId, PortId, SimError};
pub use time::SimTime;
