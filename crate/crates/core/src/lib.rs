//! Discrete-event simulator of a dual-band (2.4 + 5.8 GHz) WiFi-Direct mesh:
//! formation through software APs, airtime/load link selection, soft and
//! hard handoff, relay and learning-switch traffic, and a fluid max-min rate
//! model.

pub mod bundled;
pub mod domain;
pub mod engine;
pub mod formation;
pub mod generate;
pub mod handoff;
pub mod metric;
pub mod oracle;
pub mod radio;
pub mod results;
pub mod scenario;
pub mod solver;
pub mod traffic;
