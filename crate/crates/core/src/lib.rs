//! Opportunistic scheduling of two queues sharing a randomly time-varying
//! server.

pub mod arrivals;
pub mod experiment;
pub mod geometry;
pub mod large_deviations;
pub mod rational;
pub mod schedulers;
pub mod simulator;
