//! Deterministic simulator of federated domain-adaptive pre-training (FDAPT)
//! and its frozen-layer variant (FFDAPT).
//!
//! The pipeline: [`config`] describes an experiment, [`corpus`] ingests or
//! synthesizes text, [`partition`] splits it across simulated clients,
//! [`schedule`] precomputes which layers each client freezes per round,
//! [`federation`] runs FedAvg rounds of the toy masked-language [`model`],
//! and [`metrics`] compares runs.

pub mod config;
pub mod corpus;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
