//! Federated learning simulation with OUI-guided client weighting.
//!
//! Clients train a small CNN locally and report their parameter delta, their
//! sample count and the Overfitting–Underfitting Indicator (OUI) of their
//! model on a fixed probe batch. The server fits a Beta law to the round's
//! OUI values and down-weights clients in either tail. FedAvg, FedProx and a
//! cosine-alignment baseline share the same harness.

pub mod aggregation;
pub mod beta;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oui;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
