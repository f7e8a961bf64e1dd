//! Adversarial robustness analysis for medical forecasting under selective
//! outlier exposure.
//!
//! The crate simulates adversarial manipulation against a forecasting
//! model, quantifies per-patient risk, groups patients by risk-profile
//! similarity, and trains/evaluates anomaly detectors on patient subsets.

pub mod attack;
pub mod cluster;
pub mod cohort;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod risk;
pub mod seed;
pub mod stats;
pub mod strategy;
pub mod victim;

pub use error::{Error, Result};
