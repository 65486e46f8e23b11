//! Datasets, metrics, persistence, configuration, and experiment drivers.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod report;
