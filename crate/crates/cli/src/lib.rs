//! Experiment driver for sparse signature-grid DeepCNets: config files,
//! training and evaluation runs, inspection output and self-checks.

pub mod config;
pub mod inspect;
pub mod train;
pub mod verify;
