//! Configuration, orchestration and data export for the stochastic
//! Kuramoto–Sivashinsky experiments.

pub mod config;
pub mod experiments;
pub mod output;
