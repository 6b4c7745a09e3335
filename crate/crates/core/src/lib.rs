//! Multi-omic feature selection by ant colony optimisation and patient
//! classification with heterogeneous graph attention networks.

pub mod aco;
pub mod config;
pub mod autodiff;
pub mod biomarker;
pub mod dataset;
pub mod error;
pub mod gat;
pub mod fusion;
pub mod hetero;
pub mod metrics;
pub mod pipeline;
pub mod similarity;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
