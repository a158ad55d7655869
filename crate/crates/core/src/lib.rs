pub mod assr;
pub mod config;
pub mod error;
pub mod estimators;
pub mod forest;
pub mod ground_truth;
pub mod harness;
pub mod par;
pub mod samplers;
pub mod scenario;
pub mod sim;
pub mod stopping;
pub mod svg;

pub use error::{Error, Result};
