//! Counterfactual-augmented double machine learning for firm-year panels.

pub mod baseline;
pub mod cli;
pub mod dml;
pub mod error;
pub mod index;
pub mod learners;
pub mod nn;
pub mod panel;
pub mod report;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};
