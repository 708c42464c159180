//! Temporal image forensics toolkit.
//!
//! Simulates sensor ageing (in-field pixel defects, sensor dust, PRNU drift)
//! with ground truth, implements defect-based and PRNU-based image age
//! approximation, and audits classifiers for content bias with average images.

pub mod bias;
pub mod detect;
pub mod error;
pub mod estimators;
pub mod imaging;
pub mod manifest;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
