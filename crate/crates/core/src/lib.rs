//! Diagnosis, feedback and adaptation for pixel policies under distribution shift.

pub mod adapt;
pub mod concept;
pub mod counterfactual;
pub mod env;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod policy;

pub use error::{DfaError, Result};
