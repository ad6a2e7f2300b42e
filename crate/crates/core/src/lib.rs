//! Numerical laboratory for estimation-error deformations of quantum
//! mechanics: nonlinear Schrödinger dynamics, generalized uncertainty
//! relations and estimation-independence classification.

pub mod battery;
pub mod dynamics;
pub mod error;
pub mod fields;
pub mod format;
pub mod ensemble;
pub mod functional;
pub mod independence;
pub mod scenario;
pub mod uncertainty;

pub use error::{Error, Result};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
