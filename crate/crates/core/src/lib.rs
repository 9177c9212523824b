//! Goodness-of-fit testing of discrete distributions under local
//! differential privacy.
//!
//! The crate contains the privacy mechanisms, the test statistics and the
//! two composite tests, closed-form rate calculators, generators of
//! alternatives and a Monte Carlo harness for estimating risks and
//! empirical separation radii.

pub mod alternatives;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod io;
pub mod privacy;
pub mod rates;
pub mod teststats;

pub use distributions::{FamilyKind, FamilySpec, ProbVector};
pub use error::{Error, Result};
pub use privacy::PrivacyParams;
pub use teststats::{Mode, Norm, SupportSet, TestReport};

/// Version string recorded in sweep manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
