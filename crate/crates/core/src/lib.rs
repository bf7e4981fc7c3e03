//! Expected value of sample information across trial sample sizes.
//!
//! The estimator combines a one-off probabilistic sensitivity analysis, a
//! regression estimate of the conditional incremental net benefit, one
//! posterior update per simulated study, and a Bayesian fit of how the
//! preposterior variance grows with sample size.

pub mod conditional;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod moment;
pub mod nlreg;
pub mod oracle;
pub mod pipeline;
pub mod psa;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
