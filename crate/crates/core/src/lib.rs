//! Bayesian optimization for inverse optimization.
//!
//! Given observed decisions of a parameterized optimization model, estimate
//! the parameters by minimizing the decision loss with a Gaussian-process
//! surrogate and a lower-confidence-bound acquisition, then assess
//! identifiability with profile likelihoods built from the surrogate.
//!
//! Forward problems ([`fop`]) include flux balance analysis, standard pooling
//! and a small generalized pooling family, each with its own global solver.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod gp;
mod optim;
pub mod acquisition;
pub mod bo;
pub mod datagen;
pub mod dataset;
pub mod loss;
pub mod profile;
pub mod fop;
pub mod rng;

pub use domain::ParameterDomain;
pub use error::{Error, Result};
