//! Limited-sampling prediction of tacrolimus exposure.
//!
//! The crate covers the full workflow: synthetic steady-state PK cohorts
//! with an analytic exposure oracle, reference AUC computation and
//! missing-concentration imputation, fixed- and flexible-time feature
//! construction, a from-scratch gradient-boosted tree regressor, exact
//! interventional Shapley attribution, a MAP Bayesian population-PK
//! comparator, and a grouped cross-validation / evaluation harness.

pub mod cohort;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbt;
pub mod io;
pub mod pk;
pub mod poppk;
pub mod runner;
pub mod shap;
pub mod simplex;

pub use error::{Error, Result};
