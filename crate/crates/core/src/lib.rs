//! Numerical laboratory for Gaussian multiplicative chaos with the strictly
//! logarithmic kernel ln(T/|x − y|) on Euclidean balls.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod bounds;
pub mod config;
pub mod error;
pub mod field;
pub mod gmc;
pub mod grid;
pub mod laplace;
pub mod params;
pub mod potential;
pub mod quad;
pub mod rng;
pub mod smalldev;
pub mod stats;

pub use acceptance::{run_suite, CriterionOutcome, SuiteOptions, SuiteSummary};
pub use config::{RunConfig, Scale};
pub use error::{GmcError, Result};
pub use field::{CovarianceFactor, FieldSample};
pub use gmc::{constants, create_bank, GmcConstants, SampleBank};
pub use grid::{build_grid, Grid};
pub use params::ModelParams;
pub use potential::PdReport;
