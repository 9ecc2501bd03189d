//! Simulation and local-regularity analysis of deformed multifractional
//! Brownian sheets: exact sampling, directional Hölder exponent and constant
//! estimation, anisotropy detection, deformation recovery and
//! regularity-adaptive Nadaraya-Watson reconstruction.

// `!(x > 0.0)` guards deliberately reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod deformation;
pub mod error;
pub mod experiments;
pub mod field;
pub mod mfbs;
pub mod par;
pub mod regularity;
pub mod rng;
pub mod smoothing;
pub mod spatial;

pub use approx::{approx_value, ApproxKind, ApproxPolicy};
pub use deformation::{a1_hat, a2_hat, DeformationAnchor, DeformationEstimate};
pub use error::{Error, Result};
pub use experiments::{run_experiment, run_experiment_with, ExperimentConfig, ResultTable, Scenario};
pub use field::{
    interior_margin, validate_dataset, Deformation, DesignKind, DesignLaw, Domain, FieldSpec, NoiseLaw, Point,
    ScalarField, Sheet, SurfaceDataset, TrueRegularity, ValidationReport,
};
pub use mfbs::{
    build_covariance_factor, c_norm, d_factor, d_factor_scan, generate_dataset, generate_dataset_with, mfbs_covariance,
    sample_sheets, CovarianceFactor, SimConfig,
};
pub use par::Exec;
pub use regularity::{estimate_batch, estimate_regularity, RegParams, RegularityEstimate};
pub use smoothing::{adaptive_predict, nw_predict, optimal_bandwidths, rice_sigma_hat, BandwidthPlan, KernelSpec};
