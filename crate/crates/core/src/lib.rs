//! Bond prices driven by a Brownian sheet, with a maturity-dependent market
//! price of risk and the space-time change of measure that removes it.
//!
//! The pipeline is: sample a sheet ([`sheet`]), turn it into a random field
//! over maturities ([`field`]), integrate the risk premium η into λ and the
//! Girsanov kernel g ([`mpr`]), weigh each path by its Radon–Nikodym density
//! ([`measure`]), and simulate discount bonds ([`bonds`]). [`verify`] holds
//! the estimators used to check the result; [`pipeline`] wires it all to a
//! [`Scenario`].

pub mod bonds;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod grid;
pub mod measure;
pub mod mpr;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sheet;
pub mod verify;
pub mod warp;

pub use bonds::{
    discounted_surface, risk_neutral_check, simulate_bonds, BondSurface, InitialCurve,
    MarketParams, MartingaleReport, ShortRate, Volatility,
};
pub use ensemble::{run_ensemble, EnsemblePlan, PathTask};
pub use error::{Error, Result};
pub use field::{build_field, FieldPath};
pub use grid::GridSpec;
pub use measure::{
    field_covariance, log_rn_density, shift_field, weighted_sheet_test, NodePair, PathWeight,
    SheetTestReport, ShiftedField,
};
pub use mpr::{
    check_c2_bound, check_drift_identity, check_l2_identity, evaluate_conditions, girsanov_kernel,
    lambda_from_eta, ConditionReport, EtaSpec, EtaSurface, KernelGrid, MprSurface,
};
pub use pipeline::{ConditionsOutcome, Pipeline, VerifyOutcome};
pub use rng::PathStream;
pub use scenario::Scenario;
pub use sheet::{sample_sheet, sample_sheet_on_warped_grid, SheetPath};
pub use verify::{
    refinement_order, weighted_moments, CheckStatus, Estimate, RefinementStudy, StatPolicy,
    VerificationReport,
};
pub use warp::{FieldKind, MaturityWarp};
