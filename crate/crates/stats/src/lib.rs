//! Statistics for right-censored survival data.
//!
//! Times are in months. Model predictions enter through the [`SurvivalFn`]
//! trait so step curves, interpolated model outputs and Cox predictions can
//! all be scored by the same metrics.

mod bootstrap;
mod brier;
mod concordance;
mod cox;
mod curve;
mod error;
mod groups;
mod km;
mod record;
mod schoenfeld;

pub use bootstrap::{bootstrap_ci, resample_seed, BootstrapCi};
pub use brier::{brier, integrate_monthly, integrated_brier, monthly_grid, BrierScore, MIN_CENSOR_WEIGHT};
pub use concordance::{c_td, c_td_counts, Concordance};
pub use cox::{
    fit_coxph, log_partial_likelihood, partial_likelihood, schoenfeld_residuals, CoxFit, CoxOptions,
    PartialLikelihood, TieMethod,
};
pub use curve::{SurvCurve, SurvivalFn};
pub use error::StatsError;
pub use groups::{dichotomize, RiskGroup};
pub use km::{censoring_km, kaplan_meier, logrank, risk_table, RiskRow, TestResult};
pub use record::{event_count, EventRecord};
pub use schoenfeld::{average_ranks, schoenfeld_statistics, schoenfeld_test, TimeTransform};
