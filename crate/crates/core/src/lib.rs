//! Excess mortality hazard regression for population-based cancer cohorts.
//!
//! The observed hazard of a patient is split into a background part, read
//! from a stratified life table, and an excess part modelled with a general
//! hazard structure over an Exponentiated Weibull baseline. When the life
//! table lacks relevant strata the background part can be corrected with a
//! single multiplicative parameter (M2) or a Gamma frailty (M3); M4 is the
//! AIC choice among M1-M3.
//!
//! Modules, bottom up: [`lifetable`], [`distributions`], [`gh`],
//! [`params`], [`likelihood`], [`estimation`], [`simulation`], [`io`].

pub mod distributions;
pub mod estimation;
pub mod gh;
pub mod io;
pub mod lifetable;
pub mod likelihood;
pub mod optim;
pub mod params;
pub mod simulation;

pub use distributions::{EwParams, FrailtyLaw, GammaFrailtyParams, LogNormalFrailtyParams};
pub use estimation::{fit, fit_models, select_m4, FitConfig, FitResult};
pub use gh::GhParams;
pub use lifetable::{LexisPosition, LifeTable, YearPolicy};
pub use likelihood::{loglik, PatientRecord, PreparedCohort};
pub use params::{Correction, Model, ModelParams};
