//! Sensitivity analysis for treatment effects estimated from a single-arm
//! trial augmented with external controls, allowing for outcome
//! non-exchangeability and non-ignorable intercurrent events.

pub mod calibration;
pub mod data;
pub mod error;
pub mod features;
pub mod linalg;
pub mod nuisance;
pub mod estimators;
pub mod rng;
pub mod simulation;
pub mod tilting;

pub use estimators::{Estimate, Method, SensitivitySpec};
pub use data::{load_dataset, read_dataset, Dataset, Schema, Unit};
pub use error::{Error, Result, Stratum};
pub use features::FeatureMap;
pub use nuisance::{fit_nuisances, NuisanceConfig, NuisanceSet};
pub use tilting::GammaTriple;
