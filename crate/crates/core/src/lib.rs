//! Individualized sound-pressure equalization for hearing devices.
//!
//! The crate designs FIR equalizers by regularized least squares, estimates
//! the relative transfer functions they need from individual or pooled
//! measurements, simulates the aided ear and scores the result against the
//! open ear. All numeric code is generic over [`Real`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`.

pub mod design;
pub mod error;
pub mod estimators;
pub mod experiment;
mod linalg;
pub mod metrics;
pub mod scalar;
pub mod signal;
pub mod simulation;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ImpulseResponse64 = signal::ImpulseResponse<f64>;
pub type ImpulseResponse32 = signal::ImpulseResponse<f32>;
pub type EqFilter64 = design::EqFilter<f64>;
pub type EqFilter32 = design::EqFilter<f32>;
pub type RelativeTransferEstimate64 = estimators::RelativeTransferEstimate<f64>;
pub type EarDataset64 = simulation::EarDataset<f64>;
pub type Cohort64 = simulation::Cohort<f64>;
