//! Joint device-activity detection, channel estimation and data detection
//! for grant-free massive MIMO access with a vector-valued bilinear GAMP
//! estimator, its state evolution and closed-form performance predictors.
//!
//! * [`model`] draws scenarios `Y = A X + W`.
//! * [`denoise`] holds the scalar-variance MMSE estimators.
//! * [`bigamp`] is the iteration engine.
//! * [`theory`] has the state evolution, convergence condition and predictors.
//! * [`metrics`] scores estimates against ground truth.
//! * [`harness`] runs seeded trials and sweeps and writes CSV.

pub mod bigamp;
pub mod denoise;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod theory;

#[cfg(test)]
mod invariants;
