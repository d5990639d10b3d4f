//! Simulation and diagnostics for Horvitz–Thompson estimation of the average
//! direct effect under anonymous network interference.
//!
//! The crate covers limit kernels and cut-norm diagnostics, exposure graphs
//! (deterministic and kernel-sampled), polynomial potential outcomes, the
//! estimator with its exact estimand and linearization, the limiting variance,
//! coupling discrepancies, and a deterministic parallel replication harness.

pub mod asymptotics;
pub mod cutnorm;
pub mod error;
pub mod estimation;
pub mod graphs;
pub mod harness;
pub mod kernels;
pub mod matrix;
pub mod outcomes;
pub mod rng;

pub use cutnorm::{CutNormMethod, CutNormResult};
pub use error::{Error, Result};
pub use estimation::{EstimateRecord, Experiment, TreatmentVector};
pub use graphs::{ExposureGraph, Permutation};
pub use harness::{ExperimentConfig, ExperimentDesign, RunResult};
pub use kernels::{Kernel, ScaleSequence};
pub use matrix::SquareMatrix;
pub use outcomes::{OutcomeFunction, OutcomeProfile, OutcomeVector};
