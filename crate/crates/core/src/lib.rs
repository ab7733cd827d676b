//! Simulation of quantum state tomography with an unknown detector.
//!
//! Two strategies are compared under Poissonian counting noise:
//!
//! * detector-assisted QST (DQST): estimate the design matrix from probe
//!   patterns, `A_s = F R^+`, then invert it, `r_s = A_s^+ f`;
//! * data-pattern tomography (DPT): fit the data directly by the probe
//!   patterns, `r_p = R F^+ f`, never estimating the detector.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the usual `f64` instantiation.

// `!(x > y)` is used to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod matlin;
pub mod quantum;
pub mod scalar;
pub mod simulation;

pub use error::{Result, TomoError};
pub use scalar::{Complex, Real};

pub type RealMatrix = matlin::RealMatrix<f64>;
pub type ComplexMatrix = matlin::ComplexMatrix<f64>;
pub type GeneratorBasis = quantum::GeneratorBasis<f64>;
pub type DensityMatrix = quantum::DensityMatrix<f64>;
pub type Ket = quantum::Ket<f64>;
pub type Povm = quantum::Povm<f64>;
pub type BlochVector = quantum::BlochVector<f64>;
pub type DesignMatrix = estimators::DesignMatrix<f64>;
pub type ProbeMatrix = estimators::ProbeMatrix<f64>;
pub type PatternMatrix = estimators::PatternMatrix<f64>;
pub type FisherMatrix = estimators::FisherMatrix<f64>;
pub type TrialSetup = simulation::TrialSetup<f64>;
pub type TrialOutcome = simulation::TrialOutcome<f64>;
pub type MonteCarloConfig = simulation::MonteCarloConfig<f64>;

pub type DensityMatrixF32 = quantum::DensityMatrix<f32>;
pub type PovmF32 = quantum::Povm<f32>;
pub type DesignMatrixF32 = estimators::DesignMatrix<f32>;
