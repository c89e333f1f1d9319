//! Regularization-free Wirtinger flow for blind demixing from bilinear
//! measurements.
//!
//! The crate generates synthetic instances ([`problem`]), evaluates the
//! least-squares objective and its Wirtinger derivatives ([`objective`]),
//! runs spectral initialization plus scaled gradient descent ([`solver`]),
//! measures iterates against the ground truth ([`metrics`]), and checks the
//! local-geometry claims numerically at desk scale ([`verify`]).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod problem;
pub mod rng;
pub mod solver;
pub mod verify;

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

pub use error::{DemixError, Result};
pub use metrics::Alignment;
pub use objective::{DemixState, HessianBlocks};
pub use problem::{Dimensions, GroundTruth, ProblemInstance, SourcePair};
pub use solver::{RunOutput, SolverConfig, TrajectoryRecord};
