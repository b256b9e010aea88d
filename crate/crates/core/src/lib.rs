//! Gridless full-space direction-of-arrival estimation for STAR-RIS-assisted
//! uplinks.
//!
//! A single-RF-chain base station observes one complex scalar per metasurface
//! slot. Users on both sides of the surface (reflection space and
//! transmission space) are recovered by denoising the latent line-spectrum
//! vectors with a proximal-gradient / alternating-projection solver on a
//! structured Hankel lifting, then rooting an annihilating filter.
//!
//! Modules:
//! - [`linalg`]: Hankel liftings, anti-diagonal averaging, rank truncation,
//!   null vectors, polynomial rooting.
//! - [`model`]: metasurface control sequences, steering vectors, sensing
//!   operators and measurement synthesis.
//! - [`uniform`]: stacked-lifting estimator for element-wise uniform surfaces.
//! - [`paired`]: paired-lifting estimator for nonuniform energy splitting.
//! - [`baselines`]: grid-based FFT scan, OMP and SBL.
//! - [`bounds`]: Ziv-Zakai bound and Fisher information.
//! - [`experiments`]: Monte Carlo harness and CSV/JSON output.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bounds;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod paired;
pub mod uniform;

mod recovery;

pub use error::{Error, Result};
pub use recovery::{AfOrder, Init, LabeledAngle, RecoveryResult, StepSize, Subspace};

pub use num_complex::Complex64;

/// Dense complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
