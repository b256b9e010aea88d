//! Result and option types shared by the FRI estimators.

use serde::{Deserialize, Serialize};

/// Which side of the surface a user sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subspace {
    Reflection,
    Transmission,
}

impl Subspace {
    pub fn label(self) -> &'static str {
        match self {
            Subspace::Reflection => "RS",
            Subspace::Transmission => "TS",
        }
    }
}

/// An angle estimate in degrees with its subspace label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledAngle {
    pub theta_deg: f64,
    pub subspace: Subspace,
}

/// Hankel order used when extracting the annihilating filter from a
/// denoised latent vector.
///
/// `ModelOrder` lifts with order K (one null direction), `LiftingOrder`
/// reuses the PGD lifting order, whose larger null space can add spurious
/// roots near the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AfOrder {
    #[default]
    ModelOrder,
    LiftingOrder,
}

/// Starting point for the PGD iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Init {
    Zero,
    /// `2 mu Phi^H y`.
    #[default]
    Backprojection,
}

/// Gradient step size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum StepSize {
    /// Midpoint of the admissible interval.
    #[default]
    Midpoint,
    Fixed(f64),
}

/// Output of one FRI recovery run.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub angles: Vec<LabeledAngle>,
    /// Annihilating filters, ascending powers: one for the stacked
    /// estimator, `[c_R, c_T]` for the paired one.
    pub af_coeffs: Vec<crate::CVector>,
    /// Denoised latent vectors: per-slot `r(t)` or `[x_R, x_T]`.
    pub denoised: Vec<crate::CVector>,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration `||b_i - b_{i-1}||`.
    pub residual_trace: Vec<f64>,
    /// Step size actually used.
    pub mu: f64,
    /// Number of SVDs performed and the summed `rows * cols * min(rows, cols)`.
    pub svd_calls: usize,
    pub svd_flops: f64,
    /// Set when the measurement model did not satisfy the estimator's
    /// structural assumption (e.g. non-uniform amplitudes given to M1).
    pub model_mismatch: bool,
}
