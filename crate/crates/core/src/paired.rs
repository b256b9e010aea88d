//! Paired-lifting FRI estimator (M2) for nonuniform energy splitting.
//!
//! The observations are `y = Psi^T [x_R; x_T] + n`, where the static fields
//! `x_R` and `x_T` are each a sum of geometric sequences. The solver
//! alternates a gradient step with a rank-`K` truncation of
//! `[H(x_R), H(x_T)]`, then roots one annihilating filter per side.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    average_concatenated, gram, hankel_lift, hermitian_lambda_max, lift_concatenated,
    polynomial_roots, rank_truncate, roots_to_angles, smallest_right_singular_vector, LiftKind,
    LiftShape,
};
use crate::model::MeasurementBatch;
use crate::recovery::{AfOrder, Init, LabeledAngle, RecoveryResult, StepSize, Subspace};
use crate::uniform::step_interval;
use crate::{CMatrix, CVector};

/// Solver settings for the paired estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedPgdConfig {
    pub alpha: usize,
    pub k_r: usize,
    pub k_t: usize,
    pub mu: StepSize,
    pub i_max: usize,
    pub eps: f64,
    pub init: Init,
    pub af_order: AfOrder,
}

impl PairedPgdConfig {
    /// Defaults for an `n`-element surface: `alpha = n / 3`, midpoint step,
    /// `eps = 1e-7`, 200 iterations.
    pub fn new(n: usize, k_r: usize, k_t: usize) -> Self {
        Self {
            alpha: n / 3,
            k_r,
            k_t,
            mu: StepSize::Midpoint,
            i_max: 200,
            eps: 1e-7,
            init: Init::Backprojection,
            af_order: AfOrder::ModelOrder,
        }
    }

    pub fn k(&self) -> usize {
        self.k_r + self.k_t
    }

    /// Checks `1 <= alpha < n` and `K <= min(2 (alpha + 1), n - alpha)`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.alpha == 0 || self.alpha >= n {
            return Err(Error::LiftOrder { alpha: self.alpha, n });
        }
        let limit = (2 * (self.alpha + 1)).min(n - self.alpha);
        let k = self.k();
        if k == 0 || k > limit {
            return Err(Error::Infeasible {
                k,
                reason: format!("paired lifting with alpha={} on n={n} admits K <= {limit}", self.alpha),
            });
        }
        if !(self.eps > 0.0) || self.i_max == 0 {
            return Err(Error::Config("need eps > 0 and i_max >= 1".into()));
        }
        if let StepSize::Fixed(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Config(format!("step size {mu} must be positive")));
            }
        }
        Ok(())
    }
}

/// Step interval with `lambda_max = sigma_max(Psi)^2`.
pub fn paired_step_size_bounds(psi: &CMatrix, alpha: usize) -> Result<(f64, f64)> {
    step_interval(hermitian_lambda_max(&psi_gram(psi)), alpha)
}

/// `conj(Psi) Psi^T`, the normal matrix of `b -> Psi^T b`.
fn psi_gram(psi: &CMatrix) -> CMatrix {
    gram(&psi.transpose())
}

/// Output of [`pgd_denoise_paired`].
#[derive(Debug, Clone)]
pub struct PairedDenoised {
    pub x_r: CVector,
    pub x_t: CVector,
    pub iterations: usize,
    pub converged: bool,
    pub residual_trace: Vec<f64>,
    pub mu: f64,
    pub svd_calls: usize,
    pub svd_flops: f64,
}

fn svd_cost(rows: usize, cols: usize) -> f64 {
    (rows * cols * rows.min(cols)) as f64
}

pub fn pgd_denoise_paired(batch: &MeasurementBatch, cfg: &PairedPgdConfig) -> Result<PairedDenoised> {
    let psi = &batch.operator_paired;
    if psi.nrows() % 2 != 0 || psi.ncols() != batch.y.len() {
        return Err(Error::Dimension(format!(
            "paired operator {}x{} vs {} observations",
            psi.nrows(),
            psi.ncols(),
            batch.y.len()
        )));
    }
    let n = psi.nrows() / 2;
    cfg.validate(n)?;
    // Gradient through the 2n x 2n Gram matrix instead of the t_s columns.
    let gram = psi_gram(psi);
    let mu = match cfg.mu {
        StepSize::Fixed(mu) => mu,
        StepSize::Midpoint => {
            let (lo, hi) = step_interval(hermitian_lambda_max(&gram), cfg.alpha)?;
            0.5 * (lo + hi)
        }
    };
    let two_mu = Complex64::from(2.0 * mu);
    let back = psi.map(|z| z.conj()) * &batch.y;
    let mut b: CVector = match cfg.init {
        Init::Zero => DVector::zeros(2 * n),
        Init::Backprojection => &back * two_mu,
    };
    let shape = LiftShape::new(n, cfg.alpha, 1, LiftKind::Paired)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut svd_calls = 0;
    for _ in 0..cfg.i_max {
        let d = &b + (&back - &gram * &b) * two_mu;
        let low = rank_truncate(&lift_concatenated(&d, &shape)?, cfg.k())?;
        svd_calls += 1;
        let nb = average_concatenated(&low, &shape)?;
        let step = (&nb - &b).norm();
        b = nb;
        trace.push(step);
        if step <= cfg.eps {
            converged = true;
            break;
        }
    }
    Ok(PairedDenoised {
        x_r: b.rows(0, n).into_owned(),
        x_t: b.rows(n, n).into_owned(),
        iterations: trace.len(),
        converged,
        residual_trace: trace,
        mu,
        svd_calls,
        svd_flops: svd_calls as f64 * svd_cost(n - cfg.alpha, 2 * (cfg.alpha + 1)),
    })
}

/// Filter, roots and angles for one side. Returns `None` for an empty side.
fn side_angles(x: &CVector, k_i: usize, order: usize) -> Result<Option<(CVector, Vec<f64>)>> {
    if k_i == 0 {
        return Ok(None);
    }
    let af = smallest_right_singular_vector(&hankel_lift(x, order)?)?;
    let roots = polynomial_roots(af.vector.as_slice())?;
    let angles = roots_to_angles(&roots, k_i)?;
    Ok(Some((af.vector, angles)))
}

pub fn estimate_angles_nonuniform(batch: &MeasurementBatch, cfg: &PairedPgdConfig) -> Result<RecoveryResult> {
    let den = pgd_denoise_paired(batch, cfg)?;
    let n = den.x_r.len();
    let order_for = |k_i: usize| match cfg.af_order {
        AfOrder::ModelOrder => k_i,
        AfOrder::LiftingOrder => cfg.alpha,
    };
    let mut angles = Vec::with_capacity(cfg.k());
    let mut af_coeffs = Vec::with_capacity(2);
    let mut extra_svds = 0;
    let mut extra_flops = 0.0;
    for (x, k_i, side) in [
        (&den.x_r, cfg.k_r, Subspace::Reflection),
        (&den.x_t, cfg.k_t, Subspace::Transmission),
    ] {
        let order = order_for(k_i).max(1);
        if let Some((c, th)) = side_angles(x, k_i, order)? {
            extra_svds += 1;
            extra_flops += svd_cost((n - order).max(order + 1), order + 1);
            af_coeffs.push(c);
            angles.extend(th.into_iter().map(|theta_deg| LabeledAngle { theta_deg, subspace: side }));
        } else {
            af_coeffs.push(DVector::zeros(0));
        }
    }
    Ok(RecoveryResult {
        angles,
        af_coeffs,
        denoised: vec![den.x_r, den.x_t],
        iterations: den.iterations,
        converged: den.converged,
        residual_trace: den.residual_trace,
        mu: den.mu,
        svd_calls: den.svd_calls + extra_svds,
        svd_flops: den.svd_flops + extra_flops,
        model_mismatch: false,
    })
}
