//! Stacked-lifting FRI estimator (M1) for element-wise uniform surfaces.
//!
//! In the uniform regime every slot observes `y(t) = phi_t . r(t)` with
//! `r(t) = x_R + g(t) x_T`, a sum of `K` geometric sequences whose per-slot
//! amplitudes are either constant (RS users) or scaled by the known `g(t)`
//! (TS users). The solver keeps `r(t)` in the span of `{1, g(t)}` over
//! slots: with an orthonormal basis `Q` of that span, `r(t) = sum_l Q[t,l] z_l`,
//! and the iteration runs on the latents `z_l`. Because `Q` has orthonormal
//! columns, the stacked lifting of all `r(t)` and that of the `z_l` share
//! their singular values and right singular vectors, and `||delta r|| =
//! ||delta z||`.
//!
//! Each iteration takes a gradient step on `||y - A z||^2`, truncates the
//! stacked lifting `[H(z_1); H(z_2)]` to rank `K` and averages the
//! anti-diagonals of each block.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    self, polynomial_roots, rank_truncate, roots_to_angles,
    stacked_hankel_lift, LiftKind, LiftShape, NullVector,
};
use crate::model::{steering_matrix, MeasurementBatch, UniformOperator};
use crate::recovery::{AfOrder, Init, LabeledAngle, RecoveryResult, StepSize, Subspace};
use crate::{CMatrix, CVector};

/// Solver settings for the stacked estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub alpha: usize,
    pub k: usize,
    pub mu: StepSize,
    pub i_max: usize,
    pub eps: f64,
    pub init: Init,
    pub af_order: AfOrder,
}

impl PgdConfig {
    /// Defaults for an `n`-element surface: `alpha = n / 2`, midpoint step,
    /// `eps = 1e-7`, 200 iterations.
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            alpha: n / 2,
            k,
            mu: StepSize::Midpoint,
            i_max: 200,
            eps: 1e-7,
            init: Init::Backprojection,
            af_order: AfOrder::ModelOrder,
        }
    }

    /// Checks `1 <= alpha < n` and `K <= min(alpha + 1, n - alpha)`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.alpha == 0 || self.alpha >= n {
            return Err(Error::LiftOrder { alpha: self.alpha, n });
        }
        let limit = (self.alpha + 1).min(n - self.alpha);
        if self.k == 0 || self.k > limit {
            return Err(Error::Infeasible {
                k: self.k,
                reason: format!("stacked lifting with alpha={} on n={n} admits K <= {limit}", self.alpha),
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

/// `((1 - 1/sqrt(alpha+1)) / (2 lambda), (1 + 1/sqrt(alpha+1)) / (2 lambda))`.
pub fn step_interval(lambda_max: f64, alpha: usize) -> Result<(f64, f64)> {
    if !(lambda_max > 0.0) {
        return Err(Error::ZeroOperator);
    }
    let r = 1.0 / ((alpha + 1) as f64).sqrt();
    Ok(((1.0 - r) / (2.0 * lambda_max), (1.0 + r) / (2.0 * lambda_max)))
}

/// Step interval for the block-diagonal operator whose slot rows are the
/// rows of `rows`; its largest eigenvalue is `max_t ||row_t||^2`.
pub fn step_size_bounds(rows: &CMatrix, alpha: usize) -> Result<(f64, f64)> {
    let lambda = rows
        .row_iter()
        .map(|r| r.norm_squared())
        .fold(0.0, f64::max);
    step_interval(lambda, alpha)
}

/// Orthonormal basis of `span{1, g}` in `C^{T_s}` (one or two columns).
pub fn slot_basis(g: &CVector) -> CMatrix {
    let t_s = g.len();
    let w = DMatrix::from_fn(t_s, 2, |t, l| if l == 0 { Complex64::new(1.0, 0.0) } else { g[t] });
    let svd = w.svd(true, false);
    let u = svd.u.expect("requested U");
    let s = &svd.singular_values;
    let (i0, i1) = if s[0] >= s[1] { (0, 1) } else { (1, 0) };
    if s[i1] > 1e-9 * s[i0] {
        DMatrix::from_fn(t_s, 2, |t, l| u[(t, if l == 0 { i0 } else { i1 })])
    } else {
        u.columns(i0, 1).into_owned()
    }
}

/// Operator acting on the stacked latents `[z_1; ...; z_r]`:
/// `A[t, l n + m] = Q[t, l] phi_t[m]`.
pub fn latent_operator(op: &UniformOperator, basis: &CMatrix) -> CMatrix {
    let n = op.n();
    DMatrix::from_fn(op.t_s(), basis.ncols() * n, |t, c| basis[(t, c / n)] * op.rows[(t, c % n)])
}

/// Output of [`pgd_denoise`].
#[derive(Debug, Clone)]
pub struct UniformDenoised {
    /// Recovered `r(t)` for every slot.
    pub slots: Vec<CVector>,
    /// Latents `z_l` with `r(t) = sum_l basis[t, l] z_l`.
    pub latents: Vec<CVector>,
    pub basis: CMatrix,
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

/// Runs the projected gradient iteration on the batch's uniform operator.
pub fn pgd_denoise(batch: &MeasurementBatch, cfg: &PgdConfig) -> Result<UniformDenoised> {
    let op = &batch.operator_uniform;
    let n = op.n();
    cfg.validate(n)?;
    if batch.y.len() != op.t_s() {
        return Err(Error::Dimension(format!(
            "{} observations for {} slots",
            batch.y.len(),
            op.t_s()
        )));
    }
    let basis = slot_basis(&op.g);
    let r = basis.ncols();
    let a = latent_operator(op, &basis);
    // Gradient through the r n x r n Gram matrix instead of the t_s rows.
    let gram = linalg::gram(&a);
    let mu = match cfg.mu {
        StepSize::Fixed(mu) => mu,
        StepSize::Midpoint => {
            let (lo, hi) = step_interval(linalg::hermitian_lambda_max(&gram), cfg.alpha)?;
            0.5 * (lo + hi)
        }
    };
    let two_mu = Complex64::from(2.0 * mu);
    let back = a.ad_mul(&batch.y);
    let mut z: CVector = match cfg.init {
        Init::Zero => DVector::zeros(r * n),
        Init::Backprojection => &back * two_mu,
    };
    let shape = LiftShape::new(n, cfg.alpha, r, LiftKind::Stacked)?;
    let (lift_rows, lift_cols) = (shape.rows(), shape.cols());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut svd_calls = 0;
    for _ in 0..cfg.i_max {
        let d = &z + (&back - &gram * &z) * two_mu;
        let low = rank_truncate(&linalg::lift_concatenated(&d, &shape)?, cfg.k)?;
        svd_calls += 1;
        let nz = linalg::average_concatenated(&low, &shape)?;
        let step = (&nz - &z).norm();
        z = nz;
        trace.push(step);
        if step <= cfg.eps {
            converged = true;
            break;
        }
    }
    let latents = split(&z, r, n);
    let slots = (0..op.t_s())
        .map(|t| {
            let mut v = DVector::zeros(n);
            for (l, zl) in latents.iter().enumerate() {
                v += zl * basis[(t, l)];
            }
            v
        })
        .collect();
    Ok(UniformDenoised {
        slots,
        latents,
        basis,
        iterations: trace.len(),
        converged,
        residual_trace: trace,
        mu,
        svd_calls,
        svd_flops: svd_calls as f64 * svd_cost(lift_rows, lift_cols),
    })
}

fn split(v: &CVector, r: usize, n: usize) -> Vec<CVector> {
    (0..r).map(|l| v.rows(l * n, n).into_owned()).collect()
}

/// Annihilating filter of the denoised slot vectors: the smallest right
/// singular vector of their stacked order-`order` lifting.
pub fn extract_af(slots: &[CVector], order: usize) -> Result<NullVector> {
    linalg::smallest_right_singular_vector(&stacked_hankel_lift(slots, order)?)
}

/// `|sum_m c_m e^{-j pi m sin(theta)}|` on `grid_deg`, scaled to peak 1.
pub fn af_spectrum(coeffs: &CVector, grid_deg: &[f64]) -> Vec<f64> {
    let mut vals: Vec<f64> = grid_deg
        .iter()
        .map(|&th| {
            let z = Complex64::from_polar(1.0, -std::f64::consts::PI * th.to_radians().sin());
            // Horner from the highest power.
            coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c).norm()
        })
        .collect();
    let max = vals.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        vals.iter_mut().for_each(|v| *v /= max);
    }
    vals
}

/// Local minima of a sampled curve, as grid values.
pub fn local_minima(grid: &[f64], values: &[f64]) -> Vec<f64> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] < values[i - 1] && values[i] <= values[i + 1])
        .map(|i| grid[i])
        .collect()
}

/// Labels each angle RS or TS from its recovered amplitude sequence
/// across slots: TS users follow `g(t)`, RS users stay constant.
fn label_angles(
    angles: &[f64],
    latents: &[CVector],
    basis: &CMatrix,
    g: &CVector,
    n: usize,
) -> Vec<LabeledAngle> {
    let v = steering_matrix(angles, n);
    let pinv = match v.clone().pseudo_inverse(1e-12) {
        Ok(p) => p,
        Err(_) => {
            return angles
                .iter()
                .map(|&theta_deg| LabeledAngle { theta_deg, subspace: Subspace::Reflection })
                .collect()
        }
    };
    // w[l] = V^+ z_l; s_k(t) = sum_l basis[t, l] w[l][k].
    let w: Vec<CVector> = latents.iter().map(|z| &pinv * z).collect();
    let t_s = basis.nrows();
    let g_norm = g.norm();
    angles
        .iter()
        .enumerate()
        .map(|(k, &theta_deg)| {
            let s: Vec<Complex64> = (0..t_s)
                .map(|t| (0..w.len()).map(|l| basis[(t, l)] * w[l][k]).sum())
                .collect();
            let s_norm = s.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let corr_one = s.iter().sum::<Complex64>().norm() / (t_s as f64).sqrt();
            let corr_g = s.iter().zip(g.iter()).map(|(x, gt)| gt.conj() * x).sum::<Complex64>().norm()
                / g_norm.max(f64::MIN_POSITIVE);
            let subspace = if s_norm > 0.0 && corr_g > corr_one {
                Subspace::Transmission
            } else {
                Subspace::Reflection
            };
            LabeledAngle { theta_deg, subspace }
        })
        .collect()
}

/// Denoise, extract the filter, root it and label the roots.
pub fn estimate_angles_uniform(batch: &MeasurementBatch, cfg: &PgdConfig) -> Result<RecoveryResult> {
    let den = pgd_denoise(batch, cfg)?;
    let n = batch.operator_uniform.n();
    let order = match cfg.af_order {
        AfOrder::ModelOrder => cfg.k,
        AfOrder::LiftingOrder => cfg.alpha,
    };
    if order >= n {
        return Err(Error::LiftOrder { alpha: order, n });
    }
    // Same right singular vectors as the lifting of all slots (orthonormal basis).
    let af = extract_af(&den.latents, order)?;
    let roots = polynomial_roots(af.vector.as_slice())?;
    let angles = roots_to_angles(&roots, cfg.k)?;
    let labeled = label_angles(&angles, &den.latents, &den.basis, &batch.operator_uniform.g, n);
    let h_rows = den.basis.ncols() * (n - order);
    Ok(RecoveryResult {
        angles: labeled,
        af_coeffs: vec![af.vector],
        denoised: den.slots,
        iterations: den.iterations,
        converged: den.converged,
        residual_trace: den.residual_trace,
        mu: den.mu,
        svd_calls: den.svd_calls + 1,
        svd_flops: den.svd_flops + svd_cost(h_rows.max(order + 1), order + 1),
        model_mismatch: batch.operator_uniform.mismatch,
    })
}
