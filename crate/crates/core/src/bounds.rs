//! Ziv-Zakai lower bound on the per-angle MSE (radians squared).
//!
//! Per side `i`, the bound blends an a-priori term weighted by `P_L` with a
//! Fisher-information term weighted by a smooth valley-filling factor:
//!
//! ```text
//! MSE_i >= 2 P_L K_i zeta^2 / ((K_i+1)^2 (K_i+2)) + w(u) Tr(F_i^-1) / K_i
//! ```
//!
//! `P_L` and `u` are evaluated with the side's own user count `K_i`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::model::UserScene;
use crate::recovery::Subspace;
use crate::{CMatrix, CVector};

/// Angular search range of the default `[-60, 60]` degree region.
pub const DEFAULT_ZETA: f64 = 2.0 * PI / 3.0;

/// `d a / d theta` (per radian): entry `m` is
/// `-j pi m cos(theta) e^{-j pi m sin(theta)}`, `theta` in degrees.
pub fn steering_derivative(theta_deg: f64, n: usize) -> CVector {
    let th = theta_deg.to_radians();
    let (s, c) = th.sin_cos();
    DVector::from_fn(n, |m, _| {
        let mf = m as f64;
        Complex64::new(0.0, -PI * mf * c) * Complex64::from_polar(1.0, -PI * mf * s)
    })
}

/// Whether the Fisher information is summed over slots or averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimNormalization {
    /// `(2 / sigma^2) Re(Psi_i^H Psi_i)`.
    #[default]
    Total,
    /// Additionally divided by `T_s`.
    PerSlot,
}

/// How `u` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UTildeForm {
    /// `K T_s (N eta / (2 + N eta))^2`.
    #[default]
    Simplified,
    /// Minimum of the simplified form and `K^2 zeta^2 / (8 1^T F^-1 1)`.
    Min,
}

/// Everything the bound needs for one scene.
#[derive(Debug, Clone, Copy)]
pub struct ZzbInputs<'a> {
    pub scene: &'a UserScene,
    /// Paired operator `Psi` (`2N x T_s`) of the batch.
    pub psi: &'a CMatrix,
    pub sigma_n2: f64,
    /// Per-user SNR (linear).
    pub eta: f64,
    pub zeta: f64,
    pub normalization: FimNormalization,
    pub u_form: UTildeForm,
}

impl<'a> ZzbInputs<'a> {
    /// Defaults: `eta = 1 / sigma^2`, `zeta = 2 pi / 3`, total FIM, simplified `u`.
    pub fn new(scene: &'a UserScene, psi: &'a CMatrix, sigma_n2: f64) -> Self {
        Self {
            scene,
            psi,
            sigma_n2,
            eta: 1.0 / sigma_n2,
            zeta: DEFAULT_ZETA,
            normalization: FimNormalization::Total,
            u_form: UTildeForm::Simplified,
        }
    }

    pub fn n(&self) -> usize {
        self.psi.nrows() / 2
    }

    pub fn t_s(&self) -> usize {
        self.psi.ncols()
    }

    fn side(&self, subspace: Subspace) -> (&[f64], &[Complex64]) {
        match subspace {
            Subspace::Reflection => (&self.scene.theta_rs, self.scene.gains_rs()),
            Subspace::Transmission => (&self.scene.theta_ts, self.scene.gains_ts()),
        }
    }
}

/// `K_i x K_i` Fisher information for the angles on one side.
pub fn fisher_information(inputs: &ZzbInputs, subspace: Subspace) -> Result<DMatrix<f64>> {
    let (thetas, gains) = inputs.side(subspace);
    if thetas.is_empty() {
        return Err(Error::Scene(format!("no users in {}", subspace.label())));
    }
    if !(inputs.sigma_n2 > 0.0) {
        return Err(Error::Config("Fisher information needs positive noise variance".into()));
    }
    let n = inputs.n();
    let offset = match subspace {
        Subspace::Reflection => 0,
        Subspace::Transmission => n,
    };
    // Row t of the side's sensing operator is column t of its half of Psi.
    let sensing = inputs.psi.rows(offset, n).transpose();
    let mut d = DMatrix::zeros(n, thetas.len());
    for (k, (&th, &s)) in thetas.iter().zip(gains).enumerate() {
        d.set_column(k, &(steering_derivative(th, n) * s));
    }
    let psi_i = sensing * d;
    let mut scale = 2.0 / inputs.sigma_n2;
    if inputs.normalization == FimNormalization::PerSlot {
        scale /= inputs.t_s() as f64;
    }
    Ok((psi_i.adjoint() * &psi_i).map(|z| z.re * scale))
}

/// Inverse (or pseudo-inverse when singular) of a symmetric FIM; the flag
/// reports singularity.
pub fn fim_inverse(f: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = f.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-12 * max;
    let mut singular = max == 0.0;
    let mut inv = DMatrix::zeros(f.nrows(), f.ncols());
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > tol {
            let v = eig.eigenvectors.column(i);
            inv += (v * v.transpose()) / lam;
        } else {
            singular = true;
        }
    }
    (inv, singular)
}

/// `Q(x) = P(Z > x)` for a standard normal `Z`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn snr_ratio(n: usize, eta: f64) -> f64 {
    let x = n as f64 * eta;
    if x.is_infinite() {
        1.0
    } else {
        x / (2.0 + x)
    }
}

/// `P_L = exp(K T_s [ln(4(1+N eta)/(2+N eta)^2) + r^2]) Q(sqrt(2 K T_s) r)`
/// with `r = N eta / (2 + N eta)`.
pub fn p_l(k: usize, t_s: usize, n: usize, eta: f64) -> f64 {
    let r = snr_ratio(n, eta);
    let u = r * r;
    let kt = (k * t_s) as f64;
    // 4(1+x)/(2+x)^2 = 1 - r^2, so the bracket is ln(1 - u) + u <= 0.
    let expo = if u >= 1.0 { f64::NEG_INFINITY } else { kt * ((-u).ln_1p() + u) };
    expo.exp() * q_function((2.0 * kt).sqrt() * r)
}

/// `K T_s (N eta / (2 + N eta))^2`.
pub fn u_tilde(k: usize, t_s: usize, n: usize, eta: f64) -> f64 {
    let r = snr_ratio(n, eta);
    (k * t_s) as f64 * r * r
}

/// `min(u_tilde, K^2 zeta^2 / (8 1^T F^-1 1))`.
pub fn u_tilde_min(k: usize, t_s: usize, n: usize, eta: f64, zeta: f64, f_inv: &DMatrix<f64>) -> f64 {
    let ones_quad: f64 = f_inv.iter().sum();
    let second = if ones_quad > 0.0 {
        (k * k) as f64 * zeta * zeta / (8.0 * ones_quad)
    } else {
        f64::INFINITY
    };
    u_tilde(k, t_s, n, eta).min(second)
}

/// Regularized lower incomplete gamma `P(3/2, u)`, in its closed form
/// `erf(sqrt u) - 2 sqrt(u / pi) e^{-u}`.
pub fn valley_weight(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u.is_infinite() {
        1.0
    } else {
        (erf(u.sqrt()) - 2.0 * (u / PI).sqrt() * (-u).exp()).clamp(0.0, 1.0)
    }
}

/// Bound value with its singular-FIM flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub mse: f64,
    pub singular_fim: bool,
}

/// Per-side bound (radians squared).
pub fn zzb_subspace(inputs: &ZzbInputs, subspace: Subspace) -> Result<BoundValue> {
    let (thetas, _) = inputs.side(subspace);
    let k_i = thetas.len();
    let (n, t_s) = (inputs.n(), inputs.t_s());
    let f = fisher_information(inputs, subspace)?;
    let (f_inv, singular) = fim_inverse(&f);
    let u = match inputs.u_form {
        UTildeForm::Simplified => u_tilde(k_i, t_s, n, inputs.eta),
        UTildeForm::Min => u_tilde_min(k_i, t_s, n, inputs.eta, inputs.zeta, &f_inv),
    };
    let kf = k_i as f64;
    let apb = 2.0 * p_l(k_i, t_s, n, inputs.eta) * kf * inputs.zeta.powi(2) / ((kf + 1.0).powi(2) * (kf + 2.0));
    let crb = f_inv.trace() / kf;
    Ok(BoundValue { mse: apb + valley_weight(u) * crb, singular_fim: singular })
}

/// `(K_R MSE_R + K_T MSE_T) / (K_R + K_T)`.
pub fn aggregate_full(k_r: usize, mse_r: f64, k_t: usize, mse_t: f64) -> Result<f64> {
    let k = k_r + k_t;
    if k == 0 {
        return Err(Error::Scene("no users".into()));
    }
    let part = |k_i: usize, m: f64| if k_i == 0 { 0.0 } else { k_i as f64 * m };
    Ok((part(k_r, mse_r) + part(k_t, mse_t)) / k as f64)
}

/// Full-space bound (radians squared); empty sides contribute nothing.
pub fn zzb_full(inputs: &ZzbInputs) -> Result<BoundValue> {
    let (k_r, k_t) = (inputs.scene.k_r(), inputs.scene.k_t());
    let side = |k_i: usize, s: Subspace| -> Result<BoundValue> {
        if k_i == 0 {
            Ok(BoundValue { mse: 0.0, singular_fim: false })
        } else {
            zzb_subspace(inputs, s)
        }
    };
    let r = side(k_r, Subspace::Reflection)?;
    let t = side(k_t, Subspace::Transmission)?;
    Ok(BoundValue {
        mse: aggregate_full(k_r, r.mse, k_t, t.mse)?,
        singular_fim: r.singular_fim || t.singular_fim,
    })
}
