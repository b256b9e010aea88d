//! Metasurface control sequences, user scenes, sensing operators and
//! measurement synthesis.
//!
//! Each element `n` in slot `t` has reflection coefficient
//! `beta_R e^{j phi_R}` and transmission coefficient
//! `sign * j * sqrt(1 - beta_R^2) e^{j phi_R}`, so the two differ in phase by
//! `+-pi/2` and split the incident energy. The base station observes
//!
//! ```text
//! y(t) = h^T [Phi_R(t) x_R + Phi_T(t) x_T] + n(t)
//! ```
//!
//! with `x_i = A_i s_i` the fields impinging from each side.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Amplitude regime of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Scenario 1: `beta_R = beta_T = 1/sqrt(2)` on every element.
    #[serde(rename = "uniform")]
    UniformEs,
    /// Scenario 2: `beta_R^2` drawn uniformly from `[0.2, 0.8]` per element.
    #[serde(rename = "nonuniform")]
    NonuniformEs,
}

impl Scenario {
    pub fn number(self) -> u8 {
        match self {
            Scenario::UniformEs => 1,
            Scenario::NonuniformEs => 2,
        }
    }

    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Scenario::UniformEs),
            2 => Ok(Scenario::NonuniformEs),
            _ => Err(Error::Config(format!("scenario must be 1 or 2, got {k}"))),
        }
    }
}

/// How the `+-j` phase-difference sign evolves across slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignPattern {
    /// Independent fair sign per slot.
    #[default]
    Random,
    /// One sign for the whole batch.
    Fixed,
}

/// Distribution of the BS-to-surface channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    /// `h_n = e^{j u_n}`, `u_n` uniform.
    #[default]
    UnitModulus,
    /// `h ~ CN(0, I)`.
    Rayleigh,
}

/// Knobs for [`generate_profile_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub sign: SignPattern,
    /// Scenario 2 only: draw one amplitude per element and keep it for all
    /// slots instead of redrawing every slot.
    pub freeze_amplitudes: bool,
}

/// Known control sequence of the surface: `n x t_s` grids of reflection
/// amplitudes, reflection phases and `+-1` phase-difference signs.
#[derive(Debug, Clone, PartialEq)]
pub struct StarRisProfile {
    pub n: usize,
    pub t_s: usize,
    pub beta_r: DMatrix<f64>,
    pub phi_r: DMatrix<f64>,
    pub sign_j: DMatrix<f64>,
    pub scenario: Scenario,
}

impl StarRisProfile {
    pub fn new(
        beta_r: DMatrix<f64>,
        phi_r: DMatrix<f64>,
        sign_j: DMatrix<f64>,
        scenario: Scenario,
    ) -> Result<Self> {
        let (n, t_s) = beta_r.shape();
        if n == 0 || t_s == 0 || phi_r.shape() != (n, t_s) || sign_j.shape() != (n, t_s) {
            return Err(Error::Dimension("profile grids must share a nonempty shape".into()));
        }
        for t in 0..t_s {
            for e in 0..n {
                let b = beta_r[(e, t)];
                if b == 0.0 {
                    return Err(Error::ZeroAmplitude { element: e, slot: t });
                }
                if !(b > 0.0 && b <= 1.0) {
                    return Err(Error::Config(format!("beta_r[{e},{t}] = {b} outside (0, 1]")));
                }
                if sign_j[(e, t)].abs() != 1.0 {
                    return Err(Error::Config("sign entries must be +-1".into()));
                }
            }
        }
        let p = Self { n, t_s, beta_r, phi_r, sign_j, scenario };
        if scenario == Scenario::UniformEs && !p.is_element_uniform() {
            return Err(Error::Scenario(
                "uniform profile must share amplitude and sign across elements".into(),
            ));
        }
        Ok(p)
    }

    /// True when amplitudes and signs are constant across elements in
    /// every slot.
    pub fn is_element_uniform(&self) -> bool {
        (0..self.t_s).all(|t| {
            (1..self.n).all(|e| {
                self.beta_r[(e, t)] == self.beta_r[(0, t)]
                    && self.sign_j[(e, t)] == self.sign_j[(0, t)]
            })
        })
    }

    pub fn reflection(&self, e: usize, t: usize) -> Complex64 {
        Complex64::from_polar(self.beta_r[(e, t)], self.phi_r[(e, t)])
    }

    pub fn transmission(&self, e: usize, t: usize) -> Complex64 {
        let b = self.beta_r[(e, t)];
        J * self.sign_j[(e, t)] * Complex64::from_polar((1.0 - b * b).max(0.0).sqrt(), self.phi_r[(e, t)])
    }

    /// `sqrt(1 - beta^2) / beta`, the transmission-to-reflection amplitude ratio.
    pub fn ratio(&self, e: usize, t: usize) -> f64 {
        let b = self.beta_r[(e, t)];
        (1.0 - b * b).max(0.0).sqrt() / b
    }

    /// `G(t)` diagonal: `sign * j * ratio`.
    pub fn g_entry(&self, e: usize, t: usize) -> Complex64 {
        J * (self.sign_j[(e, t)] * self.ratio(e, t))
    }
}

/// Draws a control sequence with default options.
pub fn generate_profile<R: Rng + ?Sized>(
    scenario: Scenario,
    n: usize,
    t_s: usize,
    rng: &mut R,
) -> Result<StarRisProfile> {
    generate_profile_with(scenario, n, t_s, &ProfileOptions::default(), rng)
}

/// Draws amplitudes, then signs, then phases, in that order.
pub fn generate_profile_with<R: Rng + ?Sized>(
    scenario: Scenario,
    n: usize,
    t_s: usize,
    opts: &ProfileOptions,
    rng: &mut R,
) -> Result<StarRisProfile> {
    if n < 2 || t_s == 0 {
        return Err(Error::Config(format!("need n >= 2 and t_s >= 1, got n={n}, t_s={t_s}")));
    }
    let beta_r = match scenario {
        Scenario::UniformEs => DMatrix::from_element(n, t_s, FRAC_1_SQRT_2),
        Scenario::NonuniformEs if opts.freeze_amplitudes => {
            let col: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..=0.8f64).sqrt()).collect();
            DMatrix::from_fn(n, t_s, |e, _| col[e])
        }
        Scenario::NonuniformEs => {
            // Column-major draw order: element fastest.
            let vals: Vec<f64> = (0..n * t_s).map(|_| rng.random_range(0.2..=0.8f64).sqrt()).collect();
            DMatrix::from_vec(n, t_s, vals)
        }
    };
    let signs: Vec<f64> = match opts.sign {
        SignPattern::Random => (0..t_s).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
        SignPattern::Fixed => {
            let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            vec![s; t_s]
        }
    };
    let sign_j = DMatrix::from_fn(n, t_s, |_, t| signs[t]);
    let phases: Vec<f64> = (0..n * t_s).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let phi_r = DMatrix::from_vec(n, t_s, phases);
    StarRisProfile::new(beta_r, phi_r, sign_j, scenario)
}

/// `n x t_s` grid of reflection coefficients.
pub fn reflection_coefficients(profile: &StarRisProfile) -> CMatrix {
    DMatrix::from_fn(profile.n, profile.t_s, |e, t| profile.reflection(e, t))
}

/// `n x t_s` grid of transmission coefficients implied by the reflection
/// coefficients and signs.
pub fn map_reflection_to_transmission(profile: &StarRisProfile) -> Result<CMatrix> {
    check_amplitudes(profile)?;
    Ok(DMatrix::from_fn(profile.n, profile.t_s, |e, t| profile.transmission(e, t)))
}

fn check_amplitudes(profile: &StarRisProfile) -> Result<()> {
    for t in 0..profile.t_s {
        for e in 0..profile.n {
            if profile.beta_r[(e, t)] == 0.0 {
                return Err(Error::ZeroAmplitude { element: e, slot: t });
            }
        }
    }
    Ok(())
}

/// `a_m(theta) = e^{-j pi m sin(theta)}`, `theta` in degrees.
pub fn steering_vector(theta_deg: f64, n: usize) -> CVector {
    let s = theta_deg.to_radians().sin();
    DVector::from_fn(n, |m, _| Complex64::from_polar(1.0, -PI * m as f64 * s))
}

/// Columns are steering vectors.
pub fn steering_matrix(thetas_deg: &[f64], n: usize) -> CMatrix {
    let mut a = DMatrix::zeros(n, thetas_deg.len());
    for (k, &th) in thetas_deg.iter().enumerate() {
        a.set_column(k, &steering_vector(th, n));
    }
    a
}

/// Ground-truth users: semi-space angles (degrees) per side and one
/// slot-invariant gain per user, RS users first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserScene {
    pub theta_rs: Vec<f64>,
    pub theta_ts: Vec<f64>,
    pub gains: Vec<Complex64>,
}

impl UserScene {
    pub fn new(theta_rs: Vec<f64>, theta_ts: Vec<f64>, gains: Vec<Complex64>) -> Result<Self> {
        let k = theta_rs.len() + theta_ts.len();
        if k == 0 {
            return Err(Error::Scene("no users".into()));
        }
        if gains.len() != k {
            return Err(Error::Scene(format!("{} gains for {k} users", gains.len())));
        }
        if let Some(th) = theta_rs
            .iter()
            .chain(&theta_ts)
            .find(|th| !(th.abs() < 90.0))
        {
            return Err(Error::Scene(format!("angle {th} outside (-90, 90)")));
        }
        if gains.iter().any(|g| g.norm() == 0.0 || !g.norm().is_finite()) {
            return Err(Error::Scene("gains must be finite and nonzero".into()));
        }
        Ok(Self { theta_rs, theta_ts, gains })
    }

    /// Unit-modulus gains with uniform phases.
    pub fn with_random_gains<R: Rng + ?Sized>(
        theta_rs: Vec<f64>,
        theta_ts: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let k = theta_rs.len() + theta_ts.len();
        let gains = (0..k)
            .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
            .collect();
        Self::new(theta_rs, theta_ts, gains)
    }

    /// Angles i.i.d. uniform in `region`, pairwise at least `min_sep_deg`
    /// apart across all users (rejection sampling), then random gains.
    pub fn random<R: Rng + ?Sized>(
        k_r: usize,
        k_t: usize,
        region: (f64, f64),
        min_sep_deg: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (lo, hi) = region;
        if !(lo < hi) || lo <= -90.0 || hi >= 90.0 {
            return Err(Error::Config(format!("invalid angle region [{lo}, {hi}]")));
        }
        let k = k_r + k_t;
        let mut angles: Vec<f64> = Vec::with_capacity(k);
        let mut attempts = 0usize;
        while angles.len() < k {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Config("cannot place users with the requested separation".into()));
            }
            let th = rng.random_range(lo..=hi);
            if angles.iter().all(|a| (a - th).abs() >= min_sep_deg) {
                angles.push(th);
            }
        }
        let theta_ts = angles.split_off(k_r);
        Self::with_random_gains(angles, theta_ts, rng)
    }

    pub fn k_r(&self) -> usize {
        self.theta_rs.len()
    }

    pub fn k_t(&self) -> usize {
        self.theta_ts.len()
    }

    pub fn k(&self) -> usize {
        self.gains.len()
    }

    pub fn gains_rs(&self) -> &[Complex64] {
        &self.gains[..self.k_r()]
    }

    pub fn gains_ts(&self) -> &[Complex64] {
        &self.gains[self.k_r()..]
    }

    /// `x_R = A_R s_R`.
    pub fn field_rs(&self, n: usize) -> CVector {
        field(&self.theta_rs, self.gains_rs(), n)
    }

    /// `x_T = A_T s_T`.
    pub fn field_ts(&self, n: usize) -> CVector {
        field(&self.theta_ts, self.gains_ts(), n)
    }
}

fn field(thetas: &[f64], gains: &[Complex64], n: usize) -> CVector {
    let mut x = DVector::zeros(n);
    for (&th, &s) in thetas.iter().zip(gains) {
        x += steering_vector(th, n) * s;
    }
    x
}

/// BS-to-surface channel, fixed over a batch and known to the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub h: CVector,
}

impl Channel {
    pub fn new(h: CVector) -> Result<Self> {
        if h.is_empty() || h.iter().all(|z| z.norm() == 0.0) {
            return Err(Error::Config("channel must be nonzero".into()));
        }
        Ok(Self { h })
    }

    pub fn generate<R: Rng + ?Sized>(n: usize, model: ChannelModel, rng: &mut R) -> Self {
        let h = match model {
            ChannelModel::UnitModulus => {
                DVector::from_fn(n, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
            }
            ChannelModel::Rayleigh => DVector::from_fn(n, |_, _| complex_normal(rng, 1.0)),
        };
        Self { h }
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(sd * re, sd * im)
}

/// Block-diagonal sensing operator of the uniform regime, stored as one
/// length-`n` row per slot: `y(t) = rows[t] . r(t)`, with
/// `r(t) = x_R + g(t) x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformOperator {
    /// `t_s x n`, row `t` is `h^T Phi_R(t)`.
    pub rows: CMatrix,
    /// Per-slot transmission factor `g(t)`.
    pub g: CVector,
    /// Set when the profile was not element-uniform and `g(t)` is the
    /// element average.
    pub mismatch: bool,
}

impl UniformOperator {
    pub fn n(&self) -> usize {
        self.rows.ncols()
    }

    pub fn t_s(&self) -> usize {
        self.rows.nrows()
    }
}

fn sensing_rows(profile: &StarRisProfile, channel: &Channel) -> Result<CMatrix> {
    if channel.h.len() != profile.n {
        return Err(Error::Dimension(format!(
            "channel length {} vs {} elements",
            channel.h.len(),
            profile.n
        )));
    }
    Ok(DMatrix::from_fn(profile.t_s, profile.n, |t, e| {
        channel.h[e] * profile.reflection(e, t)
    }))
}

/// Uniform-regime operator; rejects element-nonuniform profiles.
pub fn build_uniform_operator(profile: &StarRisProfile, channel: &Channel) -> Result<UniformOperator> {
    if profile.scenario != Scenario::UniformEs || !profile.is_element_uniform() {
        return Err(Error::Scenario("uniform operator needs an element-uniform profile".into()));
    }
    let rows = sensing_rows(profile, channel)?;
    let g = DVector::from_fn(profile.t_s, |t, _| profile.g_entry(0, t));
    Ok(UniformOperator { rows, g, mismatch: false })
}

/// Uniform-regime operator for any profile: `g(t)` uses the element-mean
/// amplitude ratio and `mismatch` is set when that is an approximation.
pub fn build_uniform_operator_approx(
    profile: &StarRisProfile,
    channel: &Channel,
) -> Result<UniformOperator> {
    check_amplitudes(profile)?;
    let rows = sensing_rows(profile, channel)?;
    let uniform = profile.is_element_uniform();
    let g = DVector::from_fn(profile.t_s, |t, _| {
        let mean_p = (0..profile.n).map(|e| profile.ratio(e, t)).sum::<f64>() / profile.n as f64;
        let mean_sign = (0..profile.n).map(|e| profile.sign_j[(e, t)]).sum::<f64>() / profile.n as f64;
        J * (mean_sign.signum() * mean_p)
    });
    Ok(UniformOperator { rows, g, mismatch: !uniform })
}

/// `Psi` (`2n x t_s`): column `t` stacks `Phi_R(t) h` over `G(t) Phi_R(t) h`,
/// so that `y = Psi^T [x_R; x_T] + n`.
pub fn build_paired_operator(profile: &StarRisProfile, channel: &Channel) -> Result<CMatrix> {
    check_amplitudes(profile)?;
    let rows = sensing_rows(profile, channel)?;
    let n = profile.n;
    Ok(DMatrix::from_fn(2 * n, profile.t_s, |i, t| {
        if i < n {
            rows[(t, i)]
        } else {
            profile.g_entry(i - n, t) * rows[(t, i - n)]
        }
    }))
}

/// Latent signals of a scene under a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVectors {
    pub x_r: CVector,
    pub x_t: CVector,
    /// Per-slot `r(t) = x_R + g(t) x_T`; only for element-uniform profiles.
    pub r: Option<Vec<CVector>>,
}

pub fn latent_fri_vectors(scene: &UserScene, profile: &StarRisProfile) -> LatentVectors {
    let x_r = scene.field_rs(profile.n);
    let x_t = scene.field_ts(profile.n);
    let r = profile.is_element_uniform().then(|| {
        (0..profile.t_s)
            .map(|t| &x_r + &x_t * profile.g_entry(0, t))
            .collect()
    });
    LatentVectors { x_r, x_t, r }
}

/// Per-user SNR specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Snr {
    Db(f64),
    Noiseless,
}

impl Snr {
    /// Noise variance for unit-power sources.
    pub fn noise_variance(self) -> f64 {
        match self {
            Snr::Db(db) => 10f64.powf(-db / 10.0),
            Snr::Noiseless => 0.0,
        }
    }
}

/// Observations of one batch together with both forms of the known
/// sensing operator.
#[derive(Debug, Clone)]
pub struct MeasurementBatch {
    pub y: CVector,
    pub sigma_n2: f64,
    /// Exact for element-uniform profiles, otherwise the element-mean
    /// approximation with `mismatch` set.
    pub operator_uniform: UniformOperator,
    pub operator_paired: CMatrix,
    pub seed: u64,
    pub scenario: Scenario,
}

impl MeasurementBatch {
    pub fn n(&self) -> usize {
        self.operator_uniform.n()
    }

    pub fn t_s(&self) -> usize {
        self.y.len()
    }
}

/// Noiseless observations straight from the per-element coefficients.
pub fn noiseless_measurements(
    scene: &UserScene,
    profile: &StarRisProfile,
    channel: &Channel,
) -> Result<CVector> {
    if channel.h.len() != profile.n {
        return Err(Error::Dimension("channel/profile size mismatch".into()));
    }
    let x_r = scene.field_rs(profile.n);
    let x_t = scene.field_ts(profile.n);
    Ok(DVector::from_fn(profile.t_s, |t, _| {
        (0..profile.n)
            .map(|e| channel.h[e] * (profile.reflection(e, t) * x_r[e] + profile.transmission(e, t) * x_t[e]))
            .sum()
    }))
}

/// Noisy observations with circular Gaussian noise of variance
/// `10^{-snr/10}` (sources have unit power).
pub fn synthesize_measurements<R: Rng + ?Sized>(
    scene: &UserScene,
    profile: &StarRisProfile,
    channel: &Channel,
    snr: Snr,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    if scene.k() == 0 {
        return Err(Error::Scene("no users".into()));
    }
    let mut y = noiseless_measurements(scene, profile, channel)?;
    let sigma_n2 = snr.noise_variance();
    if sigma_n2 > 0.0 {
        y.iter_mut().for_each(|v| *v += complex_normal(rng, sigma_n2));
    }
    Ok(MeasurementBatch {
        y,
        sigma_n2,
        operator_uniform: build_uniform_operator_approx(profile, channel)?,
        operator_paired: build_paired_operator(profile, channel)?,
        seed: 0,
        scenario: profile.scenario,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn flat_profile(n: usize, t_s: usize, beta: f64, sign: f64) -> StarRisProfile {
        StarRisProfile::new(
            DMatrix::from_element(n, t_s, beta),
            DMatrix::zeros(n, t_s),
            DMatrix::from_element(n, t_s, sign),
            if beta == FRAC_1_SQRT_2 { Scenario::UniformEs } else { Scenario::NonuniformEs },
        )
        .unwrap()
    }

    #[test]
    fn steering_examples() {
        assert!(steering_vector(0.0, 4).iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
        let a = steering_vector(30.0, 2);
        assert!((a[1] - c(0.0, -1.0)).norm() < 1e-15);
        let a = steering_vector(-47.34, 16);
        for m in 0..16 {
            let ph = PI * m as f64 * 47.34f64.to_radians().sin();
            let want = c(ph.cos(), ph.sin());
            assert!((a[m] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn profile_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = generate_profile(Scenario::UniformEs, 8, 20, &mut rng).unwrap();
        assert!(p.beta_r.iter().all(|&b| b == FRAC_1_SQRT_2));
        assert!(p.is_element_uniform());
        assert!(p.phi_r.iter().all(|&f| (0.0..2.0 * PI).contains(&f)));

        let q = generate_profile(Scenario::NonuniformEs, 8, 20, &mut rng).unwrap();
        assert!(q.beta_r.iter().all(|&b| (0.2 - 1e-15..=0.8 + 1e-15).contains(&(b * b))));
        let t = map_reflection_to_transmission(&q).unwrap();
        let r = reflection_coefficients(&q);
        let resid = r.iter().zip(t.iter()).map(|(a, b)| (a.norm_sqr() + b.norm_sqr() - 1.0).abs()).fold(0.0, f64::max);
        assert!(resid <= 1e-12);
        // Shared sign per slot even when amplitudes differ.
        for s in 0..20 {
            assert!((1..8).all(|e| q.sign_j[(e, s)] == q.sign_j[(0, s)]));
        }
    }

    #[test]
    fn profile_determinism_and_options() {
        let a = generate_profile(Scenario::NonuniformEs, 6, 9, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_profile(Scenario::NonuniformEs, 6, 9, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let opts = ProfileOptions { sign: SignPattern::Fixed, freeze_amplitudes: true };
        let f = generate_profile_with(Scenario::NonuniformEs, 6, 9, &opts, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(f.sign_j.iter().all(|&s| s == f.sign_j[(0, 0)]));
        assert!((0..9).all(|t| f.beta_r.column(t) == f.beta_r.column(0)));
        assert!(generate_profile(Scenario::UniformEs, 1, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn transmission_mapping_examples() {
        let p = flat_profile(1, 1, FRAC_1_SQRT_2, 1.0);
        let t = map_reflection_to_transmission(&p).unwrap();
        assert!((t[(0, 0)] - c(0.0, FRAC_1_SQRT_2)).norm() < 1e-15);
        let p = flat_profile(1, 1, 0.6, -1.0);
        assert_relative_eq!(map_reflection_to_transmission(&p).unwrap()[(0, 0)].norm(), 0.8, epsilon = 1e-15);
        let bad = StarRisProfile::new(
            DMatrix::from_element(2, 1, 0.0),
            DMatrix::zeros(2, 1),
            DMatrix::from_element(2, 1, 1.0),
            Scenario::NonuniformEs,
        );
        assert!(matches!(bad, Err(Error::ZeroAmplitude { .. })));
    }

    #[test]
    fn uniform_operator_examples() {
        let p = flat_profile(3, 4, FRAC_1_SQRT_2, 1.0);
        let ch = Channel::new(DVector::from_element(3, c(1.0, 0.0))).unwrap();
        let op = build_uniform_operator(&p, &ch).unwrap();
        assert!(op.rows.iter().all(|z| (z - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-15));
        assert!(!op.mismatch);

        let p2 = flat_profile(2, 1, FRAC_1_SQRT_2, 1.0);
        let ch2 = Channel::new(DVector::from_element(2, c(1.0, 0.0))).unwrap();
        let op2 = build_uniform_operator(&p2, &ch2).unwrap();
        let y = (op2.rows.row(0) * DVector::from_element(2, c(1.0, 0.0)))[(0, 0)];
        assert_relative_eq!(y.re, 2f64.sqrt(), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = generate_profile(Scenario::UniformEs, 5, 7, &mut rng).unwrap();
        let ch = Channel::generate(5, ChannelModel::Rayleigh, &mut rng);
        let op = build_uniform_operator(&q, &ch).unwrap();
        for t in 0..7 {
            for m in 0..5 {
                let want = ch.h[m] * Complex64::from_polar(q.beta_r[(m, t)], q.phi_r[(m, t)]);
                assert!((op.rows[(t, m)] - want).norm() < 1e-14);
            }
        }
        let nu = generate_profile(Scenario::NonuniformEs, 5, 7, &mut rng).unwrap();
        assert!(matches!(build_uniform_operator(&nu, &ch), Err(Error::Scenario(_))));
        assert!(build_uniform_operator_approx(&nu, &ch).unwrap().mismatch);
    }

    #[test]
    fn paired_operator_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = generate_profile(Scenario::UniformEs, 4, 6, &mut rng).unwrap();
        let ch = Channel::generate(4, ChannelModel::UnitModulus, &mut rng);
        let psi = build_paired_operator(&p, &ch).unwrap();
        for t in 0..6 {
            let sj = J * p.sign_j[(0, t)];
            for e in 0..4 {
                assert!((psi[(e + 4, t)] - sj * psi[(e, t)]).norm() < 1e-14);
            }
        }
        let mut beta = DMatrix::from_element(2, 1, FRAC_1_SQRT_2);
        beta[(1, 0)] = 0.6;
        let q = StarRisProfile::new(beta, DMatrix::zeros(2, 1), DMatrix::from_element(2, 1, 1.0), Scenario::NonuniformEs).unwrap();
        let ch = Channel::new(DVector::from_element(2, c(1.0, 0.0))).unwrap();
        let psi = build_paired_operator(&q, &ch).unwrap();
        assert_relative_eq!(psi[(3, 0)].norm() / psi[(1, 0)].norm(), 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn latent_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = generate_profile(Scenario::UniformEs, 6, 5, &mut rng).unwrap();
        let only_rs = UserScene::with_random_gains(vec![10.0, -20.0], vec![], &mut rng).unwrap();
        let lat = latent_fri_vectors(&only_rs, &p);
        let r = lat.r.unwrap();
        assert!(r.iter().all(|v| v == &r[0]));
        assert!((0..5).all(|t| (p.g_entry(0, t).norm() - 1.0).abs() < 1e-15));

        let scene = UserScene::with_random_gains(vec![12.0], vec![-33.0, 50.0], &mut rng).unwrap();
        let lat = latent_fri_vectors(&scene, &p);
        let thetas = [12.0f64, -33.0, 50.0];
        for (t, rt) in lat.r.unwrap().iter().enumerate() {
            let g = p.g_entry(0, t);
            for m in 0..6 {
                let mut want = c(0.0, 0.0);
                for (k, th) in thetas.iter().enumerate() {
                    let z = Complex64::from_polar(1.0, -PI * th.to_radians().sin());
                    let amp = if k == 0 { scene.gains[k] } else { g * scene.gains[k] };
                    want += amp * z.powu(m as u32);
                }
                assert!((rt[m] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn measurement_examples() {
        let p = flat_profile(2, 3, FRAC_1_SQRT_2, 1.0);
        let ch = Channel::new(DVector::from_element(2, c(1.0, 0.0))).unwrap();
        let scene = UserScene::new(vec![0.0], vec![], vec![c(1.0, 0.0)]).unwrap();
        let b = synthesize_measurements(&scene, &p, &ch, Snr::Noiseless, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(b.y.iter().all(|v| (v - c(2f64.sqrt(), 0.0)).norm() < 1e-14));
        assert_eq!(b.sigma_n2, 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for scen in [Scenario::UniformEs, Scenario::NonuniformEs] {
            let p = generate_profile(scen, 8, 12, &mut rng).unwrap();
            let ch = Channel::generate(8, ChannelModel::Rayleigh, &mut rng);
            let scene = UserScene::random(2, 2, (-60.0, 60.0), 2.0, &mut rng).unwrap();
            let b = synthesize_measurements(&scene, &p, &ch, Snr::Noiseless, &mut rng).unwrap();
            let lat = latent_fri_vectors(&scene, &p);
            let x = DVector::from_iterator(16, lat.x_r.iter().chain(lat.x_t.iter()).copied());
            let via_psi = b.operator_paired.transpose() * &x;
            assert!((&via_psi - &b.y).norm() <= 1e-10 * b.y.norm());
            if let Some(r) = lat.r {
                for t in 0..12 {
                    let yt = (b.operator_uniform.rows.row(t) * &r[t])[(0, 0)];
                    assert!((yt - b.y[t]).norm() <= 1e-12 * b.y.norm());
                }
            }
        }
    }

    #[test]
    fn noise_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = generate_profile(Scenario::UniformEs, 4, 1000, &mut rng).unwrap();
        let ch = Channel::generate(4, ChannelModel::UnitModulus, &mut rng);
        let scene = UserScene::new(vec![5.0], vec![], vec![c(1e-300, 0.0)]).unwrap();
        let b = synthesize_measurements(&scene, &p, &ch, Snr::Db(3.0), &mut rng).unwrap();
        let var = b.y.iter().map(|v| v.norm_sqr()).sum::<f64>() / 1000.0;
        // |n|^2 is exponential with mean sigma^2: standard error sigma^2/sqrt(T).
        let se = b.sigma_n2 / 1000f64.sqrt();
        assert!((var - b.sigma_n2).abs() <= 3.0 * se, "{var} vs {}", b.sigma_n2);
    }

    #[test]
    fn scene_validation() {
        assert!(UserScene::new(vec![], vec![], vec![]).is_err());
        assert!(UserScene::new(vec![95.0], vec![], vec![c(1.0, 0.0)]).is_err());
        assert!(UserScene::new(vec![5.0], vec![], vec![c(0.0, 0.0)]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = UserScene::random(3, 3, (-60.0, 60.0), 2.0, &mut rng).unwrap();
        let all: Vec<f64> = s.theta_rs.iter().chain(&s.theta_ts).copied().collect();
        for i in 0..6 {
            for j in 0..i {
                assert!((all[i] - all[j]).abs() >= 2.0);
            }
        }
        assert!(s.gains.iter().all(|g| (g.norm() - 1.0).abs() < 1e-14));
    }
}
