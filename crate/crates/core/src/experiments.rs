//! Monte Carlo harness: scene synthesis, per-method runs, scoring,
//! aggregation and CSV/JSON output.
//!
//! Every trial owns a ChaCha8 stream selected by its index under the master
//! seed, so aggregates do not depend on the worker count or on the order in
//! which trials finish. Within a trial the draws happen in the order scene,
//! channel, profile, noise; the scene is therefore shared by all sweep
//! points of the same trial index.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_dictionary_with, fft_scan, omp, sbl, uniform_grid, SblConfig, SteeringTable};
use crate::bounds::{zzb_full, ZzbInputs};
use crate::error::{Error, Result};
use crate::model::{
    generate_profile_with, synthesize_measurements, Channel, ChannelModel, MeasurementBatch,
    ProfileOptions, Scenario, SignPattern, Snr, UserScene,
};
use crate::paired::{estimate_angles_nonuniform, PairedPgdConfig};
use crate::uniform::{af_spectrum, estimate_angles_uniform, local_minima, PgdConfig};
use crate::{AfOrder, LabeledAngle, Subspace};

/// Version stamp written next to every output set.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Angles used by the spectrum experiment when the config gives none.
pub const SPECTRUM_THETA_RS: [f64; 2] = [-12.23, 39.19];
pub const SPECTRUM_THETA_TS: [f64; 2] = [-47.34, 15.57];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Spectrum,
    FullSpaceSweep,
    Convergence,
    SnrSweep,
    Timing,
    ApertureSweep,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::FullSpaceSweep => "sweep",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SnrSweep => "snr",
            ExperimentKind::Timing => "timing",
            ExperimentKind::ApertureSweep => "aperture",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    M1,
    M2,
    Fft,
    Omp,
    Sbl,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::M1, Method::M2, Method::Fft, Method::Omp, Method::Sbl];

    pub fn name(self) -> &'static str {
        match self {
            Method::M1 => "M1",
            Method::M2 => "M2",
            Method::Fft => "FFT",
            Method::Omp => "OMP",
            Method::Sbl => "SBL",
        }
    }

    pub fn is_fri(self) -> bool {
        matches!(self, Method::M1 | Method::M2)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method '{s}' (expected M1, M2, FFT, OMP or SBL)")))
    }
}

/// Everything that defines a run. Deserializes from TOML with missing keys
/// taken from a base config (see [`ExperimentConfig::from_toml`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// 1 (uniform energy split) or 2 (non-uniform).
    pub scenario: u8,
    /// Surface sizes; the aperture sweep uses several.
    pub n: Vec<usize>,
    pub t_s: usize,
    pub k_r: usize,
    pub k_t: usize,
    pub snr_db: Vec<f64>,
    /// Ignore `snr_db` and synthesize noise-free data.
    pub noiseless: bool,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub success_threshold_deg: f64,
    pub angle_region: [f64; 2],
    pub min_sep_deg: f64,
    /// Slot sign sequence; see [`ExperimentConfig::sign_pattern`] for the
    /// default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign_pattern: Option<SignPattern>,
    pub channel: ChannelModel,
    /// Fixed user angles; drawn per trial when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_rs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_ts: Option<Vec<f64>>,
    /// Baseline grid step.
    pub grid_step_deg: f64,
    /// Sampling step of emitted spectra.
    pub spectrum_step_deg: f64,
    pub i_max: usize,
    pub eps: f64,
    pub af_order: AfOrder,
    /// Evaluate the Ziv-Zakai bound for every trial.
    pub compute_bound: bool,
    /// Rayon worker count; `None` uses all cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(ExperimentKind::FullSpaceSweep)
    }
}

impl ExperimentConfig {
    /// Defaults of each experiment.
    pub fn preset(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            experiment: kind,
            scenario: 1,
            n: vec![16],
            t_s: 256,
            k_r: 2,
            k_t: 2,
            snr_db: vec![15.0],
            noiseless: false,
            trials: 200,
            seed: 2024,
            methods: vec![Method::M1, Method::M2],
            success_threshold_deg: 5.0,
            angle_region: [-60.0, 60.0],
            min_sep_deg: 2.0,
            sign_pattern: None,
            channel: ChannelModel::UnitModulus,
            theta_rs: None,
            theta_ts: None,
            grid_step_deg: 0.1,
            spectrum_step_deg: 0.01,
            i_max: 200,
            eps: 1e-7,
            af_order: AfOrder::ModelOrder,
            compute_bound: false,
            workers: None,
        };
        match kind {
            ExperimentKind::Spectrum => {
                cfg.trials = 1;
                cfg.t_s = 32;
                cfg.af_order = AfOrder::LiftingOrder;
                cfg.theta_rs = Some(SPECTRUM_THETA_RS.to_vec());
                cfg.theta_ts = Some(SPECTRUM_THETA_TS.to_vec());
            }
            ExperimentKind::FullSpaceSweep => {}
            ExperimentKind::Convergence => cfg.trials = 100,
            ExperimentKind::SnrSweep => {
                cfg.snr_db = (0..=6).map(|i| 5.0 * i as f64).collect();
                cfg.methods = vec![Method::M1, Method::M2, Method::Fft, Method::Omp, Method::Sbl];
                cfg.compute_bound = true;
            }
            ExperimentKind::Timing => {
                cfg.trials = 50;
                cfg.methods = Method::ALL.to_vec();
            }
            ExperimentKind::ApertureSweep => {
                cfg.n = (4..=10).map(|i| 2 * i).collect();
                cfg.methods = Method::ALL.to_vec();
            }
        }
        cfg
    }

    /// Parses TOML, filling absent keys from `base`.
    pub fn from_toml(text: &str, base: &ExperimentConfig) -> Result<Self> {
        let file: toml::Table = toml::from_str(text)?;
        let mut merged = toml::Table::try_from(base)
            .map_err(|e| Error::Config(format!("cannot encode base config: {e}")))?;
        merged.extend(file);
        let cfg: Self = merged.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Scenario::from_number(self.scenario)
    }

    pub fn k(&self) -> usize {
        self.k_r + self.k_t
    }

    /// Explicit sign pattern, else one sign per batch for the uniform
    /// spectrum run (the RS and TS filters then coincide) and a random sign
    /// per slot everywhere else.
    pub fn sign_pattern(&self) -> SignPattern {
        self.sign_pattern.unwrap_or(
            if self.experiment == ExperimentKind::Spectrum && self.scenario == 1 {
                SignPattern::Fixed
            } else {
                SignPattern::Random
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.methods.is_empty() {
            return bad("method set is empty".into());
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
            return bad(format!("surface sizes must be >= 2, got {:?}", self.n));
        }
        if self.t_s == 0 {
            return bad("t_s must be >= 1".into());
        }
        if self.k() == 0 {
            return bad("need at least one user".into());
        }
        if !self.noiseless && (self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite())) {
            return bad("snr_db must list finite values".into());
        }
        for (name, v) in [
            ("success_threshold_deg", self.success_threshold_deg),
            ("grid_step_deg", self.grid_step_deg),
            ("spectrum_step_deg", self.spectrum_step_deg),
            ("eps", self.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.min_sep_deg >= 0.0) {
            return bad("min_sep_deg must be non-negative".into());
        }
        let [lo, hi] = self.angle_region;
        if !(lo < hi && lo > -90.0 && hi < 90.0) {
            return bad(format!("angle region [{lo}, {hi}] must lie inside (-90, 90)"));
        }
        if self.i_max == 0 {
            return bad("i_max must be >= 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be >= 1".into());
        }
        match (&self.theta_rs, &self.theta_ts) {
            (Some(r), Some(t)) if r.len() != self.k_r || t.len() != self.k_t => {
                bad(format!("fixed scene has {}+{} users, config says {}+{}", r.len(), t.len(), self.k_r, self.k_t))
            }
            (Some(_), None) | (None, Some(_)) => bad("theta_rs and theta_ts must be given together".into()),
            _ => Ok(()),
        }
    }

    /// Sweep points in output order: surface size outer, SNR inner.
    pub fn points(&self) -> Vec<SweepPoint> {
        let snrs: Vec<Option<f64>> = if self.noiseless {
            vec![None]
        } else {
            self.snr_db.iter().map(|&s| Some(s)).collect()
        };
        self.n
            .iter()
            .flat_map(|&n| snrs.iter().map(move |&snr_db| SweepPoint { n, snr_db }))
            .collect()
    }
}

/// One (surface size, SNR) cell; `snr_db = None` means noise-free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub snr_db: Option<f64>,
}

impl SweepPoint {
    fn snr(self) -> Snr {
        self.snr_db.map_or(Snr::Noiseless, Snr::Db)
    }
}

/// Semi-space angle to the full-space convention: RS keeps `theta`, TS maps
/// to `180 - theta`.
pub fn full_space_deg(theta_deg: f64, subspace: Subspace) -> f64 {
    match subspace {
        Subspace::Reflection => theta_deg,
        Subspace::Transmission => 180.0 - theta_deg,
    }
}

/// Signed angular difference wrapped to `(-180, 180]`.
pub fn wrap_deg(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

/// Minimum-cost perfect matching of a square cost matrix by dynamic
/// programming over subsets. Returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    if k == 0 {
        return Vec::new();
    }
    assert!(k <= 20, "assignment size {k} too large");
    let full = 1usize << k;
    // best[mask] = min cost of assigning rows 0..popcount(mask) to the columns in mask.
    let mut best = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if !best[mask].is_finite() {
            continue;
        }
        let row = mask.count_ones() as usize;
        if row == k {
            continue;
        }
        for col in 0..k {
            if mask & (1 << col) == 0 {
                let next = mask | (1 << col);
                let c = best[mask] + cost[row][col];
                if c < best[next] {
                    best[next] = c;
                    choice[next] = col;
                }
            }
        }
    }
    let mut assign = vec![0; k];
    let mut mask = full - 1;
    for row in (0..k).rev() {
        let col = choice[mask];
        assign[row] = col;
        mask &= !(1 << col);
    }
    assign
}

/// Per-user errors of one trial, ordered like the scene (RS users first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub errors_deg: Vec<f64>,
    pub success: bool,
}

impl Score {
    pub fn max_abs_error(&self) -> Option<f64> {
        self.errors_deg.iter().map(|e| e.abs()).reduce(f64::max)
    }

    pub fn mse_deg2(&self) -> Option<f64> {
        (!self.errors_deg.is_empty())
            .then(|| self.errors_deg.iter().map(|e| e * e).sum::<f64>() / self.errors_deg.len() as f64)
    }
}

/// Matches estimates to users in the full-space representation by minimum
/// total squared error. A cardinality mismatch is a failed trial with no
/// errors.
pub fn match_and_score(estimates: &[LabeledAngle], truth: &UserScene, threshold_deg: f64) -> Score {
    let true_full: Vec<f64> = truth
        .theta_rs
        .iter()
        .map(|&t| full_space_deg(t, Subspace::Reflection))
        .chain(truth.theta_ts.iter().map(|&t| full_space_deg(t, Subspace::Transmission)))
        .collect();
    let est_full: Vec<f64> = estimates.iter().map(|a| full_space_deg(a.theta_deg, a.subspace)).collect();
    if est_full.len() != true_full.len() || est_full.iter().any(|e| !e.is_finite()) {
        return Score { errors_deg: Vec::new(), success: false };
    }
    let cost: Vec<Vec<f64>> = true_full
        .iter()
        .map(|t| est_full.iter().map(|e| wrap_deg(e - t).powi(2)).collect())
        .collect();
    let assign = min_cost_assignment(&cost);
    let errors_deg: Vec<f64> = true_full
        .iter()
        .zip(&assign)
        .map(|(t, &j)| wrap_deg(est_full[j] - t))
        .collect();
    let success = errors_deg.iter().all(|e| e.abs() <= threshold_deg);
    Score { errors_deg, success }
}

/// Output of one method on one trial.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub angles: Vec<LabeledAngle>,
    pub score: Score,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub residual_trace: Vec<f64>,
    pub runtime_s: f64,
    /// Solver error or degenerate grid output.
    pub failure: Option<String>,
}

/// Everything produced by one trial at one sweep point.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: u64,
    pub point: SweepPoint,
    pub scene: UserScene,
    pub runs: Vec<MethodRun>,
    /// Full-space Ziv-Zakai bound in radians squared.
    pub zzb_rad2: Option<f64>,
    pub zzb_singular: bool,
}

/// Trial RNG: the master seed with stream `trial`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Validated config plus the steering tables shared by all trials.
pub struct Harness {
    cfg: ExperimentConfig,
    scenario: Scenario,
    tables: BTreeMap<usize, Arc<SteeringTable>>,
}

impl Harness {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let scenario = cfg.scenario()?;
        let mut tables = BTreeMap::new();
        if cfg.methods.iter().any(|m| !m.is_fri()) {
            let [lo, hi] = cfg.angle_region;
            let grid = uniform_grid(lo, hi, cfg.grid_step_deg);
            for &n in &cfg.n {
                tables.insert(n, Arc::new(SteeringTable::new(grid.clone(), n)?));
            }
        }
        Ok(Self { cfg, scenario, tables })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Scene, surface, channel and measurements of one trial.
    pub fn synthesize(&self, point: SweepPoint, trial: u64) -> Result<(UserScene, MeasurementBatch)> {
        let cfg = &self.cfg;
        let mut rng = trial_rng(cfg.seed, trial);
        let scene = match (&cfg.theta_rs, &cfg.theta_ts) {
            (Some(r), Some(t)) => UserScene::with_random_gains(r.clone(), t.clone(), &mut rng)?,
            _ => {
                let [lo, hi] = cfg.angle_region;
                UserScene::random(cfg.k_r, cfg.k_t, (lo, hi), cfg.min_sep_deg, &mut rng)?
            }
        };
        let channel = Channel::generate(point.n, cfg.channel, &mut rng);
        let opts = ProfileOptions { sign: cfg.sign_pattern(), freeze_amplitudes: false };
        let profile = generate_profile_with(self.scenario, point.n, cfg.t_s, &opts, &mut rng)?;
        let mut batch = synthesize_measurements(&scene, &profile, &channel, point.snr(), &mut rng)?;
        batch.seed = trial;
        Ok((scene, batch))
    }

    /// Runs every configured method on the same synthesized batch.
    pub fn run_trial(&self, point: SweepPoint, trial: u64) -> Result<TrialOutcome> {
        let (scene, batch) = self.synthesize(point, trial)?;
        let runs = self.cfg.methods.iter().map(|&m| self.run_method(m, &batch, &scene)).collect();
        let (zzb_rad2, zzb_singular) = if self.cfg.compute_bound && batch.sigma_n2 > 0.0 {
            let b = zzb_full(&ZzbInputs::new(&scene, &batch.operator_paired, batch.sigma_n2))?;
            (Some(b.mse), b.singular_fim)
        } else {
            (None, false)
        };
        Ok(TrialOutcome { trial, point, scene, runs, zzb_rad2, zzb_singular })
    }

    fn run_method(&self, method: Method, batch: &MeasurementBatch, scene: &UserScene) -> MethodRun {
        let start = Instant::now();
        let out = self.estimate(method, batch);
        let runtime_s = start.elapsed().as_secs_f64();
        let threshold = self.cfg.success_threshold_deg;
        match out {
            Ok(est) => {
                let mut score = match_and_score(&est.angles, scene, threshold);
                if est.flagged {
                    score.success = false;
                }
                MethodRun {
                    method,
                    score,
                    angles: est.angles,
                    iterations: est.iterations,
                    converged: est.converged,
                    residual_trace: est.residual_trace,
                    runtime_s,
                    failure: est.flagged.then(|| "degenerate grid estimate".to_string()),
                }
            }
            Err(e) => MethodRun {
                method,
                angles: Vec::new(),
                score: Score { errors_deg: Vec::new(), success: false },
                iterations: None,
                converged: None,
                residual_trace: Vec::new(),
                runtime_s,
                failure: Some(e.to_string()),
            },
        }
    }

    fn estimate(&self, method: Method, batch: &MeasurementBatch) -> Result<Estimate> {
        let cfg = &self.cfg;
        let n = batch.n();
        match method {
            Method::M1 => {
                let mut pc = PgdConfig::new(n, cfg.k());
                pc.i_max = cfg.i_max;
                pc.eps = cfg.eps;
                pc.af_order = cfg.af_order;
                let r = estimate_angles_uniform(batch, &pc)?;
                Ok(Estimate::from_recovery(r.angles, r.iterations, r.converged, r.residual_trace))
            }
            Method::M2 => {
                let mut pc = PairedPgdConfig::new(n, cfg.k_r, cfg.k_t);
                pc.i_max = cfg.i_max;
                pc.eps = cfg.eps;
                pc.af_order = cfg.af_order;
                let r = estimate_angles_nonuniform(batch, &pc)?;
                Ok(Estimate::from_recovery(r.angles, r.iterations, r.converged, r.residual_trace))
            }
            Method::Fft | Method::Omp | Method::Sbl => {
                let table = self
                    .tables
                    .get(&n)
                    .ok_or_else(|| Error::Config(format!("no steering table for n={n}")))?;
                let mut est = Estimate::default();
                for (k_i, side) in [(cfg.k_r, Subspace::Reflection), (cfg.k_t, Subspace::Transmission)] {
                    if k_i == 0 {
                        continue;
                    }
                    let dict = build_dictionary_with(batch, side, Arc::clone(table))?;
                    let (g, iters) = match method {
                        Method::Fft => (fft_scan(batch, &dict, k_i)?, None),
                        Method::Omp => (omp(batch, &dict, k_i)?, None),
                        _ => {
                            let s = sbl(batch, &dict, k_i, &SblConfig::default())?;
                            (s.estimate, Some(s.iterations))
                        }
                    };
                    est.flagged |= g.flagged;
                    if let Some(it) = iters {
                        *est.iterations.get_or_insert(0) += it;
                    }
                    est.angles.extend(g.angles.into_iter().map(|theta_deg| LabeledAngle { theta_deg, subspace: side }));
                }
                Ok(est)
            }
        }
    }
}

#[derive(Debug, Default)]
struct Estimate {
    angles: Vec<LabeledAngle>,
    iterations: Option<usize>,
    converged: Option<bool>,
    residual_trace: Vec<f64>,
    flagged: bool,
}

impl Estimate {
    fn from_recovery(angles: Vec<LabeledAngle>, iterations: usize, converged: bool, trace: Vec<f64>) -> Self {
        Self { angles, iterations: Some(iterations), converged: Some(converged), residual_trace: trace, flagged: false }
    }
}

/// Runs one trial of `cfg` at `point`.
pub fn run_trial(cfg: &ExperimentConfig, point: SweepPoint, trial: u64) -> Result<TrialOutcome> {
    Harness::new(cfg.clone())?.run_trial(point, trial)
}

/// Aggregate of one method at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment: ExperimentKind,
    pub method: Method,
    pub scenario: u8,
    pub n: usize,
    pub ts: usize,
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub successes: usize,
    pub success_prob: f64,
    /// Over successful trials only; absent without successes.
    pub rmse_deg: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_runtime_s: f64,
}

/// One row per (trial, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub n: usize,
    pub snr_db: Option<f64>,
    pub trial: u64,
    pub success: bool,
    pub max_abs_error_deg: Option<f64>,
    pub mse_deg2: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub runtime_s: f64,
    pub zzb_rad2: Option<f64>,
    pub failure: Option<String>,
}

/// Mean bound over the trials of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub scenario: u8,
    pub n: usize,
    pub ts: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub zzb_rad2: f64,
    pub zzb_rmse_deg: f64,
    pub singular_trials: usize,
}

/// Mean `||b_i - b_{i-1}||` at iteration `iteration` (1-based). Trials that
/// stopped earlier contribute their last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub method: Method,
    pub n: usize,
    pub snr_db: Option<f64>,
    pub iteration: usize,
    pub mean_residual: f64,
    pub active_trials: usize,
}

/// Sampled annihilating-filter magnitude of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCurve {
    pub method: Method,
    /// `C` for the stacked estimator, `C_R` / `C_T` for the paired one.
    pub label: String,
    pub theta_deg: Vec<f64>,
    pub value: Vec<f64>,
    pub minima_deg: Vec<f64>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub records: Vec<MetricsRecord>,
    pub trials: Vec<TrialRecord>,
    pub bounds: Vec<BoundRecord>,
    pub convergence: Vec<ConvergenceRecord>,
    pub spectra: Vec<SpectrumCurve>,
    /// Raw outcomes, point-major then trial order.
    pub outcomes: Vec<TrialOutcome>,
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every trial at every sweep point and aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let harness = Harness::new(cfg.clone())?;
    let points = cfg.points();
    let jobs: Vec<(SweepPoint, u64)> = points
        .iter()
        .flat_map(|&p| (0..cfg.trials as u64).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = with_pool(cfg.workers, || {
        jobs.par_iter()
            .map(|&(p, t)| harness.run_trial(p, t))
            .collect::<Result<Vec<_>>>()
    })??;
    let spectra = if cfg.experiment == ExperimentKind::Spectrum {
        spectrum_curves(&harness, points[0])?
    } else {
        Vec::new()
    };
    Ok(ExperimentOutput {
        config: cfg.clone(),
        records: aggregate(cfg, &points, &outcomes),
        trials: trial_records(&outcomes),
        bounds: bound_records(cfg, &points, &outcomes),
        convergence: if cfg.experiment == ExperimentKind::Convergence {
            convergence_records(cfg, &points, &outcomes)
        } else {
            Vec::new()
        },
        spectra,
        outcomes,
    })
}

fn at_point<'a>(outcomes: &'a [TrialOutcome], p: SweepPoint) -> impl Iterator<Item = &'a TrialOutcome> + 'a {
    outcomes.iter().filter(move |o| o.point == p)
}

/// Metrics per (sweep point, method), in point then method order.
pub fn aggregate(cfg: &ExperimentConfig, points: &[SweepPoint], outcomes: &[TrialOutcome]) -> Vec<MetricsRecord> {
    let mut out = Vec::new();
    for &p in points {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let runs: Vec<&MethodRun> = at_point(outcomes, p).map(|o| &o.runs[mi]).collect();
            let trials = runs.len();
            let ok: Vec<&&MethodRun> = runs.iter().filter(|r| r.score.success).collect();
            let successes = ok.len();
            let rmse_deg = (successes > 0).then(|| {
                let (sum, count) = ok.iter().fold((0.0, 0usize), |(s, c), r| {
                    (s + r.score.errors_deg.iter().map(|e| e * e).sum::<f64>(), c + r.score.errors_deg.len())
                });
                (sum / count as f64).sqrt()
            });
            let iters: Vec<usize> = runs.iter().filter_map(|r| r.iterations).collect();
            let mean_iterations =
                (!iters.is_empty()).then(|| iters.iter().sum::<usize>() as f64 / iters.len() as f64);
            let mean_runtime_s = if trials > 0 {
                runs.iter().map(|r| r.runtime_s).sum::<f64>() / trials as f64
            } else {
                0.0
            };
            out.push(MetricsRecord {
                experiment: cfg.experiment,
                method,
                scenario: cfg.scenario,
                n: p.n,
                ts: cfg.t_s,
                snr_db: p.snr_db,
                trials,
                successes,
                success_prob: if trials > 0 { successes as f64 / trials as f64 } else { 0.0 },
                rmse_deg,
                mean_iterations,
                mean_runtime_s,
            });
        }
    }
    out
}

fn trial_records(outcomes: &[TrialOutcome]) -> Vec<TrialRecord> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.runs.iter().map(move |r| TrialRecord {
                method: r.method,
                n: o.point.n,
                snr_db: o.point.snr_db,
                trial: o.trial,
                success: r.score.success,
                max_abs_error_deg: r.score.max_abs_error(),
                mse_deg2: r.score.mse_deg2(),
                iterations: r.iterations,
                converged: r.converged,
                runtime_s: r.runtime_s,
                zzb_rad2: o.zzb_rad2,
                failure: r.failure.clone(),
            })
        })
        .collect()
}

fn bound_records(cfg: &ExperimentConfig, points: &[SweepPoint], outcomes: &[TrialOutcome]) -> Vec<BoundRecord> {
    points
        .iter()
        .filter_map(|&p| {
            let snr_db = p.snr_db?;
            let vals: Vec<(f64, bool)> =
                at_point(outcomes, p).filter_map(|o| o.zzb_rad2.map(|z| (z, o.zzb_singular))).collect();
            if vals.is_empty() {
                return None;
            }
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / vals.len() as f64;
            Some(BoundRecord {
                scenario: cfg.scenario,
                n: p.n,
                ts: cfg.t_s,
                snr_db,
                trials: vals.len(),
                zzb_rad2: mean,
                zzb_rmse_deg: mean.sqrt().to_degrees(),
                singular_trials: vals.iter().filter(|v| v.1).count(),
            })
        })
        .collect()
}

fn convergence_records(
    cfg: &ExperimentConfig,
    points: &[SweepPoint],
    outcomes: &[TrialOutcome],
) -> Vec<ConvergenceRecord> {
    let mut out = Vec::new();
    for &p in points {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let traces: Vec<&[f64]> = at_point(outcomes, p)
                .map(|o| o.runs[mi].residual_trace.as_slice())
                .filter(|t| !t.is_empty())
                .collect();
            let longest = traces.iter().map(|t| t.len()).max().unwrap_or(0);
            for i in 0..longest {
                let sum: f64 = traces.iter().map(|t| t[i.min(t.len() - 1)]).sum();
                out.push(ConvergenceRecord {
                    method,
                    n: p.n,
                    snr_db: p.snr_db,
                    iteration: i + 1,
                    mean_residual: sum / traces.len() as f64,
                    active_trials: traces.iter().filter(|t| t.len() > i).count(),
                });
            }
        }
    }
    out
}

/// Annihilating-filter spectra of trial 0 at `point`, over the configured
/// angle region.
pub fn spectrum_curves(harness: &Harness, point: SweepPoint) -> Result<Vec<SpectrumCurve>> {
    let cfg = harness.config();
    let (_, batch) = harness.synthesize(point, 0)?;
    let [lo, hi] = cfg.angle_region;
    let grid = uniform_grid(lo, hi, cfg.spectrum_step_deg);
    let mut curves = Vec::new();
    let mut push = |method: Method, label: &str, coeffs: &crate::CVector| {
        let value = af_spectrum(coeffs, &grid);
        let minima_deg = local_minima(&grid, &value);
        curves.push(SpectrumCurve { method, label: label.into(), theta_deg: grid.clone(), value, minima_deg });
    };
    for &m in &cfg.methods {
        match m {
            Method::M1 => {
                let mut pc = PgdConfig::new(point.n, cfg.k());
                pc.i_max = cfg.i_max;
                pc.eps = cfg.eps;
                pc.af_order = cfg.af_order;
                let r = estimate_angles_uniform(&batch, &pc)?;
                push(m, "C", &r.af_coeffs[0]);
            }
            Method::M2 => {
                let mut pc = PairedPgdConfig::new(point.n, cfg.k_r, cfg.k_t);
                pc.i_max = cfg.i_max;
                pc.eps = cfg.eps;
                pc.af_order = cfg.af_order;
                let r = estimate_angles_nonuniform(&batch, &pc)?;
                for (c, label) in r.af_coeffs.iter().zip(["C_R", "C_T"]) {
                    if !c.is_empty() {
                        push(m, label, c);
                    }
                }
            }
            _ => {}
        }
    }
    Ok(curves)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    files: Vec<String>,
}

#[derive(Serialize)]
struct SpectrumRow<'a> {
    method: Method,
    curve: &'a str,
    theta_deg: f64,
    value: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `trials.csv`, the optional bound, convergence and
/// spectrum tables, and a `run.json` sidecar into `dir`. Returns the file
/// names written.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, res: Result<()>| -> Result<()> {
        res?;
        files.push(name.to_string());
        Ok(())
    };
    emit("metrics.csv", write_csv(&dir.join("metrics.csv"), &out.records))?;
    emit("trials.csv", write_csv(&dir.join("trials.csv"), &out.trials))?;
    if !out.bounds.is_empty() {
        emit("bounds.csv", write_csv(&dir.join("bounds.csv"), &out.bounds))?;
    }
    if !out.convergence.is_empty() {
        emit("convergence.csv", write_csv(&dir.join("convergence.csv"), &out.convergence))?;
    }
    if !out.spectra.is_empty() {
        let rows: Vec<SpectrumRow> = out
            .spectra
            .iter()
            .flat_map(|c| {
                c.theta_deg.iter().zip(&c.value).map(move |(&theta_deg, &value)| SpectrumRow {
                    method: c.method,
                    curve: &c.label,
                    theta_deg,
                    value,
                })
            })
            .collect();
        emit("spectrum.csv", write_csv(&dir.join("spectrum.csv"), &rows))?;
    }
    files.push("run.json".into());
    let sidecar = Sidecar { version: VERSION, config: &out.config, files: files.clone() };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(files)
}

/// Reads a `metrics.csv` back.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
