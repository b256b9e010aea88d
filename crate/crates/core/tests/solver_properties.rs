use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use star_fri::model::{
    generate_profile, synthesize_measurements, Channel, ChannelModel, MeasurementBatch, Scenario,
    Snr, UserScene,
};
use star_fri::paired::{estimate_angles_nonuniform, PairedPgdConfig};
use star_fri::uniform::{estimate_angles_uniform, PgdConfig};
use star_fri::{RecoveryResult, Subspace};

fn noiseless(scen: Scenario, seed: u64) -> (MeasurementBatch, UserScene) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = UserScene::random(2, 2, (-60.0, 60.0), 2.0, &mut rng).unwrap();
    let p = generate_profile(scen, 16, 256, &mut rng).unwrap();
    let ch = Channel::generate(16, ChannelModel::UnitModulus, &mut rng);
    let b = synthesize_measurements(&scene, &p, &ch, Snr::Noiseless, &mut rng).unwrap();
    (b, scene)
}

/// Largest error after sorting each side; infinite on a count mismatch.
fn worst_error(r: &RecoveryResult, scene: &UserScene) -> f64 {
    let side = |s: Subspace, truth: &[f64]| {
        let mut est: Vec<f64> = r.angles.iter().filter(|a| a.subspace == s).map(|a| a.theta_deg).collect();
        let mut truth = truth.to_vec();
        if est.len() != truth.len() {
            return f64::INFINITY;
        }
        est.sort_by(f64::total_cmp);
        truth.sort_by(f64::total_cmp);
        est.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    side(Subspace::Reflection, &scene.theta_rs).max(side(Subspace::Transmission, &scene.theta_ts))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stacked_solver_is_exact_without_noise(seed: u64) {
        let (b, scene) = noiseless(Scenario::UniformEs, seed);
        let mut cfg = PgdConfig::new(16, 4);
        cfg.eps = 1e-10;
        cfg.i_max = 5000;
        let r = estimate_angles_uniform(&b, &cfg).unwrap();
        prop_assert!(r.converged);
        let e = worst_error(&r, &scene);
        prop_assert!(e <= 1e-6, "error {e} deg for {scene:?}");
    }

    #[test]
    fn paired_solver_is_exact_without_noise(
        scen in prop_oneof![Just(Scenario::UniformEs), Just(Scenario::NonuniformEs)],
        seed: u64,
    ) {
        let (b, scene) = noiseless(scen, seed);
        let mut cfg = PairedPgdConfig::new(16, 2, 2);
        cfg.eps = 1e-10;
        cfg.i_max = 5000;
        let r = estimate_angles_nonuniform(&b, &cfg).unwrap();
        prop_assert!(r.converged);
        let e = worst_error(&r, &scene);
        prop_assert!(e <= 1e-6, "error {e} deg for {scene:?}");
    }

    #[test]
    fn solvers_are_deterministic(seed: u64) {
        let (b, _) = noiseless(Scenario::UniformEs, seed);
        let r1 = estimate_angles_uniform(&b, &PgdConfig::new(16, 4)).unwrap();
        let r2 = estimate_angles_uniform(&b, &PgdConfig::new(16, 4)).unwrap();
        prop_assert_eq!(r1.angles, r2.angles);
        prop_assert_eq!(r1.residual_trace, r2.residual_trace);
        let p1 = estimate_angles_nonuniform(&b, &PairedPgdConfig::new(16, 2, 2)).unwrap();
        let p2 = estimate_angles_nonuniform(&b, &PairedPgdConfig::new(16, 2, 2)).unwrap();
        prop_assert_eq!(p1.angles, p2.angles);
    }

    /// Every recorded step respects the stopping rule only at the end.
    #[test]
    fn trace_matches_stopping_rule(seed: u64) {
        let (b, _) = noiseless(Scenario::NonuniformEs, seed);
        let cfg = PairedPgdConfig::new(16, 2, 2);
        let r = estimate_angles_nonuniform(&b, &cfg).unwrap();
        prop_assert_eq!(r.iterations, r.residual_trace.len());
        let (last, head) = r.residual_trace.split_last().unwrap();
        prop_assert!(head.iter().all(|&s| s > cfg.eps));
        prop_assert_eq!(r.converged, *last <= cfg.eps);
    }
}
