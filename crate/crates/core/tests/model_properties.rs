use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use star_fri::linalg::singular_values;
use star_fri::model::{
    build_paired_operator, build_uniform_operator, generate_profile, generate_profile_with,
    latent_fri_vectors, noiseless_measurements, steering_vector, Channel, ChannelModel,
    ProfileOptions, Scenario, SignPattern, UserScene,
};
use star_fri::uniform::{latent_operator, slot_basis, step_interval};
use star_fri::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

fn scenario() -> impl Strategy<Value = Scenario> {
    prop_oneof![Just(Scenario::UniformEs), Just(Scenario::NonuniformEs)]
}

fn setup(scen: Scenario, n: usize, t_s: usize, seed: u64) -> (star_fri::model::StarRisProfile, Channel, UserScene) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = generate_profile(scen, n, t_s, &mut rng).unwrap();
    let ch = Channel::generate(n, ChannelModel::UnitModulus, &mut rng);
    let scene = UserScene::random(2, 2, (-60.0, 60.0), 2.0, &mut rng).unwrap();
    (p, ch, scene)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn energy_and_phase_constraints(scen in scenario(), n in 2usize..20, t_s in 1usize..16, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = generate_profile(scen, n, t_s, &mut rng).unwrap();
        for e in 0..n {
            for t in 0..t_s {
                let (r, tr) = (p.reflection(e, t), p.transmission(e, t));
                prop_assert!((r.norm_sqr() + tr.norm_sqr() - 1.0).abs() <= 1e-12);
                let d = (r.arg() - tr.arg()).rem_euclid(2.0 * PI);
                prop_assert!((d - FRAC_PI_2).abs().min((d - 3.0 * FRAC_PI_2).abs()) <= 1e-10);
                let b2 = r.norm_sqr();
                match scen {
                    Scenario::UniformEs => prop_assert!((b2 - 0.5).abs() <= 1e-12),
                    Scenario::NonuniformEs => prop_assert!((0.2 - 1e-12..=0.8 + 1e-12).contains(&b2)),
                }
            }
        }
        if scen == Scenario::UniformEs {
            prop_assert!(p.is_element_uniform());
        }
    }

    #[test]
    fn paired_operator_reproduces_measurements(scen in scenario(), n in 4usize..17, t_s in 1usize..40, seed: u64) {
        let (p, ch, scene) = setup(scen, n, t_s, seed);
        let y = noiseless_measurements(&scene, &p, &ch).unwrap();
        let psi = build_paired_operator(&p, &ch).unwrap();
        let lat = latent_fri_vectors(&scene, &p);
        let b = DVector::from_iterator(2 * n, lat.x_r.iter().chain(lat.x_t.iter()).copied());
        prop_assert!((psi.transpose() * b - &y).norm() <= 1e-10 * y.norm().max(1.0));
    }

    #[test]
    fn uniform_operator_reproduces_measurements(n in 4usize..17, t_s in 1usize..40, seed: u64) {
        let (p, ch, scene) = setup(Scenario::UniformEs, n, t_s, seed);
        let y = noiseless_measurements(&scene, &p, &ch).unwrap();
        let op = build_uniform_operator(&p, &ch).unwrap();
        let r = latent_fri_vectors(&scene, &p).r.unwrap();
        for t in 0..t_s {
            let yt = (op.rows.row(t) * &r[t])[0];
            prop_assert!((yt - y[t]).norm() <= 1e-10);
        }
    }

    /// `I - 2 mu A^H A` is non-expansive for any step in the admissible
    /// interval.
    #[test]
    fn gradient_map_is_non_expansive(
        sign in prop_oneof![Just(SignPattern::Fixed), Just(SignPattern::Random)],
        t_s in 2usize..64,
        alpha in 1usize..15,
        frac in 0.0..1.0f64,
        seed: u64,
    ) {
        let n = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = ProfileOptions { sign, freeze_amplitudes: false };
        let p = generate_profile_with(Scenario::UniformEs, n, t_s, &opts, &mut rng).unwrap();
        let ch = Channel::generate(n, ChannelModel::UnitModulus, &mut rng);
        let op = build_uniform_operator(&p, &ch).unwrap();
        let a = latent_operator(&op, &slot_basis(&op.g));
        let lam = singular_values(&a)[0].powi(2);
        let (lo, hi) = step_interval(lam, alpha).unwrap();
        let mu = lo + frac * (hi - lo);
        let id = nalgebra::DMatrix::<Complex64>::identity(a.ncols(), a.ncols());
        let g = id - a.ad_mul(&a) * Complex64::new(2.0 * mu, 0.0);
        let worst = singular_values(&g)[0];
        prop_assert!(worst <= 1.0 + 1e-10, "spectral norm {worst}");
        let psi = build_paired_operator(&p, &ch).unwrap();
        let rows = psi.transpose();
        let lam2 = singular_values(&rows)[0].powi(2);
        let (lo2, hi2) = step_interval(lam2, alpha).unwrap();
        let mu2 = lo2 + frac * (hi2 - lo2);
        let id2 = nalgebra::DMatrix::<Complex64>::identity(2 * n, 2 * n);
        let g2 = id2 - rows.ad_mul(&rows) * Complex64::new(2.0 * mu2, 0.0);
        prop_assert!(singular_values(&g2)[0] <= 1.0 + 1e-10);
    }

    #[test]
    fn generation_is_deterministic(scen in scenario(), seed: u64) {
        let a = setup(scen, 12, 9, seed);
        let b = setup(scen, 12, 9, seed);
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1, b.1);
        prop_assert_eq!(a.2, b.2);
    }

    #[test]
    fn steering_vectors_have_unit_modulus(theta in -89.0..89.0f64, n in 1usize..32) {
        let a = steering_vector(theta, n);
        prop_assert!(a.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-14));
        prop_assert!((a[0] - Complex64::new(1.0, 0.0)).norm() <= 1e-15);
    }
}
