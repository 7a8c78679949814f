use std::f64::consts::PI;

use darkstate_core::dynamics::{evolve_between, mixed_ground_state, LindbladGenerator, StepControl};
use darkstate_core::model::{
    build_hamiltonian, FrequencyReference, LaserDrive, MagneticField, PhaseProfile, Polarization, QdParameters,
    SystemConfig,
};
use darkstate_core::nuclear::{sample_oh, wander_convolve, Grid2, OhEnsembleSpec, Philox4x64};
use darkstate_core::observables::{bright_population_after_phase_jump, dark_state};
use darkstate_core::qcore::{devec, hermitian_eigenvalues, solve_linear, vec, ComplexMatrix, StateDiagnostics};
use darkstate_core::C64;
use proptest::prelude::*;

fn field() -> impl Strategy<Value = MagneticField> {
    (-40.0..40.0f64, -40.0..40.0f64, -40.0..40.0f64).prop_map(|(x, y, z)| MagneticField::new(x, y, z))
}

fn polarization() -> impl Strategy<Value = Polarization> {
    (0.0..PI, 0.0..2.0 * PI).prop_map(|(theta, phi)| {
        Polarization::new(C64::new((theta / 2.0).cos(), 0.0), C64::from_polar((theta / 2.0).sin(), phi)).unwrap()
    })
}

fn laser() -> impl Strategy<Value = LaserDrive> {
    (0.0..2.0f64, -2.0..2.0f64, polarization(), -PI..PI, 0..3usize).prop_map(|(r, d, pol, phase, reference)| {
        let g = QdParameters::default().linewidth();
        let reference = match reference {
            0 => FrequencyReference::Bare,
            1 => FrequencyReference::Fixed { offset_mhz: 80.0 },
            _ => FrequencyReference::UpperLeg,
        };
        LaserDrive::new(r * g, d * g, pol).with_reference(reference).with_phase(PhaseProfile::constant(phase))
    })
}

fn system() -> impl Strategy<Value = (SystemConfig, MagneticField)> {
    (field(), field(), prop::collection::vec(laser(), 1..=2), 0.0..50.0f64, 0.0..200.0f64).prop_map(
        |(b_ext, oh, lasers, dephasing, dnsp)| {
            let qd = QdParameters { spin_dephasing_rate: dephasing, dnsp_splitting: dnsp, ..QdParameters::default() };
            (SystemConfig { qd, b_ext, lasers, oh_dispersion_sigma: 0.0 }, oh)
        },
    )
}

fn complex() -> impl Strategy<Value = C64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| C64::new(re, im))
}

fn matrix(n: usize) -> impl Strategy<Value = ComplexMatrix> {
    prop::collection::vec(complex(), n * n).prop_map(move |v| ComplexMatrix::from_vec(n, n, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_preserves_trace_hermiticity_and_positivity((cfg, oh) in system()) {
        let gen = LindbladGenerator::for_system(&cfg, &oh).unwrap();
        let tr = evolve_between(&gen, &mixed_ground_state(), 0.0, 0.02, StepControl::default(), 0.005).unwrap();
        for rho in &tr.states {
            let d = StateDiagnostics::of(rho.matrix()).unwrap();
            prop_assert!(d.trace_error <= 1e-9, "{d:?}");
            prop_assert!(d.hermiticity_error <= 1e-10, "{d:?}");
            prop_assert!(d.min_eigenvalue >= -1e-8, "{d:?}");
        }
    }

    #[test]
    fn hamiltonian_is_hermitian_and_2pi_periodic_in_laser_phase((cfg, oh) in system(), t in 0.0..0.1f64, k in -3i32..=3) {
        let h = build_hamiltonian(&cfg, &oh, t);
        prop_assert!(h.hermiticity_error() < 1e-9);
        let mut shifted = cfg.clone();
        for l in &mut shifted.lasers {
            let p = l.phase.value(0.0) + 2.0 * PI * k as f64;
            l.phase = PhaseProfile::constant(p);
        }
        let h2 = build_hamiltonian(&shifted, &oh, t);
        prop_assert!((&h - &h2).norm_max() <= 1e-9 * (1.0 + h.norm_max()));
    }

    #[test]
    fn vec_devec_round_trip(m in matrix(4)) {
        prop_assert_eq!(devec(&vec(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn kron_mixed_product(a in matrix(2), b in matrix(2), c in matrix(2), d in matrix(2)) {
        let lhs = &a.kron(&b) * &c.kron(&d);
        let rhs = (&a * &c).kron(&(&b * &d));
        prop_assert!((&lhs - &rhs).norm_max() < 1e-13);
    }

    #[test]
    fn diagonally_dominant_solves_have_small_residuals(m in matrix(16), b in prop::collection::vec(complex(), 16)) {
        let mut a = m;
        for i in 0..16 {
            a[(i, i)] += C64::new(17.0, 0.0);
        }
        let x = solve_linear(&a, &b).unwrap();
        let r = a.mat_vec(&x).unwrap();
        for (ri, bi) in r.iter().zip(&b) {
            prop_assert!((ri - bi).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_eigenvalues_sum_to_trace(m in matrix(4)) {
        let h = m.hermitian_part();
        let ev = hermitian_eigenvalues(&h).unwrap();
        prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!((ev.iter().sum::<f64>() - h.trace().re).abs() < 1e-12);
        let sq: f64 = ev.iter().map(|e| e * e).sum();
        prop_assert!((sq - h.norm_frobenius().powi(2)).abs() < 1e-11);
    }

    #[test]
    fn dark_state_is_null_and_jump_population_is_2pi_periodic(
        up in complex(), down in complex(), dphi in -10.0..10.0f64,
    ) {
        prop_assume!(up.norm() > 1e-3 || down.norm() > 1e-3);
        let pair = dark_state(up, down).unwrap();
        prop_assert!((up * pair.dark[0] + down * pair.dark[1]).norm() < 1e-12);
        let p = bright_population_after_phase_jump(&pair, dphi);
        let q = bright_population_after_phase_jump(&pair, dphi + 2.0 * PI);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
        prop_assert!((p - q).abs() < 1e-12);
        let (a, b) = (pair.alpha * pair.alpha, pair.beta * pair.beta);
        prop_assert!(p <= 4.0 * a * b / ((a + b) * (a + b)) + 1e-12);
    }

    #[test]
    fn random_streams_are_pure_functions_of_seed_and_index(seed: u64, index in 0usize..1_000_000, sigma in 0.0..50.0f64) {
        let spec = OhEnsembleSpec::new(sigma, 1, seed).unwrap();
        prop_assert_eq!(sample_oh(&spec, index), sample_oh(&spec, index));
        let rng = Philox4x64::new([seed, 1]);
        prop_assert_eq!(rng.block([index as u64, 0, 0, 0]), Philox4x64::new([seed, 1]).block([index as u64, 0, 0, 0]));
    }

    #[test]
    fn wander_preserves_the_map_mean(values in prop::collection::vec(0.0..1.0f64, 121), sigma in 0.0..60.0f64) {
        let axis: Vec<f64> = (0..11).map(|k| 10.0 * k as f64).collect();
        let map = Grid2::new(axis.clone(), axis, values).unwrap();
        let out = wander_convolve(&map, sigma).unwrap();
        prop_assert!((out.map.mean() - map.mean()).abs() < 1e-12);
        prop_assert!(out.map.values.iter().all(|v| *v >= 0.0));
    }
}
