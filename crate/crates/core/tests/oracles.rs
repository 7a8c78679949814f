//! Closed-form and textbook reference values.

use std::f64::consts::PI;

use darkstate_core::dynamics::{
    evolve, evolve_between, mixed_ground_state, periodic_steady_state, rk4_step_matrix, steady_state, LindbladGenerator,
    StepControl,
};
use darkstate_core::fit::fit_least_squares;
use darkstate_core::model::{
    FrequencyReference, LaserDrive, MagneticField, Polarization, QdParameters, SystemConfig, T_DOWN, T_UP,
};
use darkstate_core::nuclear::{
    box_muller, sample_oh, unit_interval, wander_convolve, EnsembleEstimate, Grid2, OhEnsembleSpec, Philox4x64,
};
use darkstate_core::observables::{bloch_vector, bright_population_after_phase_jump, dark_state, g2};
use darkstate_core::qcore::{
    commutator_superop, devec, dissipator_superop, hermitian_eigenvalues, solve_linear, vec, ComplexMatrix,
    DensityMatrix,
};
use darkstate_core::C64;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn pseudo_random(n: usize, seed: u64) -> ComplexMatrix {
    let rng = Philox4x64::new([seed, 7]);
    ComplexMatrix::from_fn(n, n, |i, j| {
        let b = rng.block([(i * n + j) as u64, 0, 0, 0]);
        c(unit_interval(b[0]) - 0.5, unit_interval(b[1]) - 0.5)
    })
}

fn max_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    (a - b).norm_max()
}

fn sigma_plus_cycling(rabi: f64, offset: f64) -> SystemConfig {
    let qd = QdParameters::default();
    let bz = 5.0;
    let detuning = 0.5 * (qd.gyro_hole - qd.gyro_electron) * bz + offset;
    SystemConfig {
        qd,
        b_ext: MagneticField::new(0.0, 0.0, bz),
        lasers: vec![LaserDrive::new(rabi, detuning, Polarization::sigma_plus())],
        oh_dispersion_sigma: 0.0,
    }
}

#[test]
fn kron_satisfies_the_mixed_product_rule() {
    let (a, b, cc, d) = (pseudo_random(2, 1), pseudo_random(3, 2), pseudo_random(2, 3), pseudo_random(3, 4));
    let lhs = &a.kron(&b) * &cc.kron(&d);
    let rhs = (&a * &cc).kron(&(&b * &d));
    assert!(max_diff(&lhs, &rhs) < 1e-14);
}

#[test]
fn column_stacking_identity_for_sandwich_products() {
    // vec(AXB) = (Bᵀ ⊗ A) vec(X)
    let (a, x, b) = (pseudo_random(4, 5), pseudo_random(4, 6), pseudo_random(4, 7));
    let lhs = vec(&(&(&a * &x) * &b)).unwrap();
    let rhs = b.transpose().kron(&a).mat_vec(&vec(&x).unwrap()).unwrap();
    for (l, r) in lhs.iter().zip(&rhs) {
        assert!((l - r).norm() < 1e-14);
    }
}

#[test]
fn superoperators_match_their_matrix_forms() {
    let h = pseudo_random(4, 8).hermitian_part();
    let l = pseudo_random(4, 9);
    let rho = pseudo_random(4, 10);
    let expect_comm = (&(&h * &rho) - &(&rho * &h)).scale(c(0.0, -1.0));
    let got = devec(&commutator_superop(&h).mat_vec(&vec(&rho).unwrap()).unwrap()).unwrap();
    assert!(max_diff(&got, &expect_comm) < 1e-14);

    let ld = l.adjoint();
    let ldl = &ld * &l;
    let anti = &(&ldl * &rho) + &(&rho * &ldl);
    let expect_diss = &(&(&l * &rho) * &ld) - &anti.scale_real(0.5);
    let got = devec(&dissipator_superop(&l).mat_vec(&vec(&rho).unwrap()).unwrap()).unwrap();
    assert!(max_diff(&got, &expect_diss) < 1e-14);
}

#[test]
fn linear_solve_recovers_a_known_solution() {
    let mut a = pseudo_random(16, 11);
    for i in 0..16 {
        a[(i, i)] += c(4.0, 0.0);
    }
    let x: Vec<C64> = (0..16).map(|k| c(k as f64, -0.5 * k as f64)).collect();
    let b = a.mat_vec(&x).unwrap();
    let got = solve_linear(&a, &b).unwrap();
    for (g, e) in got.iter().zip(&x) {
        assert!((g - e).norm() < 1e-12, "{g} vs {e}");
    }
}

#[test]
fn singular_system_is_reported() {
    let a = ComplexMatrix::from_fn(3, 3, |i, _| c(i as f64, 0.0));
    assert!(solve_linear(&a, &[c(1.0, 0.0); 3]).is_err());
}

#[test]
fn eigenvalues_of_a_rotated_diagonal_matrix() {
    let d = ComplexMatrix::from_real_diagonal(&[-1.5, 0.25, 2.0, 7.0]);
    // unitary from the Hermitian generator via a Cayley transform
    let k = pseudo_random(4, 12).hermitian_part();
    let i = ComplexMatrix::identity(4);
    let plus = &i + &k.scale(c(0.0, 1.0));
    let minus = &i - &k.scale(c(0.0, 1.0));
    let inv = darkstate_core::qcore::LuDecomposition::new(&plus).unwrap().solve_matrix(&i).unwrap();
    let u = &minus * &inv;
    let m = &(&u * &d) * &u.adjoint();
    let ev = hermitian_eigenvalues(&m).unwrap();
    for (g, e) in ev.iter().zip([-1.5, 0.25, 2.0, 7.0]) {
        assert!((g - e).abs() < 1e-12, "{ev:?}");
    }
}

#[test]
fn pauli_matrices_have_unit_eigenvalues() {
    let sy = ComplexMatrix::from_fn(2, 2, |i, j| match (i, j) {
        (0, 1) => c(0.0, -1.0),
        (1, 0) => c(0.0, 1.0),
        _ => c(0.0, 0.0),
    });
    let ev = hermitian_eigenvalues(&sy).unwrap();
    assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
}

#[test]
fn two_level_saturation_on_and_off_resonance() {
    let g = QdParameters::default().linewidth();
    for (rabi, offset) in [(0.224 * g, 0.0), (0.7 * g, 0.0), (0.5 * g, 0.8 * g), (0.5 * g, -0.8 * g)] {
        let gen = LindbladGenerator::for_system(&sigma_plus_cycling(rabi, offset), &MagneticField::ZERO).unwrap();
        let tr = evolve(&gen, &DensityMatrix::basis(0), 0.1, 1e-3, 0.1).unwrap();
        let rho = tr.final_state();
        let s = 2.0 * rabi * rabi / (g * g) / (1.0 + 4.0 * offset * offset / (g * g));
        let analytic = 0.5 * s / (1.0 + s);
        let got = rho.population(T_UP) + rho.population(T_DOWN);
        assert!((got - analytic).abs() < 1e-6, "rabi {rabi}, offset {offset}: {got} vs {analytic}");
    }
}

#[test]
fn resonance_fluorescence_g2_matches_the_mollow_form() {
    let qd = QdParameters::default();
    let g = qd.linewidth();
    let rabi = 1.5 * g;
    let gen = LindbladGenerator::for_system(&sigma_plus_cycling(rabi, 0.0), &MagneticField::ZERO).unwrap();
    let rho_ss = evolve(&gen, &DensityMatrix::basis(0), 0.1, 1e-3, 0.1).unwrap().final_state().clone();
    let taus: Vec<f64> = (0..40).map(|k| 0.1 * k as f64).collect();
    let curve = g2(&gen, &rho_ss, &taus, StepControl::default()).unwrap();
    let gamma = qd.decay_rate() * 1e-3; // ns⁻¹
    let omega = 2.0 * PI * rabi * 1e-3;
    let mu = (omega * omega - gamma * gamma / 16.0).sqrt();
    for (t, v) in taus.iter().zip(&curve.values) {
        let e = 1.0 - (-0.75 * gamma * t).exp() * ((mu * t).cos() + 0.75 * gamma / mu * (mu * t).sin());
        assert!((v - e).abs() < 1e-6, "tau {t}: {v} vs {e}");
    }
}

#[test]
fn rk4_step_is_the_fourth_order_taylor_polynomial() {
    let lambdas = [c(-1.0, 0.0), c(-0.3, 2.0), c(0.0, -1.0), c(-2.0, 0.5)];
    let l = ComplexMatrix::from_fn(4, 4, |i, j| if i == j { lambdas[i] } else { c(0.0, 0.0) });
    let h = 0.2;
    let m = rk4_step_matrix(&l, h);
    for (i, lam) in lambdas.iter().enumerate() {
        let z = lam * h;
        let e = c(1.0, 0.0) + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
        assert!((m[(i, i)] - e).norm() < 1e-15);
    }
}

#[test]
fn steady_state_agrees_with_long_evolution() {
    let g = QdParameters::default().linewidth();
    let cfg = SystemConfig {
        qd: QdParameters { spin_dephasing_rate: 5.0, ..QdParameters::default() },
        b_ext: MagneticField::new(3.0, 0.0, 2.0),
        lasers: vec![
            LaserDrive::new(0.5 * g, 10.0, Polarization::horizontal()),
            LaserDrive::new(0.3 * g, 10.0, Polarization::vertical()),
        ],
        oh_dispersion_sigma: 0.0,
    };
    let gen = LindbladGenerator::for_system(&cfg, &MagneticField::new(5.0, -4.0, 3.0)).unwrap();
    let ss = steady_state(&gen.liouvillian_at(0.0)).unwrap();
    let long = evolve(&gen, &mixed_ground_state(), 5.0, 1e-3, 5.0).unwrap();
    assert!(max_diff(ss.matrix(), long.final_state().matrix()) < 1e-8);
}

#[test]
fn periodic_state_agrees_with_long_evolution() {
    let g = QdParameters::default().linewidth();
    let cfg = SystemConfig {
        qd: QdParameters { spin_dephasing_rate: 5.0, ..QdParameters::default() },
        b_ext: MagneticField::new(3.0, 0.0, 2.0),
        lasers: vec![
            LaserDrive::new(0.5 * g, 0.0, Polarization::horizontal()),
            LaserDrive::new(0.4 * g, 0.0, Polarization::vertical())
                .with_reference(FrequencyReference::Fixed { offset_mhz: 80.0 }),
        ],
        oh_dispersion_sigma: 0.0,
    };
    let gen = LindbladGenerator::for_system(&cfg, &MagneticField::new(2.0, 1.0, -3.0)).unwrap();
    let ps = periodic_steady_state(&gen).unwrap();
    let (t0, t1) = (3.0, 3.003125);
    let tr = evolve_between(&gen, &mixed_ground_state(), 0.0, t1, StepControl::default(), t1 - t0).unwrap();
    for (t, rho) in tr.times.iter().zip(&tr.states).filter(|(t, _)| **t >= t0 - 1e-12) {
        let p = ps.state_at(*t).unwrap();
        assert!(max_diff(p.matrix(), rho.matrix()) < 1e-6, "t = {t}");
    }
}

#[test]
fn philox_known_answers() {
    let zero = Philox4x64::new([0, 0]).block([0; 4]);
    assert_eq!(zero, [0x16554d9eca36314c, 0xdb20fe9d672d0fdc, 0xd7e772cee186176b, 0x7e68b68aec7ba23b]);
    let ones = Philox4x64::new([u64::MAX; 2]).block([u64::MAX; 4]);
    assert_eq!(ones, [0x87b092c3013fe90b, 0x438c3c67be8d0224, 0x9cc7d7c69cd777b6, 0xa09caebf594f0ba0]);
    let pi = Philox4x64::new([0x452821e638d01377, 0xbe5466cf34e90c6c])
        .block([0x243f6a8885a308d3, 0x13198a2e03707344, 0xa4093822299f31d0, 0x082efa98ec4e6c89]);
    assert_eq!(pi, [0xa528f45403e61d95, 0x38c72dbd566e9788, 0xa5a1610e72fd18b5, 0x57bd43b5e52b7fe6]);
}

#[test]
fn box_muller_moments() {
    let rng = Philox4x64::new([42, 1]);
    let n = 100_000;
    let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let b = rng.block([i, 0, 0, 0]);
        let (x, y) = box_muller(unit_interval(b[0]), unit_interval(b[1]));
        for v in [x, y] {
            s1 += v;
            s2 += v * v;
            s4 += v * v * v * v;
        }
    }
    let m = 2.0 * n as f64;
    assert!((s1 / m).abs() < 0.01);
    assert!((s2 / m - 1.0).abs() < 0.01);
    assert!((s4 / m - 3.0).abs() < 0.05);
}

#[test]
fn overhauser_components_have_the_requested_width() {
    let spec = OhEnsembleSpec::new(18.0, 20_000, 3).unwrap();
    let mut s2 = [0.0; 3];
    for i in 0..spec.n_samples {
        let b = sample_oh(&spec, i).components();
        for k in 0..3 {
            s2[k] += b[k] * b[k];
        }
    }
    for v in s2 {
        let sd = (v / spec.n_samples as f64).sqrt();
        assert!((sd - 18.0).abs() < 0.3, "{sd}");
    }
    assert_eq!(sample_oh(&OhEnsembleSpec::new(0.0, 1, 3).unwrap(), 0), MagneticField::ZERO);
}

#[test]
fn ensemble_estimate_of_known_values() {
    let e = EnsembleEstimate::from_values(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(e.mean, 2.5);
    assert!((e.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    assert!(EnsembleEstimate::from_selected(&[None, None]).is_err());
    let one = EnsembleEstimate::from_selected(&[None, Some(7.0)]).unwrap();
    assert_eq!((one.mean, one.std_error, one.n_effective), (7.0, 0.0, 1));
}

#[test]
fn wander_spreads_a_delta_along_the_diagonal() {
    let n = 41;
    let axis: Vec<f64> = (0..n).map(|k| 10.0 * (k as f64 - 20.0)).collect();
    let mut values = vec![0.0; n * n];
    values[20 * n + 20] = 1.0;
    let map = Grid2::new(axis.clone(), axis, values).unwrap();
    let out = wander_convolve(&map, 30.0).unwrap();
    assert!(!out.wide_kernel);
    assert!((out.map.mean() - map.mean()).abs() < 1e-15);
    for i in 0..n {
        for j in 0..n {
            let v = out.map.get(i, j);
            if i != j {
                assert_eq!(v, 0.0);
            }
        }
    }
    let centre = out.map.get(20, 20);
    let next = out.map.get(21, 21);
    assert!((next / centre - (-0.5f64 / 9.0).exp()).abs() < 1e-12);
    assert_eq!(wander_convolve(&map, 0.0).unwrap().map, map);
}

#[test]
fn dark_state_is_annihilated_by_the_drive() {
    let (wu, wd) = (c(0.3, 0.4), c(-1.2, 0.7));
    let pair = dark_state(wu, wd).unwrap();
    assert!((wu * pair.dark[0] + wd * pair.dark[1]).norm() < 1e-15);
    let inner = pair.dark[0].conj() * pair.bright[0] + pair.dark[1].conj() * pair.bright[1];
    assert!(inner.norm() < 1e-15);
    assert!(dark_state(c(0.0, 0.0), c(0.0, 0.0)).is_err());
}

#[test]
fn phase_jump_bright_population() {
    let balanced = dark_state(c(1.0, 0.0), c(0.0, 1.0)).unwrap();
    for k in 0..=16 {
        let dphi = 2.0 * PI * k as f64 / 16.0;
        let p = bright_population_after_phase_jump(&balanced, dphi);
        assert!((p - (dphi / 2.0).sin().powi(2)).abs() < 1e-14);
    }
    let (a, b) = (1.0f64, 9.0f64); // intensities
    let pair = dark_state(c(a.sqrt(), 0.0), c(b.sqrt(), 0.0)).unwrap();
    let p = bright_population_after_phase_jump(&pair, PI);
    assert!((p - 4.0 * a * b / ((a + b) * (a + b))).abs() < 1e-14);
    assert!(bright_population_after_phase_jump(&pair, 0.0) < 1e-30);
}

#[test]
fn bloch_vector_of_pure_states() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus_x = ComplexMatrix::outer(&[c(s, 0.0), c(s, 0.0)], &[c(s, 0.0), c(s, 0.0)]);
    let v = bloch_vector(&plus_x).unwrap();
    assert!((v.x - 1.0).abs() < 1e-15 && v.y.abs() < 1e-15 && v.z.abs() < 1e-15 && (v.purity - 1.0).abs() < 1e-15);
    let plus_y = ComplexMatrix::from_fn(2, 2, |i, j| c(0.5, 0.0) * c(0.0, 1.0).powi(i as i32 - j as i32));
    let v = bloch_vector(&plus_y).unwrap();
    assert!((v.y - 1.0).abs() < 1e-15, "{v:?}");
    assert!(bloch_vector(&ComplexMatrix::zeros(2, 2)).is_err());
}

#[test]
fn least_squares_recovers_an_exponential() {
    let model = |x: f64, p: &[f64]| p[0] * (-x / p[1]).exp() + 1.0;
    let x: Vec<f64> = (0..50).map(|k| 0.2 * k as f64).collect();
    let y: Vec<f64> = x.iter().map(|&t| model(t, &[2.5, 1.7])).collect();
    let r = fit_least_squares(model, &x, &y, &[1.0, 1.0], 1e-12).unwrap();
    assert!(r.converged);
    assert!((r.params[0] - 2.5).abs() < 1e-8 && (r.params[1] - 1.7).abs() < 1e-8, "{:?}", r.params);
}
