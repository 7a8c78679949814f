//! Fluorescence, photon autocorrelation, dark/bright states and Bloch vectors.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::dynamics::{rk4_interval_propagator, LindbladGenerator, StepControl};
use crate::fit::{fit_least_squares, FitReport, DEFAULT_TOLERANCE};
use crate::model::{Spinor, G_DOWN, G_UP, T_DOWN, T_UP};
use crate::qcore::{devec, monitor, vec as vectorize, vec_trace, ComplexMatrix, DensityMatrix, StateDiagnostics, DIM};
use crate::{Error, Result, C64};

/// Photon rate `(ρ_⇑⇑ + ρ_⇓⇓)/τ` in MHz for a lifetime `tau_ns`.
pub fn fluorescence_rate(rho: &DensityMatrix, tau_ns: f64) -> f64 {
    (rho.population(T_UP) + rho.population(T_DOWN)) * 1e3 / tau_ns
}

/// Normalised intensity autocorrelation.
#[derive(Clone, Debug, PartialEq)]
pub struct G2Curve {
    pub taus_ns: Vec<f64>,
    pub values: Vec<f64>,
    /// Unnormalised correlation `G(τ)`, MHz².
    pub correlation: Vec<f64>,
    /// Stationary photon rate, MHz; `g² = G/rate²`.
    pub rate: f64,
}

/// Largest `‖L·vec(ρ_ss)‖` accepted as stationary.
pub const STATIONARY_TOLERANCE: f64 = 1e-6;

/// Quantum-regression g²(τ) for a time-independent generator.
///
/// `ρ_c = Σ_k L_k ρ_ss L_k†` over the radiative channels is propagated with
/// the same RK4 map used by [`crate::dynamics::evolve`]; delays need not be
/// sorted but must be non-negative.
pub fn g2(
    gen: &LindbladGenerator,
    rho_ss: &DensityMatrix,
    taus_ns: &[f64],
    control: StepControl,
) -> Result<G2Curve> {
    if gen.is_time_dependent() {
        return Err(Error::NotPeriodic);
    }
    if taus_ns.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidParameter {
            name: "taus",
            reason: alloc::string::String::from("delays must be finite and >= 0"),
        });
    }
    let l = gen.liouvillian_at(0.0);
    let residual = l.apply(&rho_ss.to_vec()).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if residual > STATIONARY_TOLERANCE {
        return Err(Error::NonStationary { residual });
    }
    let emission = gen.emission_operator();
    let rate = gen.photon_rate(rho_ss.matrix());
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter {
            name: "rho_ss",
            reason: alloc::string::String::from("stationary state emits no photons"),
        });
    }
    let mut collapsed = ComplexMatrix::zeros(DIM, DIM);
    for op in gen.emission_operators() {
        collapsed = &collapsed + &(&(op * rho_ss.matrix()) * &op.adjoint());
    }
    let observe = |v: &[C64]| -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..DIM {
            for j in 0..DIM {
                acc += emission[(i, j)] * v[j + DIM * i];
            }
        }
        acc.re
    };

    let h_max = control.step_bound(gen.scale());
    let mut order: Vec<usize> = (0..taus_ns.len()).collect();
    order.sort_by(|&a, &b| taus_ns[a].total_cmp(&taus_ns[b]));
    let mut correlation = vec![0.0; taus_ns.len()];
    let mut state = vectorize(&collapsed)?;
    let trace0 = vec_trace(&state);
    let mut t_now = 0.0;
    let mut cached: Option<(f64, ComplexMatrix)> = None;
    for &k in &order {
        let target = taus_ns[k] * 1e-3;
        let gap = target - t_now;
        if gap > 0.0 {
            let reuse = matches!(&cached, Some((g, _)) if (g - gap).abs() <= 1e-12 * gap);
            if !reuse {
                cached = Some((gap, rk4_interval_propagator(l.matrix(), gap, h_max)));
            }
            state = cached.as_ref().expect("propagator cached").1.mat_vec(&state)?;
            t_now = target;
        }
        correlation[k] = observe(&state);
        // the conditioned state is a density matrix up to its conserved trace
        let unit: Vec<C64> = state.iter().map(|z| z / trace0).collect();
        monitor::record(&StateDiagnostics::of(&devec(&unit)?)?);
    }
    let values = correlation.iter().map(|g| g / (rate * rate)).collect();
    Ok(G2Curve { taus_ns: taus_ns.to_vec(), values, correlation, rate })
}

/// Fitted bunching `g²(τ) ≈ a·e^{−τ/τ_c} + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct BunchingFit {
    pub amplitude: f64,
    pub timescale_ns: f64,
    pub amplitude_se: f64,
    pub timescale_se: f64,
    pub report: FitReport,
}

fn bunching_model(tau: f64, p: &[f64]) -> f64 {
    p[0] * libm::exp(-tau / p[1]) + 1.0
}

/// Fits the bunching tail of a g² curve on `τ > 5·lifetime_ns`.
pub fn bunching_amplitude(curve: &G2Curve, lifetime_ns: f64) -> Result<BunchingFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = curve
        .taus_ns
        .iter()
        .zip(&curve.values)
        .filter(|(t, _)| **t > 5.0 * lifetime_ns)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "taus",
            reason: alloc::string::String::from("need at least three delays beyond 5 lifetimes"),
        });
    }
    let i0 = (0..x.len()).min_by(|&a, &b| x[a].total_cmp(&x[b])).expect("non-empty");
    let (x0, a_first) = (x[i0], y[i0] - 1.0);
    let span = x.iter().copied().fold(f64::MIN, f64::max) - x0;
    // e-folding point of the excess as the timescale guess
    let tc0 = x
        .iter()
        .zip(&y)
        .filter(|(t, v)| **t > x0 && (**v - 1.0).abs() <= a_first.abs() / core::f64::consts::E)
        .map(|(t, _)| *t - x0)
        .fold(f64::INFINITY, f64::min);
    let tc0 = if tc0.is_finite() && tc0 > 0.0 { tc0 } else { (span / 3.0).max(lifetime_ns) };
    // Two starts: the e-folding guess and a slow one spanning the window. A
    // decay faster than the window start is an extrapolation from outside
    // the fitted data (optical ringing, not spin pumping), so fits whose
    // timescale lies inside the window are preferred.
    let slow = (span / 3.0).max(tc0);
    let mut best: Option<FitReport> = None;
    for tc in [tc0, slow] {
        let a0 = a_first * libm::exp(x0 / tc);
        let r = fit_least_squares(bunching_model, &x, &y, &[a0, tc], DEFAULT_TOLERANCE)?;
        let outside = |f: &FitReport| f.params[1] < x0;
        best = match best {
            Some(b) if (outside(&b), b.residual_norm) <= (outside(&r), r.residual_norm) => Some(b),
            _ => Some(r),
        };
    }
    let report = best.expect("two starts");
    Ok(BunchingFit {
        amplitude: report.params[0],
        timescale_ns: report.params[1],
        amplitude_se: report.std_errors[0],
        timescale_se: report.std_errors[1],
        report,
    })
}

/// Dark and bright superpositions of a Λ system on `(|↑_n̂⟩, |↓_n̂⟩)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DarkStatePair {
    pub dark: Spinor,
    pub bright: Spinor,
    /// `|ω_up|`, MHz.
    pub alpha: f64,
    /// `|ω_down|`, MHz.
    pub beta: f64,
    /// `arg(ω_down/ω_up)`, rad.
    pub phi: f64,
}

fn normalise_leading_real(v: Spinor) -> Spinor {
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let lead = if v[0].norm() > 0.0 { v[0] } else { v[1] };
    let ph = lead.conj() / lead.norm();
    [v[0] * ph / n, v[1] * ph / n]
}

/// Builds the pair from the drive matrix elements coupling `|↑_n̂⟩` and
/// `|↓_n̂⟩` to a shared trion: `dark ∝ ω_down|↑⟩ − ω_up|↓⟩`.
pub fn dark_state(omega_up: C64, omega_down: C64) -> Result<DarkStatePair> {
    if omega_up.norm() == 0.0 && omega_down.norm() == 0.0 {
        return Err(Error::UndefinedLambda);
    }
    let dark = normalise_leading_real([omega_down, -omega_up]);
    let bright = normalise_leading_real([omega_up.conj(), omega_down.conj()]);
    let phi = if omega_up.norm() > 0.0 && omega_down.norm() > 0.0 { (omega_down / omega_up).arg() } else { 0.0 };
    Ok(DarkStatePair { dark, bright, alpha: omega_up.norm(), beta: omega_down.norm(), phi })
}

/// Population transferred to the bright state when the relative drive
/// phase jumps by `dphi` after the spin was trapped in the dark state.
pub fn bright_population_after_phase_jump(pair: &DarkStatePair, dphi: f64) -> f64 {
    let up = C64::new(pair.alpha, 0.0);
    let down = C64::from_polar(pair.beta, pair.phi + dphi);
    let norm2 = up.norm_sqr() + down.norm_sqr();
    // ⟨bright′| = (ω_up, ω_down′)/N in bra form
    let overlap = up * pair.dark[0] + down * pair.dark[1];
    // pair.dark was built from the pre-jump couplings (ω_up, ω_down), but
    // only their ratio matters, so express it through alpha/beta/phi.
    overlap.norm_sqr() / norm2
}

/// Bloch vector of a renormalised 2×2 ground block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub purity: f64,
}

/// `(x, y, z) = Tr(ρ̃σ)` with `ρ̃` the ground block renormalised to unit trace.
pub fn bloch_vector(ground: &ComplexMatrix) -> Result<BlochVector> {
    if ground.rows() != 2 || ground.cols() != 2 {
        return Err(Error::DimensionMismatch { expected: (2, 2), found: (ground.rows(), ground.cols()) });
    }
    let herm = ground.hermiticity_error();
    if herm > 1e-10 {
        return Err(Error::NotHermitian { deviation: herm });
    }
    let trace = ground.trace().re;
    if !(trace >= 1e-9) {
        return Err(Error::UndefinedBlochVector { trace });
    }
    let r = ground.scale_real(1.0 / trace);
    let x = 2.0 * r[(0, 1)].re;
    let y = -2.0 * r[(0, 1)].im;
    let z = r[(0, 0)].re - r[(1, 1)].re;
    let purity = 0.5 * (1.0 + x * x + y * y + z * z);
    Ok(BlochVector { x, y, z, purity })
}

/// Ground block of `rho` expressed on the spin basis `(up, down)`.
pub fn ground_block(rho: &DensityMatrix, basis: (Spinor, Spinor)) -> ComplexMatrix {
    let b = [basis.0, basis.1];
    let g = [G_UP, G_DOWN];
    ComplexMatrix::from_fn(2, 2, |a, c| {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += b[a][i].conj() * rho.matrix()[(g[i], g[j])] * b[c][j];
            }
        }
        acc
    })
}

/// Drive matrix elements `(⟨T|V|↑_n̂⟩, ⟨T|V|↓_n̂⟩)` of a raising coupling `V`
/// into trion `trion`.
pub fn lambda_couplings(coupling: &ComplexMatrix, trion: usize, basis: (Spinor, Spinor)) -> (C64, C64) {
    let row = |s: &Spinor| coupling[(trion, G_UP)] * s[0] + coupling[(trion, G_DOWN)] * s[1];
    (row(&basis.0), row(&basis.1))
}
