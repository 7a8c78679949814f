//! Scripted numerical experiments. Each one fans independent
//! `(parameter point × Overhauser sample)` cells out over an [`Executor`]
//! and reduces them in index order.

mod cpt;
mod g2;
mod phase;
mod steady;

pub use cpt::{
    compute_cpt_map, cpt_linecut_and_visibility, run_cpt_map, run_visibility_vs_field, CellSelection, CptMapData,
    CptMethod, CptSettings, Linecut,
};
pub use g2::{run_g2_experiment, G2Normalization, G2Settings};
pub use phase::{run_phase_jump, run_transient_scan, PhaseJumpSettings, TransientSettings};
pub use steady::run_steady_state;

use darkstate_core::dynamics::{
    default_average_window, periodic_steady_state, quasi_steady_fluorescence, LindbladGenerator, StepControl,
    DEFAULT_SETTLE,
};
use darkstate_core::model::QdParameters;
use darkstate_core::Error as CoreError;

use crate::error::SimError;

/// Measured absorption linewidth in units of the radiative linewidth.
pub const ABSORPTION_LINEWIDTH_FACTOR: f64 = 2.23;

/// Number of contiguous sample batches used for ensemble standard errors of
/// non-linear estimators (ratios, fitted parameters).
pub const BATCHES: usize = 8;

/// Absorption linewidth Γ_abs in MHz.
pub fn absorption_linewidth(qd: &QdParameters) -> f64 {
    ABSORPTION_LINEWIDTH_FACTOR * qd.linewidth()
}

/// Gaussian spectral-wander width (MHz) that broadens the radiative
/// Lorentzian to the measured absorption linewidth, using the
/// Olivero–Longbothum Voigt-width approximation
/// `f_V ≈ 0.5346 f_L + √(0.2166 f_L² + f_G²)`.
pub fn calibrated_wander_sigma(qd: &QdParameters) -> f64 {
    let fl = qd.linewidth();
    let fv = ABSORPTION_LINEWIDTH_FACTOR * fl;
    let fg = ((fv - 0.5346 * fl).powi(2) - 0.2166 * fl * fl).sqrt();
    fg / (8.0 * std::f64::consts::LN_2).sqrt()
}

/// Rabi frequency (MHz) at saturation, `Ω_sat² = Γ²/2`.
pub fn saturation_rabi(qd: &QdParameters) -> f64 {
    qd.linewidth() * std::f64::consts::FRAC_1_SQRT_2
}

/// Time-averaged photon rate of the (periodic) steady state. Generators
/// whose stationary state is not unique fall back to settling from the
/// maximally mixed ground state.
pub fn stationary_fluorescence(gen: &LindbladGenerator, step: StepControl) -> Result<f64, SimError> {
    match periodic_steady_state(gen) {
        Ok(ps) => Ok(ps.mean_fluorescence(gen)),
        Err(CoreError::NonUniqueSteadyState) => {
            Ok(quasi_steady_fluorescence(gen, DEFAULT_SETTLE, default_average_window(gen), step)?.fluorescence)
        }
        Err(e) => Err(e.into()),
    }
}

/// Splits `n` accepted samples into at most [`BATCHES`] contiguous index
/// ranges of near-equal size.
pub(crate) fn batch_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let b = BATCHES.min(n).max(1);
    (0..b).map(|k| (k * n / b)..((k + 1) * n / b)).collect()
}

/// Standard error of a full-sample estimator from its batch replicates.
pub(crate) fn batch_standard_error(replicates: &[f64]) -> f64 {
    let b = replicates.len();
    if b < 2 {
        return 0.0;
    }
    let mean = replicates.iter().sum::<f64>() / b as f64;
    let var = replicates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}

pub(crate) fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_range() {
        let r = batch_ranges(19);
        assert_eq!(r.len(), 8);
        assert_eq!(r[0].start, 0);
        assert_eq!(r.last().unwrap().end, 19);
        assert!(r.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(batch_ranges(3).len(), 3);
    }

    #[test]
    fn calibrated_wander_reproduces_voigt_width() {
        let qd = QdParameters::default();
        let (fl, fg) = (qd.linewidth(), calibrated_wander_sigma(&qd) * (8.0 * std::f64::consts::LN_2).sqrt());
        let fv = 0.5346 * fl + (0.2166 * fl * fl + fg * fg).sqrt();
        assert!((fv / fl - ABSORPTION_LINEWIDTH_FACTOR).abs() < 1e-12);
    }

    #[test]
    fn linspace_endpoints_exact() {
        let v = linspace(-1.5, 1.5, 41);
        assert_eq!((v[0], v[20], v[40]), (-1.5, 0.0, 1.5));
    }
}
