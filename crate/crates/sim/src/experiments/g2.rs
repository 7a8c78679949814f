use darkstate_core::dynamics::{
    mixed_ground_state, evolve_between, steady_state, LindbladGenerator, StepControl, DEFAULT_SETTLE,
};
use darkstate_core::model::{ground_splitting, MagneticField, SystemConfig};
use darkstate_core::nuclear::{sample_oh, OhEnsembleSpec};
use darkstate_core::observables::{bunching_amplitude, g2, BunchingFit, G2Curve};
use darkstate_core::Error as CoreError;

use super::{batch_ranges, batch_standard_error};
use crate::error::SimError;
use crate::exec::Executor;
use crate::result::{Column, ExperimentResult, Table};

/// How per-realisation correlations are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum G2Normalization {
    /// `⟨G_i(τ)⟩ / ⟨G_i(∞)⟩`: numerator and long-delay limit averaged
    /// separately, as a time-averaged correlator weights bright realisations.
    #[default]
    Ensemble,
    /// Mean of the per-realisation normalised curves.
    PerSample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct G2Settings {
    /// Laser detunings, MHz.
    pub detunings: Vec<f64>,
    pub taus_ns: Vec<f64>,
    pub normalization: G2Normalization,
    /// Keep only realisations whose nearest transition lies within this
    /// many MHz of the laser.
    pub post_selection: Option<f64>,
    pub step: StepControl,
}

/// Correlation data of one realisation.
struct Sample {
    correlation: Vec<f64>,
    long_delay: f64,
}

/// Laser detuning from the nearest of the two ground-state legs, MHz.
fn effective_detuning(cfg: &SystemConfig, oh: &MagneticField) -> f64 {
    let s = ground_splitting(&cfg.qd, &(cfg.b_ext + *oh));
    let nu = cfg.lasers[0].optical_offset(s);
    (nu + 0.5 * s).abs().min((nu - 0.5 * s).abs())
}

fn sample_correlation(cfg: &SystemConfig, oh: &MagneticField, taus: &[f64], step: StepControl) -> Result<Sample, SimError> {
    let gen = LindbladGenerator::for_system(cfg, oh)?;
    match steady_state(&gen.liouvillian_at(0.0)) {
        Ok(rho) => {
            let curve = g2(&gen, &rho, taus, step)?;
            Ok(Sample { long_delay: curve.rate * curve.rate, correlation: curve.correlation })
        }
        Err(CoreError::NonUniqueSteadyState) => {
            // Several stationary states (a closed cycling transition):
            // settle from the mixed ground state and take the long-delay
            // limit from the last delay.
            let rho = evolve_between(&gen, &mixed_ground_state(), 0.0, DEFAULT_SETTLE, step, DEFAULT_SETTLE)?
                .final_state()
                .clone();
            let mut long = taus.to_vec();
            long.push(DEFAULT_SETTLE * 1e3);
            let curve = g2(&gen, &rho, &long, step)?;
            let long_delay = *curve.correlation.last().expect("appended delay");
            let mut correlation = curve.correlation;
            correlation.pop();
            Ok(Sample { correlation, long_delay })
        }
        Err(e) => Err(e.into()),
    }
}

fn reduce(samples: &[&Sample], norm: G2Normalization) -> Vec<f64> {
    let n_tau = samples[0].correlation.len();
    match norm {
        G2Normalization::Ensemble => {
            let denom: f64 = samples.iter().map(|s| s.long_delay).sum();
            (0..n_tau).map(|k| samples.iter().map(|s| s.correlation[k]).sum::<f64>() / denom).collect()
        }
        G2Normalization::PerSample => (0..n_tau)
            .map(|k| samples.iter().map(|s| s.correlation[k] / s.long_delay).sum::<f64>() / samples.len() as f64)
            .collect(),
    }
}

/// Batch replicates of the fitted `(a, τ_c)`, propagated to first order
/// through the full-ensemble fit instead of refitting each batch: a batch
/// refit of a nearly flat curve can land in a different local minimum and
/// swamp the error estimate.
fn linearized_replicates(fit: &BunchingFit, taus: &[f64], values: &[f64], batches: &[Vec<f64>], lifetime_ns: f64) -> (Vec<f64>, Vec<f64>) {
    let (a, tc) = (fit.amplitude, fit.timescale_ns);
    let rows: Vec<(usize, [f64; 2])> = taus
        .iter()
        .enumerate()
        .filter(|(_, t)| **t > 5.0 * lifetime_ns)
        .map(|(k, &t)| {
            let e = (-t / tc).exp();
            (k, [e, a * t / (tc * tc) * e])
        })
        .collect();
    let mut n = [[0.0; 2]; 2];
    for (_, j) in &rows {
        for r in 0..2 {
            for c in 0..2 {
                n[r][c] += j[r] * j[c];
            }
        }
    }
    let ridge = 1e-10 * n[0][0].max(n[1][1]);
    let (n00, n11, n01) = (n[0][0] + ridge, n[1][1] + ridge, n[0][1]);
    let det = n00 * n11 - n01 * n01;
    batches
        .iter()
        .map(|b| {
            let mut g = [0.0; 2];
            for (k, j) in &rows {
                let r = b[*k] - values[*k];
                g[0] += j[0] * r;
                g[1] += j[1] * r;
            }
            let da = (n11 * g[0] - n01 * g[1]) / det;
            let dt = (n00 * g[1] - n01 * g[0]) / det;
            (a + da, tc + dt)
        })
        .unzip()
}

fn curve_of(taus: &[f64], values: Vec<f64>) -> G2Curve {
    G2Curve { taus_ns: taus.to_vec(), correlation: values.clone(), values, rate: 1.0 }
}

/// Ensemble-averaged g²(τ) and fitted bunching per laser detuning.
pub fn run_g2_experiment(
    cfg: &SystemConfig,
    spec: &OhEnsembleSpec,
    settings: &G2Settings,
    exec: &Executor,
) -> Result<ExperimentResult, SimError> {
    cfg.validate()?;
    spec.validate()?;
    if cfg.lasers.len() != 1 {
        return Err(SimError::Input("the g2 experiment needs exactly one laser".into()));
    }
    if settings.detunings.is_empty() || settings.taus_ns.is_empty() {
        return Err(SimError::Input("g2 needs at least one detuning and one delay".into()));
    }
    let taus = &settings.taus_ns;
    let ns = spec.n_samples;
    let cells = settings.detunings.len() * ns;
    let samples: Vec<Option<Sample>> = exec.map(cells, |c| {
        let (d, i) = (c / ns, c % ns);
        let mut cfg = cfg.clone();
        cfg.lasers[0].detuning = settings.detunings[d];
        let oh = sample_oh(spec, i);
        if let Some(window) = settings.post_selection {
            if effective_detuning(&cfg, &oh) > window {
                return Ok(None);
            }
        }
        sample_correlation(&cfg, &oh, taus, settings.step).map(Some)
    })?;

    let lifetime_ns = cfg.qd.radiative_lifetime_ns;
    let mut curve_cols: [Vec<f64>; 4] = Default::default();
    let mut summary: [Vec<f64>; 8] = Default::default();
    let mut result = ExperimentResult::new("g2");
    for (d, &detuning) in settings.detunings.iter().enumerate() {
        let accepted: Vec<&Sample> = samples[d * ns..(d + 1) * ns].iter().flatten().collect();
        if accepted.is_empty() {
            return Err(CoreError::EmptySelection.into());
        }
        let values = reduce(&accepted, settings.normalization);
        let batches: Vec<Vec<f64>> =
            batch_ranges(accepted.len()).into_iter().map(|r| reduce(&accepted[r], settings.normalization)).collect();
        for (k, &tau) in taus.iter().enumerate() {
            let reps: Vec<f64> = batches.iter().map(|b| b[k]).collect();
            curve_cols[0].push(detuning);
            curve_cols[1].push(tau);
            curve_cols[2].push(values[k]);
            curve_cols[3].push(batch_standard_error(&reps));
        }
        let fit = bunching_amplitude(&curve_of(taus, values.clone()), lifetime_ns)?;
        let (amp_reps, tc_reps) = linearized_replicates(&fit, taus, &values, &batches, lifetime_ns);
        let amp_se = fit.amplitude_se.hypot(batch_standard_error(&amp_reps));
        let tc_se = fit.timescale_se.hypot(batch_standard_error(&tc_reps));
        if !fit.report.converged {
            result.warn(format!("bunching fit at detuning {detuning} MHz did not converge"));
        }
        for (col, v) in summary.iter_mut().zip([
            detuning,
            fit.amplitude,
            amp_se,
            fit.timescale_ns,
            tc_se,
            fit.report.residual_norm,
            f64::from(u8::from(fit.report.converged)),
            accepted.len() as f64,
        ]) {
            col.push(v);
        }
    }
    let [c0, c1, c2, c3] = curve_cols;
    result.tables.push(Table::new(
        "g2_curve",
        vec![
            Column::new("detuning", "MHz", c0),
            Column::new("tau", "ns", c1),
            Column::new("g2", "unitless", c2),
            Column::new("g2_se", "unitless", c3),
        ],
    ));
    let [s0, s1, s2, s3, s4, s5, s6, s7] = summary;
    result.tables.push(Table::new(
        "g2_summary",
        vec![
            Column::new("detuning", "MHz", s0),
            Column::new("bunching_amplitude", "unitless", s1),
            Column::new("bunching_amplitude_se", "unitless", s2),
            Column::new("timescale", "ns", s3),
            Column::new("timescale_se", "ns", s4),
            Column::new("fit_residual", "unitless", s5),
            Column::new("fit_converged", "flag", s6),
            Column::new("n_effective", "count", s7),
        ],
    ));
    result.set("kernel_evaluations", cells);
    result.set(
        "normalization",
        match settings.normalization {
            G2Normalization::Ensemble => "ensemble",
            G2Normalization::PerSample => "per_sample",
        },
    );
    Ok(result)
}
