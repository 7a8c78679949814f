use std::f64::consts::{PI, TAU};

use darkstate_core::dynamics::{
    default_average_window, evolve_between, mixed_ground_state, periodic_steady_state, quasi_steady_fluorescence,
    LindbladGenerator, PeriodicState, StepControl, DEFAULT_SETTLE,
};
use darkstate_core::fit::{fit_least_squares, DEFAULT_TOLERANCE};
use darkstate_core::model::{MagneticField, PhaseProfile, SystemConfig};
use darkstate_core::nuclear::{sample_oh, EnsembleEstimate, OhEnsembleSpec};
use darkstate_core::qcore::DensityMatrix;
use darkstate_core::Error as CoreError;

use super::{batch_ranges, batch_standard_error};
use crate::error::SimError;
use crate::exec::Executor;
use crate::result::{Column, ExperimentResult, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseJumpSettings {
    /// Total phase step of laser 1, rad (applied as a ramp of −dphi).
    pub dphi: f64,
    pub fall_time_ns: f64,
    /// Recorded window before the jump and after the end of the ramp, ns.
    pub before_ns: f64,
    pub after_ns: f64,
    pub sample_ns: f64,
    pub step: StepControl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransientSettings {
    pub dphis: Vec<f64>,
    pub fall_time_ns: f64,
    /// Readout delay after the end of the ramp, ns.
    pub readout_delay_ns: f64,
    /// Subtract the one-laser (laser 2 off) response.
    pub background: bool,
    pub step: StepControl,
}

/// Fraction of a beat period at which realisation `index` jumps. The jump
/// in the experiment is not synchronised with the laser beat, so the beat
/// phase is spread over the ensemble by a golden-ratio sequence.
fn jump_phase(index: usize) -> f64 {
    (index as f64 * 0.618_033_988_749_894_9).fract()
}

/// Pre-jump state of one realisation.
struct Prepared {
    gen: LindbladGenerator,
    /// Time-averaged stationary photon rate, MHz.
    baseline: f64,
    /// Jump time, µs.
    t_jump: f64,
    /// State at `t_jump − lead`.
    state: DensityMatrix,
    periodic: Option<PeriodicState>,
}

fn beat_period(gen: &LindbladGenerator) -> f64 {
    gen.terms()
        .drives
        .iter()
        .map(|d| d.beat_mhz.abs())
        .filter(|b| *b > 0.0)
        .fold(None, |acc: Option<f64>, b| Some(acc.map_or(b, |a| a.min(b))))
        .map_or(0.0, |b| 1.0 / b)
}

/// Periodic steady state (or, for a degenerate generator, a settled state)
/// sampled `lead` µs before the jump.
fn prepare(cfg: &SystemConfig, oh: &MagneticField, index: usize, lead: f64, step: StepControl) -> Result<Prepared, SimError> {
    let gen = LindbladGenerator::for_system(cfg, oh)?;
    let offset = jump_phase(index) * beat_period(&gen);
    match periodic_steady_state(&gen) {
        Ok(ps) => {
            let t_jump = lead + offset;
            let (baseline, state) = (ps.mean_fluorescence(&gen), ps.state_at(t_jump - lead)?);
            Ok(Prepared { gen, baseline, t_jump, state, periodic: Some(ps) })
        }
        Err(CoreError::NonUniqueSteadyState) => {
            let t0 = DEFAULT_SETTLE + offset;
            let state = evolve_between(&gen, &mixed_ground_state(), 0.0, t0, step, t0)?.final_state().clone();
            let baseline = quasi_steady_fluorescence(&gen, DEFAULT_SETTLE, default_average_window(&gen), step)?.fluorescence;
            Ok(Prepared { gen, baseline, t_jump: t0 + lead, state, periodic: None })
        }
        Err(e) => Err(e.into()),
    }
}

fn with_ramp(cfg: &SystemConfig, t_jump: f64, fall_us: f64, dphi: f64) -> Result<SystemConfig, SimError> {
    let mut cfg = cfg.clone();
    let start = cfg.lasers[0].phase.value(t_jump);
    cfg.lasers[0].phase = PhaseProfile::ramp(start, t_jump, fall_us, -dphi)?;
    Ok(cfg)
}

/// Fluorescence of one realisation with and without the ramp.
struct Trace {
    jumped: Vec<f64>,
    /// Stationary photon rate on the same time grid: the pre-jump
    /// periodic state up to the end of the ramp, the post-jump one after
    /// it, so the laser beat cancels in `jumped − reference`. Falls back
    /// to the mean baseline when the stationary state is not unique.
    reference: Vec<f64>,
    baseline: f64,
}

/// Fluorescence of one realisation from `t_jump − lead` to `t_jump + span`.
fn jump_trace(
    cfg: &SystemConfig,
    oh: &MagneticField,
    index: usize,
    dphi: f64,
    fall_us: f64,
    lead: f64,
    span: f64,
    sample: f64,
    step: StepControl,
) -> Result<Trace, SimError> {
    let prep = prepare(cfg, oh, index, lead, step)?;
    let ramped = with_ramp(cfg, prep.t_jump, fall_us, dphi)?;
    let gen = LindbladGenerator::for_system(&ramped, oh)?;
    debug_assert_eq!(gen.terms().static_part, prep.gen.terms().static_part);
    let (t0, t1) = (prep.t_jump - lead, prep.t_jump + span);
    let tr = evolve_between(&gen, &prep.state, t0, t1, step, sample)?;
    let reference = match &prep.periodic {
        Some(before) => {
            let mut after_cfg = cfg.clone();
            after_cfg.lasers[0].phase = PhaseProfile::constant(ramped.lasers[0].phase.value(prep.t_jump + fall_us));
            let after_gen = LindbladGenerator::for_system(&after_cfg, oh)?;
            let after = periodic_steady_state(&after_gen)?;
            let t_end = prep.t_jump + fall_us;
            tr.times
                .iter()
                .map(|&t| {
                    let (ps, g) = if t < t_end { (before, &prep.gen) } else { (&after, &after_gen) };
                    Ok(g.photon_rate(ps.state_at(t)?.matrix()))
                })
                .collect::<Result<Vec<f64>, SimError>>()?
        }
        None => vec![prep.baseline; tr.times.len()],
    };
    Ok(Trace { jumped: tr.fluorescence, reference, baseline: prep.baseline })
}

fn check_two_lasers(cfg: &SystemConfig) -> Result<(), SimError> {
    cfg.validate()?;
    if cfg.lasers.len() != 2 {
        return Err(SimError::Input("phase-jump experiments need two lasers".into()));
    }
    Ok(())
}

fn positive(v: f64, name: &str) -> Result<f64, SimError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(SimError::Input(format!("{name} must be positive, got {v}")))
    }
}

/// Time-resolved fluorescence around a phase jump of laser 1.
pub fn run_phase_jump(
    cfg: &SystemConfig,
    spec: &OhEnsembleSpec,
    settings: &PhaseJumpSettings,
    exec: &Executor,
) -> Result<ExperimentResult, SimError> {
    check_two_lasers(cfg)?;
    spec.validate()?;
    let fall = positive(settings.fall_time_ns, "fall_time_ns")? * 1e-3;
    let sample = positive(settings.sample_ns, "sample_ns")? * 1e-3;
    let lead = positive(settings.before_ns, "before_ns")? * 1e-3;
    let span = fall + positive(settings.after_ns, "after_ns")? * 1e-3;
    let traces = exec.map(spec.n_samples, |i| {
        jump_trace(cfg, &sample_oh(spec, i), i, settings.dphi, fall, lead, span, sample, settings.step)
    })?;
    let n_t = traces[0].jumped.len();
    if traces.iter().any(|t| t.jumped.len() != n_t || t.reference.len() != n_t) {
        return Err(SimError::Numerical(CoreError::InvalidParameter {
            name: "timeline",
            reason: "sample grids differ between realisations".into(),
        }));
    }
    let n = traces.len() as f64;
    let baselines: Vec<f64> = traces.iter().map(|t| t.baseline).collect();
    let baseline = baselines.iter().sum::<f64>() / n;
    let (mut mean, mut se) = (vec![0.0; n_t], vec![0.0; n_t]);
    let (mut change, mut change_se) = (vec![0.0; n_t], vec![0.0; n_t]);
    for k in 0..n_t {
        let col: Vec<f64> = traces.iter().map(|t| t.jumped[k]).collect();
        let est = EnsembleEstimate::from_values(&col)?;
        (mean[k], se[k]) = (est.mean, est.std_error);
        let diff: Vec<f64> = traces.iter().map(|t| t.jumped[k] - t.reference[k]).collect();
        let est = EnsembleEstimate::from_values(&diff)?;
        (change[k], change_se[k]) = (est.mean, est.std_error);
    }
    // in ns directly so the grid prints cleanly
    let last = settings.before_ns + settings.fall_time_ns + settings.after_ns;
    let times: Vec<f64> = (0..n_t).map(|k| (k as f64 * settings.sample_ns).min(last) - settings.before_ns).collect();
    let profile = PhaseProfile::ramp(0.0, 0.0, fall, -settings.dphi)?;
    let delta_eff: Vec<f64> = times.iter().map(|t| profile.rate(t * 1e-3) / TAU).collect();
    let normalized: Vec<f64> = mean.iter().map(|f| if baseline > 0.0 { f / baseline } else { 0.0 }).collect();
    let base_est = EnsembleEstimate::from_values(&baselines)?;

    let mut result = ExperimentResult::new("phase-jump");
    result.tables.push(Table::new(
        "phase_jump",
        vec![
            Column::new("time", "ns", times),
            Column::new("fluorescence", "MHz", mean),
            Column::new("fluorescence_se", "MHz", se),
            Column::new("normalized", "unitless", normalized),
            Column::new("change", "MHz", change),
            Column::new("change_se", "MHz", change_se),
            Column::new("delta_eff", "MHz", delta_eff),
        ],
    ));
    result.set("baseline_MHz", base_est.mean);
    result.set("baseline_se_MHz", base_est.std_error);
    result.set("kernel_evaluations", spec.n_samples);
    Ok(result)
}

/// Photon rates at the readout time with and without the jump, and the
/// stationary baseline.
fn readout(
    cfg: &SystemConfig,
    oh: &MagneticField,
    index: usize,
    dphi: f64,
    fall_us: f64,
    delay_us: f64,
    step: StepControl,
) -> Result<Readout, SimError> {
    let span = fall_us + delay_us;
    let tr = jump_trace(cfg, oh, index, dphi, fall_us, 0.0, span, span, step)?;
    let last = |v: &[f64]| *v.last().expect("trajectory has samples");
    Ok(Readout { jumped: last(&tr.jumped), reference: last(&tr.reference), baseline: tr.baseline })
}

#[derive(Clone, Copy, Debug, Default)]
struct Readout {
    jumped: f64,
    reference: f64,
    baseline: f64,
}

/// Ensemble change of the readout relative to the ensemble baseline.
fn relative_change(samples: &[Readout]) -> f64 {
    let d: f64 = samples.iter().map(|s| s.jumped - s.reference).sum();
    let b: f64 = samples.iter().map(|s| s.baseline).sum();
    if b > 0.0 {
        d / b
    } else {
        0.0
    }
}

fn sin2_model(x: f64, p: &[f64]) -> f64 {
    let s = (0.5 * x + p[1]).sin();
    p[0] * s * s + p[2]
}

/// Transient amplitude versus phase step, with a `A·sin²(dphi/2 + φ₀) + c`
/// fit.
pub fn run_transient_scan(
    cfg: &SystemConfig,
    spec: &OhEnsembleSpec,
    settings: &TransientSettings,
    exec: &Executor,
) -> Result<ExperimentResult, SimError> {
    check_two_lasers(cfg)?;
    spec.validate()?;
    if settings.dphis.len() < 4 {
        return Err(SimError::Input("transient scan needs at least four phase steps for the fit".into()));
    }
    let fall = positive(settings.fall_time_ns, "fall_time_ns")? * 1e-3;
    let delay = positive(settings.readout_delay_ns, "readout_delay_ns")? * 1e-3;
    let mut single = cfg.clone();
    single.lasers.truncate(1);
    let ns = spec.n_samples;
    let cells = exec.map(settings.dphis.len() * ns, |c| {
        let (k, i) = (c / ns, c % ns);
        let oh = sample_oh(spec, i);
        let dphi = settings.dphis[k];
        let two = readout(cfg, &oh, i, dphi, fall, delay, settings.step)?;
        let one = if settings.background {
            readout(&single, &oh, i, dphi, fall, delay, settings.step)?
        } else {
            Readout::default()
        };
        Ok((two, one))
    })?;

    let mut cols: [Vec<f64>; 6] = Default::default();
    for (k, &dphi) in settings.dphis.iter().enumerate() {
        let chunk = &cells[k * ns..(k + 1) * ns];
        let amp = |range: std::ops::Range<usize>| {
            let two: Vec<Readout> = chunk[range.clone()].iter().map(|c| c.0).collect();
            let one: Vec<Readout> = chunk[range].iter().map(|c| c.1).collect();
            (relative_change(&two), relative_change(&one))
        };
        let (two, one) = amp(0..ns);
        let reps: Vec<f64> = batch_ranges(ns).into_iter().map(|r| {
            let (a, b) = amp(r);
            a - b
        }).collect();
        let baseline = chunk.iter().map(|c| c.0.baseline).sum::<f64>() / ns as f64;
        for (col, v) in cols.iter_mut().zip([dphi, two - one, batch_standard_error(&reps), two, one, baseline]) {
            col.push(v);
        }
    }

    let (x, y) = (&cols[0], &cols[1]);
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let fit = fit_least_squares(sin2_model, x, y, &[hi - lo, 0.0, lo], DEFAULT_TOLERANCE)?;
    let (a, phi0, c) = (fit.params[0], fit.params[1], fit.params[2]);
    // canonical form: A ≥ 0 and φ₀ in (−π/2, π/2]
    let (a, c, mut phi0) = if a < 0.0 { (-a, c + a, phi0 + 0.5 * PI) } else { (a, c, phi0) };
    phi0 = (phi0 + 0.5 * PI).rem_euclid(PI) - 0.5 * PI;
    let argmax = (PI - 2.0 * phi0).rem_euclid(TAU);

    let mut result = ExperimentResult::new("transient-scan");
    let [c0, c1, c2, c3, c4, c5] = cols;
    result.tables.push(Table::new(
        "transient_scan",
        vec![
            Column::new("dphi", "rad", c0),
            Column::new("amplitude", "unitless", c1),
            Column::new("amplitude_se", "unitless", c2),
            Column::new("two_laser", "unitless", c3),
            Column::new("one_laser", "unitless", c4),
            Column::new("baseline", "MHz", c5),
        ],
    ));
    result.tables.push(Table::new(
        "transient_fit",
        vec![
            Column::new("amplitude_a", "unitless", vec![a]),
            Column::new("amplitude_a_se", "unitless", vec![fit.std_errors[0]]),
            Column::new("phi0", "rad", vec![phi0]),
            Column::new("phi0_se", "rad", vec![fit.std_errors[1]]),
            Column::new("offset", "unitless", vec![c]),
            Column::new("offset_se", "unitless", vec![fit.std_errors[2]]),
            Column::new("residual_norm", "unitless", vec![fit.residual_norm]),
            Column::new("maximum_at", "rad", vec![argmax]),
            Column::new("converged", "flag", vec![f64::from(u8::from(fit.converged))]),
        ],
    ));
    if !fit.converged {
        result.warn("sinusoid fit did not converge");
    }
    result.set("kernel_evaluations", settings.dphis.len() * ns * if settings.background { 2 } else { 1 });
    Ok(result)
}
