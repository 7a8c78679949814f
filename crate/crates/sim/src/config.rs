//! Strict JSON run configuration.
//!
//! The file schema (`Raw*` types) is parsed with unknown keys rejected and
//! value-level checks done during deserialisation, so errors carry the
//! JSON path, line and column. Missing values are filled from per-experiment
//! defaults and the resolved [`RunConfig`] is written back in the same
//! schema, with every value explicit, as the canonical snapshot.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use darkstate_core::dynamics::StepControl;
use darkstate_core::model::{FrequencyReference, LaserDrive, MagneticField, PhaseProfile, Polarization, QdParameters, SystemConfig};
use darkstate_core::nuclear::OhEnsembleSpec;
use darkstate_core::C64;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::experiments::{
    absorption_linewidth, calibrated_wander_sigma, linspace, saturation_rabi, CellSelection, CptMethod, CptSettings,
    G2Normalization, G2Settings, PhaseJumpSettings, TransientSettings,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    G2,
    CptMap,
    CptVisibility,
    PhaseJump,
    TransientScan,
    SteadyState,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::G2,
        Experiment::CptMap,
        Experiment::CptVisibility,
        Experiment::PhaseJump,
        Experiment::TransientScan,
        Experiment::SteadyState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::G2 => "g2",
            Experiment::CptMap => "cpt-map",
            Experiment::CptVisibility => "cpt-visibility",
            Experiment::PhaseJump => "phase-jump",
            Experiment::TransientScan => "transient-scan",
            Experiment::SteadyState => "steady-state",
        }
    }

    /// Name of the experiment's parameter block in the config file.
    pub fn block(self) -> &'static str {
        match self {
            Experiment::G2 => "g2",
            Experiment::CptMap => "cpt_map",
            Experiment::CptVisibility => "cpt_visibility",
            Experiment::PhaseJump => "phase_jump",
            Experiment::TransientScan => "transient_scan",
            Experiment::SteadyState => "steady_state",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| {
            let names: Vec<_> = Experiment::ALL.iter().map(|e| e.name()).collect();
            format!("unknown experiment `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExperimentParams {
    G2(G2Settings),
    CptMap(CptSettings),
    CptVisibility { fields: Vec<f64>, settings: CptSettings },
    PhaseJump(PhaseJumpSettings),
    TransientScan(TransientSettings),
    SteadyState { oh_field: MagneticField },
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub system: SystemConfig,
    pub ensemble: OhEnsembleSpec,
    pub step: StepControl,
    pub params: ExperimentParams,
}

// ---------------------------------------------------------------------------
// checked scalars

macro_rules! checked_float {
    ($name:ident, $ok:expr, $what:literal) => {
        #[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "f64", into = "f64")]
        struct $name(f64);

        impl TryFrom<f64> for $name {
            type Error = String;
            fn try_from(v: f64) -> Result<Self, String> {
                let ok: fn(f64) -> bool = $ok;
                if ok(v) {
                    Ok(Self(v))
                } else {
                    Err(format!(concat!("must be ", $what, ", got {}"), v))
                }
            }
        }

        impl From<$name> for f64 {
            fn from(v: $name) -> f64 {
                v.0
            }
        }
    };
}

checked_float!(Finite, |v| v.is_finite(), "finite");
checked_float!(NonNegative, |v| v.is_finite() && v >= 0.0, "non-negative and finite");
checked_float!(Positive, |v| v.is_finite() && v > 0.0, "positive and finite");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
struct Count(u64);

impl TryFrom<u64> for Count {
    type Error = String;
    fn try_from(v: u64) -> Result<Self, String> {
        if v >= 1 {
            Ok(Self(v))
        } else {
            Err("must be at least 1".into())
        }
    }
}

impl From<Count> for u64 {
    fn from(v: Count) -> u64 {
        v.0
    }
}

fn floats(v: &[Finite]) -> Vec<f64> {
    v.iter().map(|x| x.0).collect()
}

fn finites(v: &[f64]) -> Vec<Finite> {
    v.iter().map(|&x| Finite(x)).collect()
}

fn field(v: [Finite; 3]) -> MagneticField {
    MagneticField::new(v[0].0, v[1].0, v[2].0)
}

fn field_raw(b: MagneticField) -> [Finite; 3] {
    [Finite(b.bx), Finite(b.by), Finite(b.bz)]
}

// ---------------------------------------------------------------------------
// file schema

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system: Option<RawSystem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ensemble: Option<RawEnsemble>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    integrator: Option<RawIntegrator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    g2: Option<RawG2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cpt_map: Option<RawCpt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cpt_visibility: Option<RawCpt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase_jump: Option<RawPhaseJump>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transient_scan: Option<RawTransient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steady_state: Option<RawSteady>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qd: Option<RawQd>,
    /// mT
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b_ext: Option<[Finite; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lasers: Option<Vec<RawLaser>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQd {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    radiative_lifetime_ns: Option<Positive>,
    /// Radiative linewidth Γ in MHz; alternative to the lifetime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gyro_electron: Option<Finite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gyro_hole: Option<Finite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dnsp_splitting: Option<NonNegative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spin_dephasing_rate: Option<NonNegative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spectral_wander_sigma: Option<NonNegative>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJones {
    plus: [Finite; 2],
    minus: [Finite; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawPolarization {
    #[serde(rename = "H", alias = "h")]
    H,
    #[serde(rename = "V", alias = "v")]
    V,
    #[serde(rename = "sigma+")]
    SigmaPlus,
    #[serde(rename = "sigma-")]
    SigmaMinus,
    Jones(RawJones),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawReference {
    Bare,
    LowerLeg,
    UpperLeg,
    /// MHz from the zero-field transition.
    Fixed(Finite),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaser {
    /// MHz
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rabi: Option<NonNegative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rabi_over_gamma: Option<NonNegative>,
    /// MHz
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detuning: Option<Finite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polarization: Option<RawPolarization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<RawReference>,
    /// Constant optical phase, rad.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phase: Option<Finite>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    /// Per-component Overhauser dispersion, mT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<NonNegative>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_samples: Option<Count>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt_max_us: Option<Positive>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRange {
    start: Finite,
    stop: Finite,
    points: Count,
}

/// A list of values or an inclusive evenly spaced range.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum RawAxis {
    List(Vec<Finite>),
    Range(RawRange),
}

impl RawAxis {
    fn values(&self) -> Vec<f64> {
        match self {
            RawAxis::List(v) => floats(v),
            RawAxis::Range(r) => linspace(r.start.0, r.stop.0, r.points.0 as usize),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawNormalization {
    Ensemble,
    PerSample,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawG2 {
    /// MHz
    #[serde(default, skip_serializing_if = "Option::is_none")]
    detunings: Option<RawAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    taus_ns: Option<RawAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<RawNormalization>,
    /// Post-selection window, MHz; `null` keeps every sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    post_selection: Option<Positive>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuasiSteady {
    settle_us: Positive,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window_us: Option<Positive>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawMethod {
    Periodic,
    QuasiSteady(RawQuasiSteady),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawCells {
    Full,
    Antidiagonal,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCpt {
    /// MHz
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid1: Option<RawAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid2: Option<RawAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    method: Option<RawMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cells: Option<RawCells>,
    /// Faraday fields, mT (visibility scan only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fields: Option<Vec<Finite>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhaseJump {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dphi: Option<Finite>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fall_time_ns: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    before_ns: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    after_ns: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_ns: Option<Positive>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransient {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dphis: Option<RawAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fall_time_ns: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    readout_delay_ns: Option<Positive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<bool>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSteady {
    /// Overhauser field of the single realisation, mT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oh_field: Option<[Finite; 3]>,
}

// ---------------------------------------------------------------------------
// defaults

/// Rabi amplitude (units of Γ) of the low-power single- and two-laser runs.
pub const DEFAULT_RABI_OVER_GAMMA: f64 = 0.224;
/// Per-component Overhauser dispersion, mT.
pub const DEFAULT_OH_SIGMA: f64 = 18.0;
/// Empirical nuclear-polarisation splitting of the CPT experiments, MHz.
pub const DEFAULT_DNSP_SPLITTING: f64 = 400.0;
/// Faraday field of the phase-jump experiments, mT.
pub const PHASE_JUMP_FIELD: f64 = 8.4;
/// Laser-2 offset compensating the ground splitting, MHz.
pub const PHASE_JUMP_OFFSET: f64 = 80.0;
/// Total two-laser power `Ω₁² + Ω₂²` of the phase-jump runs, in units of
/// the saturation power.
pub const PHASE_JUMP_POWER: f64 = 0.2;

fn default_samples(e: Experiment) -> u64 {
    match e {
        Experiment::G2 => 512,
        Experiment::SteadyState => 1,
        _ => 128,
    }
}

fn default_qd(e: Experiment) -> QdParameters {
    let mut qd = QdParameters::default();
    if matches!(e, Experiment::CptMap | Experiment::CptVisibility) {
        qd.dnsp_splitting = DEFAULT_DNSP_SPLITTING;
        qd.spectral_wander_sigma = calibrated_wander_sigma(&qd);
    }
    qd
}

fn default_b_ext(e: Experiment) -> MagneticField {
    match e {
        Experiment::PhaseJump | Experiment::TransientScan => MagneticField::new(0.0, 0.0, PHASE_JUMP_FIELD),
        _ => MagneticField::ZERO,
    }
}

fn default_lasers(e: Experiment, qd: &QdParameters) -> Vec<LaserDrive> {
    let g = qd.linewidth();
    let low = DEFAULT_RABI_OVER_GAMMA * g;
    match e {
        Experiment::G2 | Experiment::SteadyState => vec![LaserDrive::new(low, 0.0, Polarization::horizontal())],
        Experiment::CptMap | Experiment::CptVisibility => vec![
            LaserDrive::new(low, 0.0, Polarization::horizontal()).with_reference(FrequencyReference::LowerLeg),
            LaserDrive::new(low, 0.0, Polarization::vertical()).with_reference(FrequencyReference::UpperLeg),
        ],
        Experiment::PhaseJump | Experiment::TransientScan => {
            // Ω₁² = 4Ω₂², Ω₁² + Ω₂² = P·Ω_sat²
            let total = PHASE_JUMP_POWER * saturation_rabi(qd).powi(2);
            let (o1, o2) = ((0.8 * total).sqrt(), (0.2 * total).sqrt());
            vec![
                LaserDrive::new(o1, 0.0, Polarization::horizontal()),
                LaserDrive::new(o2, 0.0, Polarization::vertical())
                    .with_reference(FrequencyReference::Fixed { offset_mhz: PHASE_JUMP_OFFSET }),
            ]
        }
    }
}

/// Delays resolving the optical antibunching dip, then a log-spaced
/// tail covering the spin-pumping time scales, ns.
fn default_taus() -> Vec<f64> {
    let mut taus = linspace(0.0, 3.5, 15);
    taus.extend((0..=120).map(|k| 20.0 * 200.0_f64.powf(k as f64 / 120.0)));
    taus
}

/// Detuning window (MHz) for keeping a realisation in the g2 average.
const DEFAULT_POST_SELECTION: f64 = 200.0;

fn default_cpt(qd: &QdParameters) -> CptSettings {
    let ga = absorption_linewidth(qd);
    let grid = linspace(-1.5 * ga, 1.5 * ga, 41);
    CptSettings {
        grid1: grid.clone(),
        grid2: grid,
        method: CptMethod::Periodic,
        cells: CellSelection::Full,
        step: StepControl::default(),
    }
}

pub const DEFAULT_FIELDS: [f64; 4] = [0.0, 9.0, 18.4, 30.0];

fn default_dphis() -> Vec<f64> {
    (0..=8).map(|k| k as f64 * PI / 4.0).collect()
}

// ---------------------------------------------------------------------------
// parsing

/// Line (1-based) of the first occurrence of `"key"` in `text` after the
/// occurrences of each enclosing key in `path`.
fn locate(text: &str, path: &[&str]) -> Option<usize> {
    let mut from = 0;
    for key in path {
        let pat = format!("\"{key}\"");
        from += text[from..].find(&pat)?;
        from += pat.len();
    }
    Some(text[..from].matches('\n').count() + 1)
}

fn semantic(text: &str, path: &[&str], message: impl fmt::Display) -> SimError {
    let dotted = path.join(".");
    match locate(text, path) {
        Some(line) => SimError::Config(format!("{dotted} (line {line}): {message}")),
        None => SimError::Config(format!("{dotted}: {message}")),
    }
}

fn parse_raw(text: &str) -> Result<RawConfig, SimError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let (line, col) = (inner.line(), inner.column());
        let what = if path == "." { String::new() } else { format!("{path} ") };
        SimError::Config(format!("{what}(line {line}, column {col}): {inner}"))
    })?;
    Ok(raw)
}

fn polarization(raw: RawPolarization) -> Result<Polarization, String> {
    Ok(match raw {
        RawPolarization::H => Polarization::horizontal(),
        RawPolarization::V => Polarization::vertical(),
        RawPolarization::SigmaPlus => Polarization::sigma_plus(),
        RawPolarization::SigmaMinus => Polarization::sigma_minus(),
        RawPolarization::Jones(j) => Polarization::new(C64::new(j.plus[0].0, j.plus[1].0), C64::new(j.minus[0].0, j.minus[1].0))
            .map_err(|e| e.to_string())?,
    })
}

fn polarization_raw(p: Polarization) -> RawPolarization {
    for (named, raw) in [
        (Polarization::horizontal(), RawPolarization::H),
        (Polarization::vertical(), RawPolarization::V),
        (Polarization::sigma_plus(), RawPolarization::SigmaPlus),
        (Polarization::sigma_minus(), RawPolarization::SigmaMinus),
    ] {
        if p == named {
            return raw;
        }
    }
    RawPolarization::Jones(RawJones {
        plus: [Finite(p.plus().re), Finite(p.plus().im)],
        minus: [Finite(p.minus().re), Finite(p.minus().im)],
    })
}

fn reference(raw: RawReference) -> FrequencyReference {
    match raw {
        RawReference::Bare => FrequencyReference::Bare,
        RawReference::LowerLeg => FrequencyReference::LowerLeg,
        RawReference::UpperLeg => FrequencyReference::UpperLeg,
        RawReference::Fixed(v) => FrequencyReference::Fixed { offset_mhz: v.0 },
    }
}

fn reference_raw(r: FrequencyReference) -> RawReference {
    match r {
        FrequencyReference::Bare => RawReference::Bare,
        FrequencyReference::LowerLeg => RawReference::LowerLeg,
        FrequencyReference::UpperLeg => RawReference::UpperLeg,
        FrequencyReference::Fixed { offset_mhz } => RawReference::Fixed(Finite(offset_mhz)),
    }
}

fn resolve_qd(text: &str, e: Experiment, raw: Option<&RawQd>) -> Result<QdParameters, SimError> {
    let mut qd = default_qd(e);
    let Some(r) = raw else { return Ok(qd) };
    match (r.radiative_lifetime_ns, r.gamma) {
        (Some(_), Some(_)) => {
            return Err(semantic(text, &["system", "qd", "gamma"], "give either gamma or radiative_lifetime_ns, not both"))
        }
        (Some(t), None) => qd.radiative_lifetime_ns = t.0,
        (None, Some(g)) => qd.radiative_lifetime_ns = 1e3 / (2.0 * PI * g.0),
        (None, None) => {}
    }
    let lifetime_changed = r.radiative_lifetime_ns.is_some() || r.gamma.is_some();
    if let Some(v) = r.gyro_electron {
        qd.gyro_electron = v.0;
    }
    if let Some(v) = r.gyro_hole {
        qd.gyro_hole = v.0;
    }
    if let Some(v) = r.dnsp_splitting {
        qd.dnsp_splitting = v.0;
    }
    if let Some(v) = r.spin_dephasing_rate {
        qd.spin_dephasing_rate = v.0;
    }
    match r.spectral_wander_sigma {
        Some(v) => qd.spectral_wander_sigma = v.0,
        // the calibrated default tracks the radiative linewidth
        None if lifetime_changed && qd.spectral_wander_sigma > 0.0 => qd.spectral_wander_sigma = calibrated_wander_sigma(&qd),
        None => {}
    }
    Ok(qd)
}

fn resolve_lasers(text: &str, e: Experiment, qd: &QdParameters, raw: Option<&Vec<RawLaser>>) -> Result<Vec<LaserDrive>, SimError> {
    let defaults = default_lasers(e, qd);
    let Some(raw) = raw else { return Ok(defaults) };
    let fallback = LaserDrive::new(DEFAULT_RABI_OVER_GAMMA * qd.linewidth(), 0.0, Polarization::horizontal());
    raw.iter()
        .enumerate()
        .map(|(k, r)| {
            let mut l = defaults.get(k).cloned().unwrap_or_else(|| fallback.clone());
            let index = k.to_string();
            let at = |key: &'static str| vec!["system", "lasers", key];
            match (r.rabi, r.rabi_over_gamma) {
                (Some(_), Some(_)) => {
                    return Err(semantic(text, &at("rabi_over_gamma"), format!("laser {index}: give either rabi or rabi_over_gamma")))
                }
                (Some(v), None) => l.rabi = v.0,
                (None, Some(v)) => l.rabi = v.0 * qd.linewidth(),
                (None, None) => {}
            }
            if let Some(v) = r.detuning {
                l.detuning = v.0;
            }
            if let Some(p) = r.polarization {
                l.polarization = polarization(p).map_err(|m| semantic(text, &at("polarization"), format!("laser {index}: {m}")))?;
            }
            if let Some(v) = r.reference {
                l.reference = reference(v);
            }
            if let Some(v) = r.phase {
                l.phase = PhaseProfile::constant(v.0);
            }
            Ok(l)
        })
        .collect()
}

fn reject_foreign_blocks(text: &str, raw: &RawConfig, e: Experiment) -> Result<(), SimError> {
    let present = [
        (Experiment::G2, raw.g2.is_some()),
        (Experiment::CptMap, raw.cpt_map.is_some()),
        (Experiment::CptVisibility, raw.cpt_visibility.is_some()),
        (Experiment::PhaseJump, raw.phase_jump.is_some()),
        (Experiment::TransientScan, raw.transient_scan.is_some()),
        (Experiment::SteadyState, raw.steady_state.is_some()),
    ];
    for (other, is_present) in present {
        if is_present && other != e {
            return Err(semantic(text, &[other.block()], format!("block does not apply to experiment `{e}`")));
        }
    }
    Ok(())
}

fn resolve_cpt(text: &str, e: Experiment, qd: &QdParameters, raw: Option<&RawCpt>, step: StepControl) -> Result<CptSettings, SimError> {
    let mut s = default_cpt(qd);
    s.step = step;
    let Some(r) = raw else { return Ok(s) };
    if let Some(a) = &r.grid1 {
        s.grid1 = a.values();
    }
    if let Some(a) = &r.grid2 {
        s.grid2 = a.values();
    }
    if let Some(m) = &r.method {
        s.method = match m {
            RawMethod::Periodic => CptMethod::Periodic,
            RawMethod::QuasiSteady(q) => CptMethod::QuasiSteady { settle_us: q.settle_us.0, window_us: q.window_us.map(|w| w.0) },
        };
    }
    if let Some(c) = r.cells {
        s.cells = match c {
            RawCells::Full => CellSelection::Full,
            RawCells::Antidiagonal => CellSelection::Antidiagonal,
        };
    }
    if r.fields.is_some() && e != Experiment::CptVisibility {
        return Err(semantic(text, &[e.block(), "fields"], "field scans belong to the cpt_visibility block"));
    }
    Ok(s)
}

/// Parses and validates a configuration. `experiment` (from the command
/// line) takes precedence; a config that names a different one is an error.
pub fn parse_config(text: &str, experiment: Option<Experiment>) -> Result<RunConfig, SimError> {
    let raw = parse_raw(text)?;
    let e = match (experiment, raw.experiment) {
        (Some(a), Some(b)) if a != b => {
            return Err(semantic(text, &["experiment"], format!("config is for `{b}` but `{a}` was requested")))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => return Err(SimError::Config("no experiment given on the command line or in the config".into())),
    };
    reject_foreign_blocks(text, &raw, e)?;

    let sys = raw.system.as_ref();
    let qd = resolve_qd(text, e, sys.and_then(|s| s.qd.as_ref()))?;
    let b_ext = sys.and_then(|s| s.b_ext).map_or_else(|| default_b_ext(e), field);
    let lasers = resolve_lasers(text, e, &qd, sys.and_then(|s| s.lasers.as_ref()))?;
    let ens = raw.ensemble.as_ref();
    let sigma = ens.and_then(|x| x.sigma).map_or(if e == Experiment::SteadyState { 0.0 } else { DEFAULT_OH_SIGMA }, |v| v.0);
    let n_samples = ens.and_then(|x| x.n_samples).map_or(default_samples(e), |v| v.0);
    let seed = raw.seed.unwrap_or(0);
    let step = StepControl { dt_max: raw.integrator.as_ref().and_then(|i| i.dt_max_us).map_or(StepControl::default().dt_max, |v| v.0) };
    let system = SystemConfig { qd, b_ext, lasers, oh_dispersion_sigma: sigma };
    system.validate().map_err(|err| semantic(text, &["system"], err))?;
    let n_samples = usize::try_from(n_samples).map_err(|_| semantic(text, &["ensemble", "n_samples"], "too large"))?;
    let ensemble = OhEnsembleSpec::new(sigma, n_samples, seed).map_err(|err| semantic(text, &["ensemble"], err))?;

    let need_two = |n: usize| {
        if system.lasers.len() == n {
            Ok(())
        } else {
            Err(semantic(text, &["system", "lasers"], format!("experiment `{e}` needs {n} laser(s), got {}", system.lasers.len())))
        }
    };
    let params = match e {
        Experiment::G2 => {
            need_two(1)?;
            let r = raw.g2.as_ref().ok_or_else(|| SimError::Config("missing block `g2`".into()))?;
            let detunings = r.detunings.as_ref().ok_or_else(|| semantic(text, &["g2"], "missing field `detunings`"))?.values();
            let taus_ns = r.taus_ns.as_ref().map_or_else(default_taus, RawAxis::values);
            if detunings.is_empty() || taus_ns.is_empty() {
                return Err(semantic(text, &["g2"], "detunings and taus_ns must be non-empty"));
            }
            if taus_ns.iter().any(|t| *t < 0.0) {
                return Err(semantic(text, &["g2", "taus_ns"], "delays must be non-negative"));
            }
            let normalization = match r.normalization.unwrap_or(RawNormalization::Ensemble) {
                RawNormalization::Ensemble => G2Normalization::Ensemble,
                RawNormalization::PerSample => G2Normalization::PerSample,
            };
            ExperimentParams::G2(G2Settings { detunings, taus_ns, normalization, post_selection: Some(r.post_selection.map_or(DEFAULT_POST_SELECTION, |v| v.0)), step })
        }
        Experiment::CptMap => {
            need_two(2)?;
            ExperimentParams::CptMap(resolve_cpt(text, e, &system.qd, raw.cpt_map.as_ref(), step)?)
        }
        Experiment::CptVisibility => {
            need_two(2)?;
            let r = raw.cpt_visibility.as_ref();
            let settings = resolve_cpt(text, e, &system.qd, r, step)?;
            let fields = r.and_then(|r| r.fields.as_deref()).map_or_else(|| DEFAULT_FIELDS.to_vec(), floats);
            if fields.is_empty() {
                return Err(semantic(text, &["cpt_visibility", "fields"], "must be non-empty"));
            }
            ExperimentParams::CptVisibility { fields, settings }
        }
        Experiment::PhaseJump => {
            need_two(2)?;
            let r = raw.phase_jump.as_ref();
            let get = |f: fn(&RawPhaseJump) -> Option<Positive>, d: f64| r.and_then(f).map_or(d, |v| v.0);
            ExperimentParams::PhaseJump(PhaseJumpSettings {
                dphi: r.and_then(|r| r.dphi).map_or(PI, |v| v.0),
                fall_time_ns: get(|r| r.fall_time_ns, 2.0),
                before_ns: get(|r| r.before_ns, 20.0),
                after_ns: get(|r| r.after_ns, 60.0),
                sample_ns: get(|r| r.sample_ns, 0.25),
                step,
            })
        }
        Experiment::TransientScan => {
            need_two(2)?;
            let r = raw.transient_scan.as_ref();
            let dphis = r.and_then(|r| r.dphis.as_ref()).map_or_else(default_dphis, RawAxis::values);
            if dphis.len() < 4 {
                return Err(semantic(text, &["transient_scan", "dphis"], "the sinusoid fit needs at least four phase steps"));
            }
            ExperimentParams::TransientScan(TransientSettings {
                dphis,
                fall_time_ns: r.and_then(|r| r.fall_time_ns).map_or(2.0, |v| v.0),
                readout_delay_ns: r.and_then(|r| r.readout_delay_ns).map_or(2.0, |v| v.0),
                background: r.and_then(|r| r.background).unwrap_or(true),
                step,
            })
        }
        Experiment::SteadyState => {
            let oh_field = raw.steady_state.as_ref().and_then(|r| r.oh_field).map_or(MagneticField::ZERO, field);
            ExperimentParams::SteadyState { oh_field }
        }
    };
    Ok(RunConfig { experiment: e, seed, system, ensemble, step, params })
}

impl RunConfig {
    /// Returns a copy with a new seed (command-line override).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.ensemble.seed = seed;
        self
    }

    fn to_raw(&self) -> RawConfig {
        let qd = &self.system.qd;
        let lasers = self
            .system
            .lasers
            .iter()
            .map(|l| RawLaser {
                rabi: Some(NonNegative(l.rabi)),
                rabi_over_gamma: None,
                detuning: Some(Finite(l.detuning)),
                polarization: Some(polarization_raw(l.polarization)),
                reference: Some(reference_raw(l.reference)),
                phase: Some(Finite(l.phase.value(0.0))),
            })
            .collect();
        let mut raw = RawConfig {
            experiment: Some(self.experiment),
            seed: Some(self.seed),
            system: Some(RawSystem {
                qd: Some(RawQd {
                    radiative_lifetime_ns: Some(Positive(qd.radiative_lifetime_ns)),
                    gamma: None,
                    gyro_electron: Some(Finite(qd.gyro_electron)),
                    gyro_hole: Some(Finite(qd.gyro_hole)),
                    dnsp_splitting: Some(NonNegative(qd.dnsp_splitting)),
                    spin_dephasing_rate: Some(NonNegative(qd.spin_dephasing_rate)),
                    spectral_wander_sigma: Some(NonNegative(qd.spectral_wander_sigma)),
                }),
                b_ext: Some(field_raw(self.system.b_ext)),
                lasers: Some(lasers),
            }),
            ensemble: Some(RawEnsemble {
                sigma: Some(NonNegative(self.ensemble.sigma)),
                n_samples: Some(Count(self.ensemble.n_samples as u64)),
            }),
            integrator: Some(RawIntegrator { dt_max_us: Some(Positive(self.step.dt_max)) }),
            ..RawConfig::default()
        };
        let cpt = |s: &CptSettings, fields: Option<&[f64]>| RawCpt {
            grid1: Some(RawAxis::List(finites(&s.grid1))),
            grid2: Some(RawAxis::List(finites(&s.grid2))),
            method: Some(match s.method {
                CptMethod::Periodic => RawMethod::Periodic,
                CptMethod::QuasiSteady { settle_us, window_us } => {
                    RawMethod::QuasiSteady(RawQuasiSteady { settle_us: Positive(settle_us), window_us: window_us.map(Positive) })
                }
            }),
            cells: Some(match s.cells {
                CellSelection::Full => RawCells::Full,
                CellSelection::Antidiagonal => RawCells::Antidiagonal,
            }),
            fields: fields.map(finites),
        };
        match &self.params {
            ExperimentParams::G2(s) => {
                raw.g2 = Some(RawG2 {
                    detunings: Some(RawAxis::List(finites(&s.detunings))),
                    taus_ns: Some(RawAxis::List(finites(&s.taus_ns))),
                    normalization: Some(match s.normalization {
                        G2Normalization::Ensemble => RawNormalization::Ensemble,
                        G2Normalization::PerSample => RawNormalization::PerSample,
                    }),
                    post_selection: s.post_selection.map(Positive),
                })
            }
            ExperimentParams::CptMap(s) => raw.cpt_map = Some(cpt(s, None)),
            ExperimentParams::CptVisibility { fields, settings } => raw.cpt_visibility = Some(cpt(settings, Some(fields))),
            ExperimentParams::PhaseJump(s) => {
                raw.phase_jump = Some(RawPhaseJump {
                    dphi: Some(Finite(s.dphi)),
                    fall_time_ns: Some(Positive(s.fall_time_ns)),
                    before_ns: Some(Positive(s.before_ns)),
                    after_ns: Some(Positive(s.after_ns)),
                    sample_ns: Some(Positive(s.sample_ns)),
                })
            }
            ExperimentParams::TransientScan(s) => {
                raw.transient_scan = Some(RawTransient {
                    dphis: Some(RawAxis::List(finites(&s.dphis))),
                    fall_time_ns: Some(Positive(s.fall_time_ns)),
                    readout_delay_ns: Some(Positive(s.readout_delay_ns)),
                    background: Some(s.background),
                })
            }
            ExperimentParams::SteadyState { oh_field } => {
                raw.steady_state = Some(RawSteady { oh_field: Some(field_raw(*oh_field)) })
            }
        }
        raw
    }

    /// Canonical JSON form: every value explicit, parses back to `self`.
    pub fn canonical_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_g2_gets_defaults() {
        let c = parse_config(r#"{"seed": 3, "g2": {"detunings": [0, 100]}}"#, Some(Experiment::G2)).unwrap();
        assert_eq!(c.system.qd.radiative_lifetime_ns, 0.737);
        assert_eq!(c.ensemble.sigma, 18.0);
        assert_eq!(c.ensemble.seed, 3);
        let g = c.system.qd.linewidth();
        assert!((c.system.lasers[0].rabi / g - 0.224).abs() < 1e-15);
    }

    #[test]
    fn negative_gamma_names_field_and_line() {
        let text = "{\n  \"g2\": {\"detunings\": [0]},\n  \"system\": {\"qd\": {\"gamma\": -1}}\n}";
        let err = parse_config(text, Some(Experiment::G2)).unwrap_err().to_string();
        assert!(err.contains("gamma"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config(r#"{"g2": {"detunings": [0], "detuning": 1}}"#, Some(Experiment::G2)).unwrap_err();
        assert!(matches!(err, SimError::Config(_)));
        assert!(err.to_string().contains("detuning"));
    }

    #[test]
    fn foreign_block_rejected() {
        let err = parse_config(r#"{"g2": {"detunings": [0]}, "phase_jump": {}}"#, Some(Experiment::G2)).unwrap_err();
        assert!(err.to_string().contains("phase_jump"));
    }

    #[test]
    fn missing_block_rejected() {
        assert!(parse_config("{}", Some(Experiment::G2)).is_err());
        assert!(parse_config("{}", None).is_err());
    }

    #[test]
    fn canonical_round_trip_every_experiment() {
        for e in Experiment::ALL {
            let text = if e == Experiment::G2 { r#"{"g2": {"detunings": {"start": -10, "stop": 10, "points": 3}}}"# } else { "{}" };
            let c = parse_config(text, Some(e)).unwrap();
            let snap = serde_json::to_string_pretty(&c.canonical_json()).unwrap();
            let back = parse_config(&snap, None).unwrap();
            assert_eq!(back, c, "{e}");
        }
    }

    #[test]
    fn phase_jump_power_split() {
        let c = parse_config("{}", Some(Experiment::PhaseJump)).unwrap();
        let (o1, o2) = (c.system.lasers[0].rabi, c.system.lasers[1].rabi);
        let g = c.system.qd.linewidth();
        assert!((o1 * o1 / (o2 * o2) - 4.0).abs() < 1e-12);
        assert!(((o1 * o1 + o2 * o2) / (g * g) - 0.1).abs() < 1e-12);
    }
}
