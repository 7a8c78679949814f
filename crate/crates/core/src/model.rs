//! Four-level quantum-dot model: a ground spin doublet quantised along the
//! total magnetic field and a heavy-hole trion doublet quantised along the
//! growth axis `z`.
//!
//! Basis ordering of every 4×4 operator in the crate:
//! `0 = |↑_z⟩`, `1 = |↓_z⟩`, `2 = |⇑⟩` (trion), `3 = |⇓⟩` (trion).
//!
//! The rotating frame follows the optical frequency of laser 1. A laser's
//! optical frequency is `ν₀ + reference + detuning`, where `ν₀` is the
//! zero-field transition and `reference` is set by its
//! [`FrequencyReference`].

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;


use crate::qcore::{ComplexMatrix, DIM};
use crate::{Error, Result, C64};

pub const G_UP: usize = 0;
pub const G_DOWN: usize = 1;
pub const T_UP: usize = 2;
pub const T_DOWN: usize = 3;

const TWO_PI: f64 = 2.0 * PI;

/// Lab-frame magnetic field in mT (`z` is the growth axis).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MagneticField {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl MagneticField {
    pub const ZERO: Self = Self { bx: 0.0, by: 0.0, bz: 0.0 };

    pub const fn new(bx: f64, by: f64, bz: f64) -> Self {
        Self { bx, by, bz }
    }

    pub fn magnitude(&self) -> f64 {
        (self.bx * self.bx + self.by * self.by + self.bz * self.bz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }

    /// Unit vector along the field, `None` for a zero field.
    pub fn direction(&self) -> Option<[f64; 3]> {
        let m = self.magnitude();
        (m > 0.0).then(|| [self.bx / m, self.by / m, self.bz / m])
    }

    pub fn components(&self) -> [f64; 3] {
        [self.bx, self.by, self.bz]
    }
}

impl core::ops::Add for MagneticField {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.bx + o.bx, self.by + o.by, self.bz + o.bz)
    }
}

/// Quantum-dot material parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct QdParameters {
    /// Radiative lifetime τ in ns.
    pub radiative_lifetime_ns: f64,
    /// Electron gyromagnetic ratio, MHz/mT.
    pub gyro_electron: f64,
    /// Heavy-hole gyromagnetic ratio along `z`, MHz/mT.
    pub gyro_hole: f64,
    /// Empirical nuclear-polarisation splitting added along n̂, MHz.
    pub dnsp_splitting: f64,
    /// Pure dephasing rate between the ground states, MHz.
    pub spin_dephasing_rate: f64,
    /// Gaussian width of slow transition-energy wandering, MHz.
    pub spectral_wander_sigma: f64,
}

impl Default for QdParameters {
    fn default() -> Self {
        Self {
            radiative_lifetime_ns: 0.737,
            gyro_electron: 11.24,
            gyro_hole: 6.0,
            dnsp_splitting: 0.0,
            spin_dephasing_rate: 0.0,
            spectral_wander_sigma: 0.0,
        }
    }
}

impl QdParameters {
    /// Radiative linewidth Γ = 1/(2πτ) in MHz.
    pub fn linewidth(&self) -> f64 {
        1.0 / (TWO_PI * self.radiative_lifetime_ns * 1e-3)
    }

    /// Total trion decay rate 1/τ in µs⁻¹.
    pub fn decay_rate(&self) -> f64 {
        1.0 / (self.radiative_lifetime_ns * 1e-3)
    }

    /// Radiative lifetime in µs.
    pub fn lifetime_us(&self) -> f64 {
        self.radiative_lifetime_ns * 1e-3
    }

    pub fn validate(&self) -> Result<()> {
        let tau = self.radiative_lifetime_ns;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid("radiative_lifetime_ns", "must be positive and finite"));
        }
        for (name, v) in [
            ("gyro_electron", self.gyro_electron),
            ("gyro_hole", self.gyro_hole),
            ("dnsp_splitting", self.dnsp_splitting),
            ("spin_dephasing_rate", self.spin_dephasing_rate),
            ("spectral_wander_sigma", self.spectral_wander_sigma),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        for (name, v) in [
            ("dnsp_splitting", self.dnsp_splitting),
            ("spin_dephasing_rate", self.spin_dephasing_rate),
            ("spectral_wander_sigma", self.spectral_wander_sigma),
        ] {
            if v < 0.0 {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        Ok(())
    }
}

fn invalid(name: &'static str, reason: &str) -> Error {
    Error::InvalidParameter { name, reason: reason.to_string() }
}

/// Normalised Jones vector on the (σ⁺, σ⁻) basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Polarization {
    plus: C64,
    minus: C64,
}

impl Polarization {
    pub fn new(plus: C64, minus: C64) -> Result<Self> {
        let n = (plus.norm_sqr() + minus.norm_sqr()).sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid("polarization", "Jones vector must be non-zero"));
        }
        Ok(Self { plus: plus / n, minus: minus / n })
    }

    pub fn horizontal() -> Self {
        let a = core::f64::consts::FRAC_1_SQRT_2;
        Self { plus: C64::new(a, 0.0), minus: C64::new(a, 0.0) }
    }

    pub fn vertical() -> Self {
        let a = core::f64::consts::FRAC_1_SQRT_2;
        Self { plus: C64::new(0.0, a), minus: C64::new(0.0, -a) }
    }

    pub fn sigma_plus() -> Self {
        Self { plus: C64::new(1.0, 0.0), minus: C64::new(0.0, 0.0) }
    }

    pub fn sigma_minus() -> Self {
        Self { plus: C64::new(0.0, 0.0), minus: C64::new(1.0, 0.0) }
    }

    pub fn plus(&self) -> C64 {
        self.plus
    }

    pub fn minus(&self) -> C64 {
        self.minus
    }
}

/// Piecewise-linear optical phase φ(t) in radians, `t` in µs. Constant
/// outside the breakpoint range.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseProfile {
    points: Vec<(f64, f64)>,
}

impl Default for PhaseProfile {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl PhaseProfile {
    pub fn constant(phase: f64) -> Self {
        Self { points: vec![(0.0, phase)] }
    }

    /// Breakpoints `(t, φ)`; times must be strictly increasing.
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("phase_profile", "needs at least one breakpoint"));
        }
        if points.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(invalid("phase_profile", "breakpoints must be finite"));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("phase_profile", "breakpoint times must be strictly increasing"));
        }
        Ok(Self { points })
    }

    /// Constant `start` until `t0`, then a linear ramp by `delta` over
    /// `duration` µs, constant afterwards.
    pub fn ramp(start: f64, t0: f64, duration: f64, delta: f64) -> Result<Self> {
        if duration <= 0.0 {
            return Err(invalid("phase_profile", "ramp duration must be positive"));
        }
        Self::from_points(vec![(t0, start), (t0 + duration, start + delta)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_constant(&self) -> bool {
        self.points.windows(2).all(|w| w[0].1 == w[1].1)
    }

    pub fn value(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let k = pts.partition_point(|p| p.0 <= t);
        let (t0, p0) = pts[k - 1];
        let (t1, p1) = pts[k];
        p0 + (p1 - p0) * (t - t0) / (t1 - t0)
    }

    /// dφ/dt in rad/µs (right derivative at breakpoints).
    pub fn rate(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t < pts[0].0 || t >= pts[pts.len() - 1].0 {
            return 0.0;
        }
        let k = pts.partition_point(|p| p.0 <= t);
        let (t0, p0) = pts[k - 1];
        let (t1, p1) = pts[k];
        (p1 - p0) / (t1 - t0)
    }
}

/// Where a laser's detuning is measured from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum FrequencyReference {
    /// The zero-field transition frequency.
    #[default]
    Bare,
    /// A fixed frequency offset (MHz) from the zero-field transition.
    Fixed { offset_mhz: f64 },
    /// The lower-frequency leg `|↑_n̂⟩ → trion`, i.e. −S/2 for a ground
    /// splitting S of the current field realisation.
    LowerLeg,
    /// The upper-frequency leg `|↓_n̂⟩ → trion`, +S/2.
    UpperLeg,
}


impl FrequencyReference {
    /// Offset from the zero-field transition (MHz) for splitting `s` (MHz).
    pub fn offset(&self, s: f64) -> f64 {
        match *self {
            Self::Bare => 0.0,
            Self::Fixed { offset_mhz } => offset_mhz,
            Self::LowerLeg => -0.5 * s,
            Self::UpperLeg => 0.5 * s,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaserDrive {
    /// Bare Rabi amplitude Ω, MHz.
    pub rabi: f64,
    /// Detuning from the laser's reference frequency, MHz.
    pub detuning: f64,
    pub polarization: Polarization,
    pub phase: PhaseProfile,
    pub reference: FrequencyReference,
}

impl LaserDrive {
    pub fn new(rabi: f64, detuning: f64, polarization: Polarization) -> Self {
        Self {
            rabi,
            detuning,
            polarization,
            phase: PhaseProfile::default(),
            reference: FrequencyReference::Bare,
        }
    }

    pub fn with_reference(mut self, reference: FrequencyReference) -> Self {
        self.reference = reference;
        self
    }

    pub fn with_phase(mut self, phase: PhaseProfile) -> Self {
        self.phase = phase;
        self
    }

    /// Optical frequency relative to the zero-field transition, MHz.
    pub fn optical_offset(&self, splitting: f64) -> f64 {
        self.reference.offset(splitting) + self.detuning
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub qd: QdParameters,
    pub b_ext: MagneticField,
    pub lasers: Vec<LaserDrive>,
    /// Per-component standard deviation of the Overhauser field, mT.
    pub oh_dispersion_sigma: f64,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.qd.validate()?;
        if !self.b_ext.is_finite() {
            return Err(invalid("b_ext", "must be finite"));
        }
        if self.lasers.is_empty() || self.lasers.len() > 2 {
            return Err(invalid("lasers", "need one or two lasers"));
        }
        for l in &self.lasers {
            if !(l.rabi.is_finite() && l.rabi >= 0.0) {
                return Err(invalid("rabi", "must be non-negative and finite"));
            }
            if !l.detuning.is_finite() {
                return Err(invalid("detuning", "must be finite"));
            }
            if let FrequencyReference::Fixed { offset_mhz } = l.reference {
                if !offset_mhz.is_finite() {
                    return Err(invalid("reference", "offset must be finite"));
                }
            }
        }
        if !(self.oh_dispersion_sigma.is_finite() && self.oh_dispersion_sigma >= 0.0) {
            return Err(invalid("oh_dispersion_sigma", "must be non-negative"));
        }
        Ok(())
    }
}

/// Spin-½ amplitudes on the `z` basis.
pub type Spinor = [C64; 2];

/// Eigenvectors `(|↑_n̂⟩, |↓_n̂⟩)` of `n̂·σ` for `n̂ ∥ b_total`; the first
/// non-zero component of each is real and positive.
pub fn ground_basis(b_total: &MagneticField) -> Result<(Spinor, Spinor)> {
    let n = b_total.direction().ok_or(Error::DegenerateAxis)?;
    Ok(spin_basis_along(n))
}

/// Spin basis along a unit vector.
pub fn spin_basis_along(n: [f64; 3]) -> (Spinor, Spinor) {
    let theta = n[2].clamp(-1.0, 1.0).acos();
    let phi = n[1].atan2(n[0]);
    let (s, c) = (0.5 * theta).sin_cos();
    let e = C64::from_polar(1.0, phi);
    let up = fix_phase([C64::new(c, 0.0), e * s]);
    let down = fix_phase([C64::new(s, 0.0), -e * c]);
    (up, down)
}

/// Quantisation axis of the ground doublet, falling back to `z` for a zero
/// field.
pub fn quantization_axis(b_total: &MagneticField) -> [f64; 3] {
    b_total.direction().unwrap_or([0.0, 0.0, 1.0])
}

fn fix_phase(mut v: Spinor) -> Spinor {
    let lead = if v[0].norm() > 1e-14 { v[0] } else { v[1] };
    let ph = lead.conj() / lead.norm();
    v[0] *= ph;
    v[1] *= ph;
    if v[0].norm() <= 1e-14 {
        v[0] = C64::new(0.0, 0.0);
    }
    v
}

/// Ground-state splitting in MHz: electron Zeeman plus the empirical
/// nuclear-polarisation contribution.
pub fn ground_splitting(qd: &QdParameters, b_total: &MagneticField) -> f64 {
    qd.gyro_electron * b_total.magnitude() + qd.dnsp_splitting
}

/// Lowering operators `(d₊, d₋)`: `d₊ = |↑_z⟩⟨⇑|` (σ⁺), `d₋ = |↓_z⟩⟨⇓|` (σ⁻).
pub fn dipole_operators() -> (ComplexMatrix, ComplexMatrix) {
    let mut dp = ComplexMatrix::zeros(DIM, DIM);
    let mut dm = ComplexMatrix::zeros(DIM, DIM);
    dp[(G_UP, T_UP)] = C64::new(1.0, 0.0);
    dm[(G_DOWN, T_DOWN)] = C64::new(1.0, 0.0);
    (dp, dm)
}

/// One optical drive in the laser-1 frame: contributes
/// `e^{−iθ(t)}·coupling + h.c.` with `θ(t) = 2π·beat·t + φ(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveTerm {
    /// Raising part (trion ← ground), rad/µs.
    pub coupling: ComplexMatrix,
    /// Beat frequency against laser 1, MHz.
    pub beat_mhz: f64,
    pub phase: PhaseProfile,
}

impl DriveTerm {
    pub fn angle(&self, t: f64) -> f64 {
        TWO_PI * self.beat_mhz * t + self.phase.value(t)
    }
}

/// Hamiltonian split into a static part and oscillating drives.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianTerms {
    pub static_part: ComplexMatrix,
    pub drives: Vec<DriveTerm>,
}

impl HamiltonianTerms {
    pub fn at(&self, t: f64) -> ComplexMatrix {
        let mut h = self.static_part.clone();
        for d in &self.drives {
            let e = C64::from_polar(1.0, -d.angle(t));
            for i in 0..DIM {
                for j in 0..DIM {
                    let v = d.coupling[(i, j)];
                    if v != C64::new(0.0, 0.0) {
                        h[(i, j)] += e * v;
                        h[(j, i)] += (e * v).conj();
                    }
                }
            }
        }
        h
    }

    pub fn is_time_independent(&self) -> bool {
        self.drives.iter().all(|d| d.beat_mhz == 0.0 && d.phase.is_constant())
    }
}

/// Decomposes the rotating-frame Hamiltonian for one Overhauser realisation.
pub fn hamiltonian_terms(cfg: &SystemConfig, oh: &MagneticField) -> HamiltonianTerms {
    let qd = &cfg.qd;
    let b_total = cfg.b_ext + *oh;
    let splitting = ground_splitting(qd, &b_total);
    let n = quantization_axis(&b_total);

    let mut h = ComplexMatrix::zeros(DIM, DIM);
    // π·(γ_e B + dnsp n̂)·σ has eigenvalues ±π·S, i.e. splitting 2π·S.
    let field = [
        qd.gyro_electron * b_total.bx + qd.dnsp_splitting * n[0],
        qd.gyro_electron * b_total.by + qd.dnsp_splitting * n[1],
        qd.gyro_electron * b_total.bz + qd.dnsp_splitting * n[2],
    ];
    h[(G_UP, G_UP)] = C64::new(PI * field[2], 0.0);
    h[(G_DOWN, G_DOWN)] = C64::new(-PI * field[2], 0.0);
    h[(G_UP, G_DOWN)] = C64::new(PI * field[0], -PI * field[1]);
    h[(G_DOWN, G_UP)] = C64::new(PI * field[0], PI * field[1]);

    let frame = cfg.lasers.first().map_or(0.0, |l| l.optical_offset(splitting));
    let hole = PI * qd.gyro_hole * cfg.b_ext.bz;
    h[(T_UP, T_UP)] = C64::new(-TWO_PI * frame + hole, 0.0);
    h[(T_DOWN, T_DOWN)] = C64::new(-TWO_PI * frame - hole, 0.0);

    let drives = cfg
        .lasers
        .iter()
        .map(|l| {
            let amp = PI * l.rabi; // 2π·Ω/2
            let mut coupling = ComplexMatrix::zeros(DIM, DIM);
            coupling[(T_UP, G_UP)] = l.polarization.plus() * amp;
            coupling[(T_DOWN, G_DOWN)] = l.polarization.minus() * amp;
            DriveTerm {
                coupling,
                beat_mhz: l.optical_offset(splitting) - frame,
                phase: l.phase.clone(),
            }
        })
        .collect();
    HamiltonianTerms { static_part: h, drives }
}

/// Rotating-frame Hamiltonian at time `t` (µs), rad/µs.
pub fn build_hamiltonian(cfg: &SystemConfig, oh: &MagneticField, t: f64) -> ComplexMatrix {
    hamiltonian_terms(cfg, oh).at(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollapseKind {
    /// Photon emission; counted by detection.
    Radiative,
    Dephasing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapseOperator {
    /// Includes the square root of the rate (µs^-1/2).
    pub op: ComplexMatrix,
    pub kind: CollapseKind,
}

/// Radiative decay `√(1/τ)·d±` plus optional ground-state pure dephasing
/// `√(2π·rate)·(n̂·σ)/√2`.
pub fn collapse_operators(cfg: &SystemConfig, oh: &MagneticField) -> Vec<CollapseOperator> {
    let qd = &cfg.qd;
    let (dp, dm) = dipole_operators();
    let amp = qd.decay_rate().sqrt();
    let mut out = vec![
        CollapseOperator { op: dp.scale_real(amp), kind: CollapseKind::Radiative },
        CollapseOperator { op: dm.scale_real(amp), kind: CollapseKind::Radiative },
    ];
    if qd.spin_dephasing_rate > 0.0 {
        let n = quantization_axis(&(cfg.b_ext + *oh));
        let k = (TWO_PI * qd.spin_dephasing_rate).sqrt() * core::f64::consts::FRAC_1_SQRT_2;
        let mut op = ComplexMatrix::zeros(DIM, DIM);
        op[(G_UP, G_UP)] = C64::new(k * n[2], 0.0);
        op[(G_DOWN, G_DOWN)] = C64::new(-k * n[2], 0.0);
        op[(G_UP, G_DOWN)] = C64::new(k * n[0], -k * n[1]);
        op[(G_DOWN, G_UP)] = C64::new(k * n[0], k * n[1]);
        out.push(CollapseOperator { op, kind: CollapseKind::Dephasing });
    }
    out
}
