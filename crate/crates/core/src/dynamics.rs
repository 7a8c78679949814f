//! Lindblad master-equation engine.
//!
//! A [`LindbladGenerator`] keeps the Hamiltonian split into a static part and
//! oscillating optical drives, so the Liouvillian at time `t` is
//! `L(t) = L_static + Σ_k (e^{−iθ_k(t)} A_k + e^{iθ_k(t)} B_k)`.
//! Integration is classical RK4 on the column-stacked state; time-independent
//! generators are solved directly, and generators with a single beat note
//! have their periodic steady state computed from a truncated harmonic
//! expansion.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::model::{
    collapse_operators, hamiltonian_terms, CollapseKind, CollapseOperator, DriveTerm,
    HamiltonianTerms, MagneticField, SystemConfig,
};
use crate::qcore::{
    commutator_superop, devec, dissipator_superop, vec_trace, ComplexMatrix, DensityMatrix,
    LuDecomposition, monitor, StateDiagnostics, StateTolerance, Superoperator, DIM, LDIM,
};
use crate::{Error, Result, C64};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const NEG_I: C64 = C64::new(0.0, -1.0);

/// RK4 step bound relative to the generator scale: `h ≤ STEP_FACTOR / ‖L‖`.
pub const STEP_FACTOR: f64 = 0.05;
/// States drifting further than this from the physical set abort integration.
pub const ABORT_TOLERANCE: f64 = 1e-6;

/// Sparse superoperator entry list, used for the drive terms.
#[derive(Clone, Debug, PartialEq)]
struct SparseSuperop {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseSuperop {
    fn from_dense(m: &ComplexMatrix) -> Self {
        let mut entries = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m[(i, j)];
                if v != ZERO {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }

    fn to_dense(&self, scale: C64) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(LDIM, LDIM);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v * scale;
        }
        m
    }

    fn norm_inf(&self) -> f64 {
        let mut rows = [0.0; LDIM];
        for &(i, _, v) in &self.entries {
            rows[i] += v.norm();
        }
        rows.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct DriveSuperop {
    term: DriveTerm,
    /// Superoperator of `ρ ↦ −i[V, ρ]` (multiplies `e^{−iθ}`).
    raising: SparseSuperop,
    /// Superoperator of `ρ ↦ −i[V†, ρ]` (multiplies `e^{+iθ}`).
    lowering: SparseSuperop,
}

/// Lindblad generator with an explicitly time-dependent Hamiltonian.
#[derive(Clone, Debug)]
pub struct LindbladGenerator {
    terms: HamiltonianTerms,
    collapse: Vec<CollapseOperator>,
    static_part: ComplexMatrix,
    drives: Vec<DriveSuperop>,
    /// `Σ L_k†L_k` over radiative collapse operators.
    emission: ComplexMatrix,
}

impl LindbladGenerator {
    pub fn new(terms: HamiltonianTerms, collapse: Vec<CollapseOperator>) -> Result<Self> {
        check_square4(&terms.static_part)?;
        for d in &terms.drives {
            check_square4(&d.coupling)?;
        }
        for c in &collapse {
            check_square4(&c.op)?;
        }
        let herm = terms.static_part.hermiticity_error();
        if herm > 1e-10 * terms.static_part.norm_max().max(1.0) {
            return Err(Error::NotHermitian { deviation: herm });
        }
        let mut static_part = commutator_superop(&terms.static_part);
        let mut emission = ComplexMatrix::zeros(DIM, DIM);
        for c in &collapse {
            static_part = &static_part + &dissipator_superop(&c.op);
            if c.kind == CollapseKind::Radiative {
                emission = &emission + &(&c.op.adjoint() * &c.op);
            }
        }
        let drives = terms
            .drives
            .iter()
            .map(|d| DriveSuperop {
                term: d.clone(),
                raising: SparseSuperop::from_dense(&commutator_superop(&d.coupling)),
                lowering: SparseSuperop::from_dense(&commutator_superop(&d.coupling.adjoint())),
            })
            .collect();
        let gen = Self { terms, collapse, static_part, drives, emission };
        let leak = Superoperator::new(gen.static_part.clone())?.trace_leak();
        if leak > 1e-9 * gen.static_part.norm_max().max(1.0) {
            return Err(Error::InvariantViolation { what: "trace leak of generator", value: leak, time: 0.0 });
        }
        Ok(gen)
    }

    /// Time-independent generator from a Hamiltonian and collapse operators.
    pub fn time_independent(h: ComplexMatrix, collapse: Vec<CollapseOperator>) -> Result<Self> {
        Self::new(HamiltonianTerms { static_part: h, drives: Vec::new() }, collapse)
    }

    /// Generator of the four-level model for one Overhauser realisation.
    pub fn for_system(cfg: &SystemConfig, oh: &MagneticField) -> Result<Self> {
        Self::new(hamiltonian_terms(cfg, oh), collapse_operators(cfg, oh))
    }

    pub fn terms(&self) -> &HamiltonianTerms {
        &self.terms
    }

    pub fn collapse_operators(&self) -> &[CollapseOperator] {
        &self.collapse
    }

    /// Radiative collapse operators (photon emission channels).
    pub fn emission_operators(&self) -> impl Iterator<Item = &ComplexMatrix> {
        self.collapse.iter().filter(|c| c.kind == CollapseKind::Radiative).map(|c| &c.op)
    }

    /// `Σ L_k†L_k` over radiative channels.
    pub fn emission_operator(&self) -> &ComplexMatrix {
        &self.emission
    }

    pub fn hamiltonian(&self, t: f64) -> ComplexMatrix {
        self.terms.at(t)
    }

    pub fn is_time_dependent(&self) -> bool {
        !self.terms.is_time_independent()
    }

    /// Upper bound on `‖L(t)‖∞` over all `t`.
    pub fn scale(&self) -> f64 {
        let drives: f64 =
            self.drives.iter().map(|d| d.raising.norm_inf() + d.lowering.norm_inf()).sum();
        self.static_part.norm_inf() + drives
    }

    /// Photon emission rate `Σ_k Tr(L_k†L_k ρ)` in µs⁻¹ (= MHz).
    pub fn photon_rate(&self, rho: &ComplexMatrix) -> f64 {
        let mut acc = ZERO;
        for i in 0..DIM {
            for j in 0..DIM {
                acc += self.emission[(i, j)] * rho[(j, i)];
            }
        }
        acc.re
    }

    fn photon_rate_vec(&self, v: &[C64]) -> f64 {
        let mut acc = ZERO;
        for i in 0..DIM {
            for j in 0..DIM {
                acc += self.emission[(i, j)] * v[j + DIM * i];
            }
        }
        acc.re
    }

    /// Dense Liouvillian at time `t`.
    pub fn liouvillian_at(&self, t: f64) -> Superoperator {
        let mut l = self.static_part.clone();
        for d in &self.drives {
            let e = C64::from_polar(1.0, -d.term.angle(t));
            for &(i, j, v) in &d.raising.entries {
                l[(i, j)] += e * v;
            }
            for &(i, j, v) in &d.lowering.entries {
                l[(i, j)] += e.conj() * v;
            }
        }
        Superoperator::new(l).expect("finite 16x16 generator")
    }

    /// `out = L(t)·v`.
    fn apply(&self, t: f64, v: &[C64], out: &mut [C64]) {
        self.static_part.mat_vec_into(v, out);
        if self.drives.is_empty() {
            return;
        }
        // drive Hamiltonian D(t) and −i[D, ρ] in 4×4 form
        let mut dh = [[ZERO; DIM]; DIM];
        for d in &self.drives {
            let e = C64::from_polar(1.0, -d.term.angle(t));
            for i in 0..DIM {
                for j in 0..DIM {
                    let c = d.term.coupling[(i, j)];
                    if c != ZERO {
                        dh[i][j] += e * c;
                        dh[j][i] += (e * c).conj();
                    }
                }
            }
        }
        for i in 0..DIM {
            for j in 0..DIM {
                let mut acc = ZERO;
                for m in 0..DIM {
                    acc += dh[i][m] * v[m + DIM * j] - v[i + DIM * m] * dh[m][j];
                }
                out[i + DIM * j] += NEG_I * acc;
            }
        }
    }

    /// Splits the generator as `L0 + e^{−iωt}L₊ + e^{iωt}L₋` when it is
    /// periodic with a single beat note. Returns `(L0, Some((ω, L₊, L₋)))`,
    /// or `(L, None)` for a time-independent generator.
    pub fn harmonic_parts(&self) -> Result<HarmonicParts> {
        let mut l0 = self.static_part.clone();
        let mut beat: Option<f64> = None;
        let mut plus = ComplexMatrix::zeros(LDIM, LDIM);
        let mut minus = ComplexMatrix::zeros(LDIM, LDIM);
        for d in &self.drives {
            if !d.term.phase.is_constant() {
                return Err(Error::NotPeriodic);
            }
            let phi = d.term.phase.value(0.0);
            let e = C64::from_polar(1.0, -phi);
            if d.term.beat_mhz == 0.0 {
                l0 = &l0 + &d.raising.to_dense(e);
                l0 = &l0 + &d.lowering.to_dense(e.conj());
                continue;
            }
            match beat {
                None => beat = Some(d.term.beat_mhz),
                Some(b) if (b - d.term.beat_mhz).abs() <= 1e-12 * b.abs() => {}
                Some(_) => return Err(Error::NotPeriodic),
            }
            plus = &plus + &d.raising.to_dense(e);
            minus = &minus + &d.lowering.to_dense(e.conj());
        }
        Ok(HarmonicParts {
            constant: l0,
            oscillating: beat.map(|b| Oscillation { omega: 2.0 * PI * b, plus, minus }),
        })
    }
}

fn check_square4(m: &ComplexMatrix) -> Result<()> {
    if m.rows() != DIM || m.cols() != DIM {
        return Err(Error::DimensionMismatch { expected: (DIM, DIM), found: (m.rows(), m.cols()) });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct HarmonicParts {
    pub constant: ComplexMatrix,
    pub oscillating: Option<Oscillation>,
}

/// `e^{−iωt}·plus + e^{iωt}·minus`, ω in rad/µs.
#[derive(Clone, Debug)]
pub struct Oscillation {
    pub omega: f64,
    pub plus: ComplexMatrix,
    pub minus: ComplexMatrix,
}

/// Settings shared by every RK4 integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    /// Largest allowed step, µs.
    pub dt_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { dt_max: 1e-3 }
    }
}

impl StepControl {
    /// Step bound `min(dt_max, STEP_FACTOR/scale)`.
    pub fn step_bound(&self, scale: f64) -> f64 {
        if scale > 0.0 {
            self.dt_max.min(STEP_FACTOR / scale)
        } else {
            self.dt_max
        }
    }
}

/// Sampled solution of the master equation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
    /// Photon emission rate per sample time, MHz.
    pub fluorescence: Vec<f64>,
    /// Worst deviations seen at the sample times.
    pub worst: StateDiagnostics,
}

impl Trajectory {
    pub fn final_state(&self) -> &DensityMatrix {
        self.states.last().expect("trajectory has at least one sample")
    }
}

#[inline]
fn rehermitize(v: &mut [C64]) {
    for i in 0..DIM {
        v[i + DIM * i].im = 0.0;
        for j in i + 1..DIM {
            let a = v[i + DIM * j];
            let b = v[j + DIM * i];
            let s = (a + b.conj()) * 0.5;
            v[i + DIM * j] = s;
            v[j + DIM * i] = s.conj();
        }
    }
}

/// Fixed-step RK4 on the vectorised state, with re-Hermitisation after
/// each step.
struct Rk4<'a> {
    gen: &'a LindbladGenerator,
    k1: [C64; LDIM],
    k2: [C64; LDIM],
    k3: [C64; LDIM],
    k4: [C64; LDIM],
    tmp: [C64; LDIM],
}

impl<'a> Rk4<'a> {
    fn new(gen: &'a LindbladGenerator) -> Self {
        Self {
            gen,
            k1: [ZERO; LDIM],
            k2: [ZERO; LDIM],
            k3: [ZERO; LDIM],
            k4: [ZERO; LDIM],
            tmp: [ZERO; LDIM],
        }
    }

    fn step(&mut self, t: f64, h: f64, v: &mut [C64]) {
        let gen = self.gen;
        gen.apply(t, v, &mut self.k1);
        for i in 0..LDIM {
            self.tmp[i] = v[i] + self.k1[i] * (0.5 * h);
        }
        gen.apply(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..LDIM {
            self.tmp[i] = v[i] + self.k2[i] * (0.5 * h);
        }
        gen.apply(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..LDIM {
            self.tmp[i] = v[i] + self.k3[i] * h;
        }
        gen.apply(t + h, &self.tmp, &mut self.k4);
        let w = h / 6.0;
        for i in 0..LDIM {
            v[i] += (self.k1[i] + (self.k2[i] + self.k3[i]) * 2.0 + self.k4[i]) * w;
        }
        rehermitize(v);
    }

    /// Advances `v` from `t0` to `t1` in equal steps no longer than `h_max`,
    /// calling `visit(t, v)` after every step.
    fn advance(
        &mut self,
        t0: f64,
        t1: f64,
        h_max: f64,
        v: &mut [C64],
        mut visit: impl FnMut(f64, &[C64]),
    ) -> Result<()> {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(());
        }
        let n = libm::ceil(span / h_max).max(1.0);
        let h = span / n;
        if !(h > 1e-15 * t1.abs().max(span)) {
            return Err(Error::StepUnderflow { step: h });
        }
        let n = n as u64;
        for k in 0..n {
            let t = t0 + h * k as f64;
            self.step(t, h, v);
            visit(if k + 1 == n { t1 } else { t + h }, v);
        }
        Ok(())
    }
}

fn check_state(v: &[C64], t: f64, worst: &mut StateDiagnostics) -> Result<DensityMatrix> {
    let m = devec(v)?;
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let d = StateDiagnostics::of(&m)?;
    monitor::record(&d);
    worst.hermiticity_error = worst.hermiticity_error.max(d.hermiticity_error);
    worst.trace_error = worst.trace_error.max(d.trace_error);
    worst.min_eigenvalue = worst.min_eigenvalue.min(d.min_eigenvalue);
    let bad = [
        ("hermiticity error", d.hermiticity_error, d.hermiticity_error > ABORT_TOLERANCE),
        ("trace error", d.trace_error, d.trace_error > ABORT_TOLERANCE),
        ("minimum eigenvalue", d.min_eigenvalue, d.min_eigenvalue < -ABORT_TOLERANCE),
    ];
    if let Some((what, value, _)) = bad.into_iter().find(|b| b.2) {
        return Err(Error::InvariantViolation { what, value, time: t });
    }
    Ok(DensityMatrix::new_unchecked(m))
}

/// Integrates from `t = 0` to `t_end`, sampling every `sample_every` µs.
pub fn evolve(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    t_end: f64,
    dt_max: f64,
    sample_every: f64,
) -> Result<Trajectory> {
    evolve_between(gen, rho0, 0.0, t_end, StepControl { dt_max }, sample_every)
}

/// Integrates from `t_start` to `t_end`; samples are taken at `t_start`,
/// every `sample_every` µs after it, and at `t_end`.
pub fn evolve_between(
    gen: &LindbladGenerator,
    rho0: &DensityMatrix,
    t_start: f64,
    t_end: f64,
    control: StepControl,
    sample_every: f64,
) -> Result<Trajectory> {
    if !(t_end > t_start) {
        return Err(Error::InvalidParameter {
            name: "t_end",
            reason: alloc::string::String::from("must exceed the start time"),
        });
    }
    if !(control.dt_max > 0.0) || !(sample_every > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt_max",
            reason: alloc::string::String::from("step and sampling interval must be positive"),
        });
    }
    let h_max = control.step_bound(gen.scale());
    let mut v = rho0.to_vec();
    let mut worst = StateDiagnostics { min_eigenvalue: f64::INFINITY, ..Default::default() };
    let mut times = vec![t_start];
    let mut states = vec![check_state(&v, t_start, &mut worst)?];
    let mut fluorescence = vec![gen.photon_rate(rho0.matrix())];
    let mut rk = Rk4::new(gen);
    let n_samples = libm::ceil((t_end - t_start) / sample_every - 1e-9).max(1.0) as u64;
    for k in 0..n_samples {
        let a = t_start + sample_every * k as f64;
        let b = if k + 1 == n_samples { t_end } else { t_start + sample_every * (k + 1) as f64 };
        rk.advance(a, b, h_max, &mut v, |_, _| {})?;
        states.push(check_state(&v, b, &mut worst)?);
        times.push(b);
        fluorescence.push(gen.photon_rate_vec(&v));
    }
    Ok(Trajectory { times, states, fluorescence, worst })
}

/// Maximally mixed state over the two ground levels.
pub fn mixed_ground_state() -> DensityMatrix {
    DensityMatrix::diagonal([0.5, 0.5, 0.0, 0.0]).expect("valid state")
}

/// Stationary state of a time-independent generator.
///
/// Solves `L·vec(ρ) = 0` with the first row replaced by the trace
/// condition. A rank-deficient system (more than one stationary state) is
/// reported, not resolved.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix> {
    let v = stationary_vector(l.matrix())?;
    let residual = l.apply(&v).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if residual > 1e-8 {
        return Err(Error::NonStationary { residual });
    }
    to_state(&v)
}

fn stationary_vector(l: &ComplexMatrix) -> Result<Vec<C64>> {
    let mut a = l.clone();
    for j in 0..LDIM {
        a[(0, j)] = ZERO;
    }
    for k in 0..DIM {
        a[(0, k * (DIM + 1))] = ONE;
    }
    let mut b = vec![ZERO; LDIM];
    b[0] = ONE;
    match LuDecomposition::new(&a) {
        Ok(lu) => lu.solve(&b),
        Err(Error::SingularMatrix { .. }) => Err(Error::NonUniqueSteadyState),
        Err(e) => Err(e),
    }
}

fn to_state(v: &[C64]) -> Result<DensityMatrix> {
    let mut v = v.to_vec();
    rehermitize(&mut v);
    let tr = vec_trace(&v);
    for z in v.iter_mut() {
        *z /= tr;
    }
    let m = devec(&v)?;
    DensityMatrix::with_tolerance(
        m,
        &StateTolerance { hermiticity: 1e-10, trace: 1e-9, min_eigenvalue: -1e-8 },
    )
}

/// Periodic steady state `ρ(t) = Σ_n ρ_n e^{−inωt}` of a generator with a
/// single beat note.
#[derive(Clone, Debug)]
pub struct PeriodicState {
    /// Angular beat frequency, rad/µs (0 for a time-independent generator).
    pub omega: f64,
    /// Harmonics `ρ_{−N} … ρ_N` as vectorised matrices.
    harmonics: Vec<Vec<C64>>,
}

impl PeriodicState {
    pub fn order(&self) -> usize {
        (self.harmonics.len() - 1) / 2
    }

    /// Time-averaged state `ρ_0`.
    pub fn mean_vector(&self) -> &[C64] {
        &self.harmonics[self.order()]
    }

    pub fn mean_state(&self) -> Result<DensityMatrix> {
        to_state(self.mean_vector())
    }

    pub fn harmonic(&self, n: i64) -> Option<&[C64]> {
        let idx = n + self.order() as i64;
        (idx >= 0).then(|| self.harmonics.get(idx as usize).map(|v| v.as_slice())).flatten()
    }

    /// State at time `t` (µs).
    pub fn state_at(&self, t: f64) -> Result<DensityMatrix> {
        let n = self.order() as i64;
        let mut v = vec![ZERO; LDIM];
        for (k, h) in self.harmonics.iter().enumerate() {
            let e = C64::from_polar(1.0, -((k as i64 - n) as f64) * self.omega * t);
            for (a, b) in v.iter_mut().zip(h) {
                *a += e * b;
            }
        }
        to_state(&v)
    }

    /// Time-averaged photon rate, MHz.
    pub fn mean_fluorescence(&self, gen: &LindbladGenerator) -> f64 {
        gen.photon_rate_vec(self.mean_vector())
    }
}

/// Relative size of the highest retained harmonic accepted as converged.
pub const HARMONIC_TOLERANCE: f64 = 1e-10;
const MAX_HARMONIC_ORDER: usize = 512;

/// Periodic steady state by matrix continued fractions over the harmonic
/// components. Falls back to [`steady_state`] for time-independent
/// generators.
pub fn periodic_steady_state(gen: &LindbladGenerator) -> Result<PeriodicState> {
    let parts = gen.harmonic_parts()?;
    let Some(osc) = parts.oscillating else {
        let v = stationary_vector(&parts.constant)?;
        return Ok(PeriodicState { omega: 0.0, harmonics: vec![v] });
    };
    let plus = SparseSuperop::from_dense(&osc.plus);
    let minus = SparseSuperop::from_dense(&osc.minus);
    let mut order = 8;
    loop {
        let harmonics = harmonic_solve(&parts.constant, &plus, &minus, osc.omega, order)?;
        let tail = harmonics[0].iter().chain(&harmonics[2 * order]).map(|z| z.norm()).fold(0.0, f64::max);
        if tail <= HARMONIC_TOLERANCE || order >= MAX_HARMONIC_ORDER {
            if tail > HARMONIC_TOLERANCE {
                return Err(Error::InvariantViolation {
                    what: "harmonic truncation residual",
                    value: tail,
                    time: 0.0,
                });
            }
            return Ok(PeriodicState { omega: osc.omega, harmonics });
        }
        order *= 2;
    }
}

/// `out = sparse · dense`
fn sparse_mul(s: &SparseSuperop, d: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(LDIM, d.cols());
    for &(i, k, v) in &s.entries {
        for j in 0..d.cols() {
            let x = d[(k, j)];
            out[(i, j)] += v * x;
        }
    }
    out
}

fn harmonic_solve(
    l0: &ComplexMatrix,
    plus: &SparseSuperop,
    minus: &SparseSuperop,
    omega: f64,
    order: usize,
) -> Result<Vec<Vec<C64>>> {
    let plus_dense = plus.to_dense(ONE);
    let minus_dense = minus.to_dense(ONE);
    // ρ_n = S_n ρ_{n−1} for n > 0 and ρ_n = T_n ρ_{n+1} for n < 0.
    let mut s: Vec<ComplexMatrix> = Vec::with_capacity(order);
    let mut t: Vec<ComplexMatrix> = Vec::with_capacity(order);
    let mut next_s: Option<ComplexMatrix> = None;
    let mut next_t: Option<ComplexMatrix> = None;
    for n in (1..=order).rev() {
        let shift = C64::new(0.0, n as f64 * omega);
        let mut m = l0.clone();
        for i in 0..LDIM {
            m[(i, i)] += shift;
        }
        if let Some(sn) = &next_s {
            m = &m + &sparse_mul(minus, sn);
        }
        let sn = LuDecomposition::new(&m)?.solve_matrix(&plus_dense)?.scale(-ONE);

        let mut m = l0.clone();
        for i in 0..LDIM {
            m[(i, i)] -= shift;
        }
        if let Some(tn) = &next_t {
            m = &m + &sparse_mul(plus, tn);
        }
        let tn = LuDecomposition::new(&m)?.solve_matrix(&minus_dense)?.scale(-ONE);
        s.push(sn.clone());
        t.push(tn.clone());
        next_s = Some(sn);
        next_t = Some(tn);
    }
    // s and t were pushed for n = order..1; reverse to index by n−1.
    s.reverse();
    t.reverse();
    let mut m0 = l0.clone();
    m0 = &m0 + &sparse_mul(minus, &s[0]);
    m0 = &m0 + &sparse_mul(plus, &t[0]);
    let rho0 = stationary_vector(&m0)?;

    let mut harmonics = vec![Vec::new(); 2 * order + 1];
    let mut prev = rho0.clone();
    for n in 1..=order {
        let next = s[n - 1].mat_vec(&prev)?;
        harmonics[order + n] = next.clone();
        prev = next;
    }
    let mut prev = rho0.clone();
    for n in 1..=order {
        let next = t[n - 1].mat_vec(&prev)?;
        harmonics[order - n] = next.clone();
        prev = next;
    }
    harmonics[order] = rho0;
    Ok(harmonics)
}

/// Result of [`quasi_steady_fluorescence`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuasiSteady {
    /// Time-averaged photon rate, MHz.
    pub fluorescence: f64,
    /// Averaging window finally used, µs.
    pub window: f64,
    /// Set when the half-window averages still differed by more than 2 %.
    pub unconverged: bool,
}

/// Default settling time before averaging, µs.
pub const DEFAULT_SETTLE: f64 = 2.0;

/// Averaging window used when none is given: five beat periods, at least
/// 0.05 µs.
pub fn default_average_window(gen: &LindbladGenerator) -> f64 {
    let beat = gen
        .terms()
        .drives
        .iter()
        .map(|d| d.beat_mhz.abs())
        .filter(|b| *b > 0.0)
        .fold(f64::INFINITY, f64::min);
    if beat.is_finite() {
        (5.0 / beat).max(0.05)
    } else {
        0.05
    }
}

/// Settles from the mixed ground state for `settle` µs, then averages the
/// photon rate over `average_window` µs, doubling the window (up to four
/// times) while the two half-window averages differ by more than 2 %.
pub fn quasi_steady_fluorescence(
    gen: &LindbladGenerator,
    settle: f64,
    average_window: f64,
    control: StepControl,
) -> Result<QuasiSteady> {
    if !(settle >= 0.0) || !(average_window > 0.0) {
        return Err(Error::InvalidParameter {
            name: "average_window",
            reason: alloc::string::String::from("settle must be >= 0 and the window > 0"),
        });
    }
    let h_max = control.step_bound(gen.scale());
    let mut v = mixed_ground_state().to_vec();
    let mut rk = Rk4::new(gen);
    if gen.scale() == 0.0 {
        return Ok(QuasiSteady { fluorescence: gen.photon_rate_vec(&v), window: average_window, unconverged: false });
    }
    rk.advance(0.0, settle, h_max, &mut v, |_, _| {})?;
    let mut window = average_window;
    for attempt in 0..5 {
        let mut w = v.clone();
        let mid = settle + 0.5 * window;
        let first = average_over(&mut rk, gen, settle, mid, h_max, &mut w)?;
        let second = average_over(&mut rk, gen, mid, settle + window, h_max, &mut w)?;
        let mean = 0.5 * (first + second);
        let scale = mean.abs().max(1e-300);
        let converged = (first - second).abs() <= 0.02 * scale || mean == 0.0;
        if converged || attempt == 4 {
            return Ok(QuasiSteady { fluorescence: mean, window, unconverged: !converged });
        }
        window *= 2.0;
    }
    unreachable!("loop returns on the last attempt")
}

/// Trapezoidal time-average of the photon rate over `[a, b]`.
fn average_over(
    rk: &mut Rk4<'_>,
    gen: &LindbladGenerator,
    a: f64,
    b: f64,
    h_max: f64,
    v: &mut [C64],
) -> Result<f64> {
    let mut last_t = a;
    let mut last_f = gen.photon_rate_vec(v);
    let mut integral = 0.0;
    rk.advance(a, b, h_max, v, |t, w| {
        let f = gen.photon_rate_vec(w);
        integral += 0.5 * (f + last_f) * (t - last_t);
        last_t = t;
        last_f = f;
    })?;
    Ok(integral / (b - a))
}

/// One-step RK4 map of a time-independent generator,
/// `P_h = I + hL + (hL)²/2 + (hL)³/6 + (hL)⁴/24`, which is exactly what an
/// RK4 step does to a linear autonomous system.
pub fn rk4_step_matrix(l: &ComplexMatrix, h: f64) -> ComplexMatrix {
    let n = l.rows();
    let hl = l.scale_real(h);
    let mut term = ComplexMatrix::identity(n);
    let mut acc = ComplexMatrix::identity(n);
    for k in 1..=4 {
        term = (&term * &hl).scale_real(1.0 / k as f64);
        acc = &acc + &term;
    }
    acc
}

/// RK4 propagator over `span` for a time-independent generator, using
/// equal steps no longer than `h_max` (binary powering of the step map).
pub fn rk4_interval_propagator(l: &ComplexMatrix, span: f64, h_max: f64) -> ComplexMatrix {
    let steps = libm::ceil(span / h_max).max(1.0) as u64;
    let step = rk4_step_matrix(l, span / steps as f64);
    matrix_power(&step, steps)
}

fn matrix_power(m: &ComplexMatrix, mut k: u64) -> ComplexMatrix {
    let mut result = ComplexMatrix::identity(m.rows());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}
