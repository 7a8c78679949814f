//! Dense complex linear algebra for a 4-level Hilbert space and its
//! 16-dimensional Liouville space.
//!
//! Vectorisation convention (used everywhere in the crate): column stacking,
//! `vec(M)[i + n*j] = M[i][j]`. Under this convention
//! `vec(A·B·C) = (Cᵀ ⊗ A)·vec(B)`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Index, IndexMut, Mul, Sub};

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;


use crate::{Error, Result, C64};

/// Hilbert-space dimension of the model.
pub const DIM: usize = 4;
/// Liouville-space dimension (`DIM²`).
pub const LDIM: usize = DIM * DIM;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: (rows, cols),
                found: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(*d, 0.0);
        }
        m
    }

    /// `|a⟩⟨b|`
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j].conj())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry modulus.
    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Induced ∞-norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `‖M − M†‖_max`
    pub fn hermiticity_error(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut err: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                err = err.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        err
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: (self.cols, rhs.cols),
                found: (rhs.rows, rhs.cols),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mat_vec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: (self.cols, 1),
                found: (v.len(), 1),
            });
        }
        let mut out = vec![ZERO; self.rows];
        self.mat_vec_into(v, &mut out);
        Ok(out)
    }

    /// `out = self · v`, no dimension checks beyond debug asserts.
    #[inline]
    pub fn mat_vec_into(&self, v: &[C64], out: &mut [C64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = ZERO;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o = acc;
        }
    }

    /// Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Self) -> Self {
        let rows = self.rows * rhs.rows;
        let cols = self.cols * rhs.cols;
        Self::from_fn(rows, cols, |i, j| {
            self[(i / rhs.rows, j / rhs.cols)] * rhs[(i % rhs.rows, j % rhs.cols)]
        })
    }

    /// Submatrix copy of `rows × cols` starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    /// `(M + M†)/2`
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)].conj()) * 0.5)
    }

    /// `self += s · rhs`
    pub fn add_scaled(&mut self, s: C64, rhs: &Self) {
        debug_assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += s * b;
        }
    }

    /// Commutator `[A, B]`.
    pub fn commutator(&self, rhs: &Self) -> Result<Self> {
        Ok(&self.matmul(rhs)? - &rhs.matmul(self)?)
    }

    fn check_same_shape(&self, rhs: &Self) {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "elementwise operation on mismatched shapes"
        );
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.check_same_shape(rhs);
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.check_same_shape(rhs);
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Panics on mismatched shapes; use [`ComplexMatrix::matmul`] for a checked product.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

/// Column-stacking vectorisation of a square matrix.
pub fn vec(m: &ComplexMatrix) -> Result<Vec<C64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: (m.rows, m.rows),
            found: (m.rows, m.cols),
        });
    }
    let n = m.rows;
    let mut v = vec![ZERO; n * n];
    for j in 0..n {
        for i in 0..n {
            v[i + n * j] = m[(i, j)];
        }
    }
    Ok(v)
}

/// Inverse of [`vec`]; `v.len()` must be a perfect square.
pub fn devec(v: &[C64]) -> Result<ComplexMatrix> {
    let n = isqrt(v.len()).ok_or(Error::DimensionMismatch {
        expected: (v.len(), v.len()),
        found: (v.len(), 1),
    })?;
    Ok(ComplexMatrix::from_fn(n, n, |i, j| v[i + n * j]))
}

/// Trace of `devec(v)` without building the matrix.
#[inline]
pub fn vec_trace(v: &[C64]) -> C64 {
    let n = isqrt(v.len()).unwrap_or(0);
    (0..n).map(|i| v[i * (n + 1)]).sum()
}

fn isqrt(len: usize) -> Option<usize> {
    let n = (len as f64).sqrt().round() as usize;
    (n * n == len).then_some(n)
}

/// LU factorisation with partial pivoting, `P·A = L·U`.
#[derive(Clone, Debug)]
pub struct LuDecomposition {
    n: usize,
    lu: Vec<C64>,
    perm: Vec<usize>,
}

/// Pivots smaller than this fraction of `‖A‖∞` are treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

impl LuDecomposition {
    pub fn new(a: &ComplexMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: (a.rows, a.rows),
                found: (a.rows, a.cols),
            });
        }
        if !a.is_finite() {
            return Err(Error::NonFinite);
        }
        let n = a.rows;
        let scale = a.norm_inf();
        let threshold = PIVOT_TOLERANCE * scale;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmag) = (k..n)
                .map(|i| (i, lu[i * n + k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmag <= threshold || pmag == 0.0 {
                return Err(Error::SingularMatrix { pivot: pmag, scale });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let inv = ONE / lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] * inv;
                lu[i * n + k] = f;
                if f == ZERO {
                    continue;
                }
                for j in k + 1..n {
                    let u = lu[k * n + j];
                    lu[i * n + j] -= f * u;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: (n, 1), found: (b.len(), 1) });
        }
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        Ok(x)
    }

    /// Solves `A·X = B` column by column.
    pub fn solve_matrix(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        if b.rows != self.n {
            return Err(Error::DimensionMismatch {
                expected: (self.n, b.cols),
                found: (b.rows, b.cols),
            });
        }
        let mut out = ComplexMatrix::zeros(b.rows, b.cols);
        let mut col = vec![ZERO; b.rows];
        for j in 0..b.cols {
            for (i, c) in col.iter_mut().enumerate() {
                *c = b[(i, j)];
            }
            let x = self.solve(&col)?;
            for (i, xi) in x.into_iter().enumerate() {
                out[(i, j)] = xi;
            }
        }
        Ok(out)
    }
}

/// Solves `a·x = b` by LU with partial pivoting.
pub fn solve_linear(a: &ComplexMatrix, b: &[C64]) -> Result<Vec<C64>> {
    LuDecomposition::new(a)?.solve(b)
}

/// Eigenvalues of a Hermitian matrix in ascending order (cyclic Jacobi).
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: (m.rows, m.rows),
            found: (m.rows, m.cols),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    let dev = m.hermiticity_error();
    if dev > 1e-8 {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let n = m.rows;
    let mut a = m.hermitian_part();
    let scale = a.norm_frobenius();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let g = a[(p, q)];
                let gabs = g.norm();
                if gabs <= 1e-300 {
                    continue;
                }
                let phase = g / gabs; // e^{iα}
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = 0.5 * (2.0 * gabs).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                let s_ph = phase * s; // s e^{iα}
                let s_ph_conj = s_ph.conj(); // s e^{-iα}
                // A ← A·J
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c + akq * s_ph_conj;
                    a[(k, q)] = -akp * s_ph + akq * c;
                }
                // A ← J†·A
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c + aqk * s_ph;
                    a[(q, k)] = -apk * s_ph_conj + aqk * c;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

/// Validated 4×4 density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(ComplexMatrix);

/// Tolerances for [`DensityMatrix`] validation.
#[derive(Clone, Copy, Debug)]
pub struct StateTolerance {
    pub hermiticity: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
}

impl StateTolerance {
    pub const STRICT: Self = Self { hermiticity: 1e-10, trace: 1e-9, min_eigenvalue: -1e-8 };
}

/// Deviations of a matrix from the set of physical states.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateDiagnostics {
    pub hermiticity_error: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl StateDiagnostics {
    pub fn of(m: &ComplexMatrix) -> Result<Self> {
        let hermiticity_error = m.hermiticity_error();
        let trace_error = (m.trace() - ONE).norm();
        let min_eigenvalue = hermitian_eigenvalues(&m.hermitian_part())?[0];
        Ok(Self { hermiticity_error, trace_error, min_eigenvalue })
    }

    pub fn within(&self, tol: &StateTolerance) -> bool {
        self.hermiticity_error <= tol.hermiticity
            && self.trace_error <= tol.trace
            && self.min_eigenvalue >= tol.min_eigenvalue
    }
}

/// Process-wide record of the worst state deviations seen by the
/// integrator, for conservation audits over whole runs.
pub mod monitor {
    use core::sync::atomic::{AtomicU64, Ordering};

    use super::StateDiagnostics;

    // non-negative f64 bit patterns order like the values
    static HERMITICITY: AtomicU64 = AtomicU64::new(0);
    static TRACE: AtomicU64 = AtomicU64::new(0);
    static NEGATIVITY: AtomicU64 = AtomicU64::new(0);

    fn raise(slot: &AtomicU64, v: f64) {
        if v > 0.0 {
            slot.fetch_max(v.to_bits(), Ordering::Relaxed);
        } else if v.is_nan() {
            slot.store(f64::NAN.to_bits(), Ordering::Relaxed);
        }
    }

    pub fn record(d: &StateDiagnostics) {
        raise(&HERMITICITY, d.hermiticity_error);
        raise(&TRACE, d.trace_error);
        raise(&NEGATIVITY, -d.min_eigenvalue);
    }

    /// Worst deviations since the last [`reset`]; `min_eigenvalue` is
    /// capped at zero from above.
    pub fn worst() -> StateDiagnostics {
        let get = |s: &AtomicU64| f64::from_bits(s.load(Ordering::Relaxed));
        StateDiagnostics {
            hermiticity_error: get(&HERMITICITY),
            trace_error: get(&TRACE),
            min_eigenvalue: 0.0 - get(&NEGATIVITY),
        }
    }

    pub fn reset() {
        for s in [&HERMITICITY, &TRACE, &NEGATIVITY] {
            s.store(0, Ordering::Relaxed);
        }
    }
}

impl DensityMatrix {
    /// Validates against [`StateTolerance::STRICT`].
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(m, &StateTolerance::STRICT)
    }

    pub fn with_tolerance(m: ComplexMatrix, tol: &StateTolerance) -> Result<Self> {
        if m.rows != DIM || m.cols != DIM {
            return Err(Error::DimensionMismatch { expected: (DIM, DIM), found: (m.rows, m.cols) });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        let d = StateDiagnostics::of(&m)?;
        if d.hermiticity_error > tol.hermiticity {
            return Err(Error::InvariantViolation {
                what: "hermiticity error",
                value: d.hermiticity_error,
                time: 0.0,
            });
        }
        if d.trace_error > tol.trace {
            return Err(Error::InvariantViolation { what: "trace error", value: d.trace_error, time: 0.0 });
        }
        if d.min_eigenvalue < tol.min_eigenvalue {
            return Err(Error::InvariantViolation {
                what: "minimum eigenvalue",
                value: d.min_eigenvalue,
                time: 0.0,
            });
        }
        Ok(Self(m))
    }

    /// Wraps without validation; callers guarantee the invariants.
    pub(crate) fn new_unchecked(m: ComplexMatrix) -> Self {
        Self(m)
    }

    /// `|ψ⟩⟨ψ|` for a normalised 4-component state.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        if psi.len() != DIM {
            return Err(Error::DimensionMismatch { expected: (DIM, 1), found: (psi.len(), 1) });
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let psi: Vec<C64> = psi.iter().map(|z| z / norm).collect();
        Self::new(ComplexMatrix::outer(&psi, &psi))
    }

    /// Diagonal state with the given populations (normalised to unit trace).
    pub fn diagonal(populations: [f64; DIM]) -> Result<Self> {
        let total: f64 = populations.iter().sum();
        let p: Vec<f64> = populations.iter().map(|x| x / total).collect();
        Self::new(ComplexMatrix::from_real_diagonal(&p))
    }

    pub fn basis(index: usize) -> Self {
        let mut p = [0.0; DIM];
        p[index] = 1.0;
        Self(ComplexMatrix::from_real_diagonal(&p))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn population(&self, i: usize) -> f64 {
        self.0[(i, i)].re
    }

    pub fn to_vec(&self) -> Vec<C64> {
        vec(&self.0).expect("density matrix is square")
    }

    pub fn diagnostics(&self) -> StateDiagnostics {
        StateDiagnostics::of(&self.0).expect("density matrix is Hermitian")
    }

    /// `Tr(ρ σ)` fidelity-like overlap with a pure state, `⟨ψ|ρ|ψ⟩`.
    pub fn overlap_with_pure(&self, psi: &[C64]) -> f64 {
        let mut acc = ZERO;
        for i in 0..DIM {
            for j in 0..DIM {
                acc += psi[i].conj() * self.0[(i, j)] * psi[j];
            }
        }
        acc.re
    }
}

/// 16×16 generator acting on column-stacked density matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator(ComplexMatrix);

impl Superoperator {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if m.rows != LDIM || m.cols != LDIM {
            return Err(Error::DimensionMismatch { expected: (LDIM, LDIM), found: (m.rows, m.cols) });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self(m))
    }

    pub fn zero() -> Self {
        Self(ComplexMatrix::zeros(LDIM, LDIM))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; LDIM];
        self.0.mat_vec_into(v, &mut out);
        out
    }

    /// `max_M |Tr(devec(L·vec(M)))| / ‖M‖` over the matrix units `M = |i⟩⟨j|`.
    ///
    /// Zero for a trace-preserving generator; because the trace functional is
    /// linear, checking the basis covers every Hermitian `M`.
    pub fn trace_leak(&self) -> f64 {
        (0..LDIM)
            .map(|col| {
                (0..DIM).map(|k| self.0[(k * (DIM + 1), col)]).sum::<C64>().norm()
            })
            .fold(0.0, f64::max)
    }
}

/// `−i(I⊗H − Hᵀ⊗I)`: the commutator superoperator `ρ ↦ −i[H, ρ]`.
pub fn commutator_superop(h: &ComplexMatrix) -> ComplexMatrix {
    let id = ComplexMatrix::identity(h.rows());
    let left = id.kron(h);
    let right = h.transpose().kron(&id);
    (&left - &right).scale(C64::new(0.0, -1.0))
}

/// Superoperator of the Lindblad dissipator `D[L]ρ = LρL† − ½{L†L, ρ}`.
pub fn dissipator_superop(l: &ComplexMatrix) -> ComplexMatrix {
    let id = ComplexMatrix::identity(l.rows());
    let ldl = &l.adjoint() * l;
    let jump = l.conj().kron(l);
    let anti = &id.kron(&ldl) + &ldl.transpose().kron(&id);
    &jump - &anti.scale_real(0.5)
}
