//! Overhauser-field ensemble: deterministic Gaussian sampling, ensemble
//! reduction and spectral-wandering convolution.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::model::MagneticField;
use crate::{Error, Result};

/// Philox4x64-10 counter-based generator (Salmon et al., SC'11).
///
/// Every output block is a pure function of `(key, counter)`, so samples
/// can be drawn in any order, on any number of threads, and still agree
/// bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Philox4x64 {
    key: [u64; 2],
}

const PHILOX_M0: u64 = 0xD2E7_470E_E14C_6C93;
const PHILOX_M1: u64 = 0xCA5A_8263_9512_1157;
const PHILOX_W0: u64 = 0x9E37_79B9_7F4A_7C15;
const PHILOX_W1: u64 = 0xBB67_AE85_84CA_A73B;

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = (a as u128) * (b as u128);
    ((p >> 64) as u64, p as u64)
}

impl Philox4x64 {
    pub fn new(key: [u64; 2]) -> Self {
        Self { key }
    }

    pub fn block(&self, counter: [u64; 4]) -> [u64; 4] {
        let mut c = counter;
        let mut k = self.key;
        for round in 0..10 {
            if round > 0 {
                k[0] = k[0].wrapping_add(PHILOX_W0);
                k[1] = k[1].wrapping_add(PHILOX_W1);
            }
            let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
            let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
            c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        }
        c
    }
}

/// Maps 64 random bits to a uniform deviate in `(0, 1]`.
#[inline]
pub fn unit_interval(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box–Muller pair from two uniform deviates in `(0, 1]`. Uses `libm` so the
/// result does not depend on the platform's math library.
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = libm::sqrt(-2.0 * libm::log(u1));
    let (s, c) = libm::sincos(2.0 * PI * u2);
    (r * c, r * s)
}

/// Stream identifier that keys Overhauser-field draws.
pub const OH_STREAM: u64 = 0x4f48_6669_656c_6400;

/// Isotropic Gaussian Overhauser-field ensemble.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OhEnsembleSpec {
    /// Standard deviation per Cartesian component, mT.
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl OhEnsembleSpec {
    pub fn new(sigma: f64, n_samples: usize, seed: u64) -> Result<Self> {
        let spec = Self { sigma, n_samples, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: alloc::format!("must be finite and >= 0, got {}", self.sigma),
            });
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: alloc::string::String::from("must be at least 1"),
            });
        }
        Ok(())
    }
}

/// Overhauser field of realisation `index`; a pure function of
/// `(seed, index)`.
pub fn sample_oh(spec: &OhEnsembleSpec, index: usize) -> MagneticField {
    if spec.sigma == 0.0 {
        return MagneticField::ZERO;
    }
    let rng = Philox4x64::new([spec.seed, OH_STREAM]);
    let b = rng.block([index as u64, 0, 0, 0]);
    let (x, y) = box_muller(unit_interval(b[0]), unit_interval(b[1]));
    let (z, _) = box_muller(unit_interval(b[2]), unit_interval(b[3]));
    MagneticField::new(spec.sigma * x, spec.sigma * y, spec.sigma * z)
}

/// Mean and standard error of an ensemble of scalar kernel values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Number of samples that passed post-selection.
    pub n_effective: usize,
}

impl EnsembleEstimate {
    /// Reduces values in the order given (index order for reproducibility).
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::EmptySelection);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self { mean, std_error, n_effective: n })
    }

    /// Reduces per-sample results where `None` marks a rejected sample.
    pub fn from_selected(values: &[Option<f64>]) -> Result<Self> {
        let accepted: Vec<f64> = values.iter().filter_map(|v| *v).collect();
        Self::from_values(&accepted)
    }
}

/// Evaluates `kernel` on every realisation (in index order) and reduces the
/// accepted values. `filter` returning `false` rejects a realisation.
pub fn ensemble_average<K, F>(spec: &OhEnsembleSpec, mut kernel: K, filter: Option<F>) -> Result<EnsembleEstimate>
where
    K: FnMut(usize, &MagneticField) -> Result<f64>,
    F: Fn(&MagneticField) -> bool,
{
    spec.validate()?;
    let mut values = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let oh = sample_oh(spec, i);
        if filter.as_ref().is_none_or(|f| f(&oh)) {
            values.push(kernel(i, &oh)?);
        }
    }
    EnsembleEstimate::from_values(&values)
}

/// Uniformly spaced 2-D map, `values[i * n2 + j]` at `(axis1[i], axis2[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2 {
    pub axis1: Vec<f64>,
    pub axis2: Vec<f64>,
    pub values: Vec<f64>,
}

impl Grid2 {
    pub fn new(axis1: Vec<f64>, axis2: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != axis1.len() * axis2.len() {
            return Err(Error::DimensionMismatch {
                expected: (axis1.len(), axis2.len()),
                found: (values.len(), 1),
            });
        }
        Ok(Self { axis1, axis2, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis2.len() + j]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Common spacing of a uniform axis, or an error if the axis is not uniform.
pub fn uniform_spacing(axis: &[f64]) -> Result<f64> {
    if axis.len() < 2 {
        return Ok(0.0);
    }
    let h = (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    let uniform = axis
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1e-300));
    if !uniform || h <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: alloc::string::String::from("axis must be increasing with uniform spacing"),
        });
    }
    Ok(h)
}

/// Result of [`wander_convolve`].
#[derive(Clone, Debug, PartialEq)]
pub struct Convolved {
    pub map: Grid2,
    /// Set when `sigma_w` exceeds a quarter of the grid extent.
    pub wide_kernel: bool,
}

/// Gaussian convolution along the common-shift direction
/// `(Δ₁, Δ₂) → (Δ₁+s, Δ₂+s)`, truncated at ±4σ.
///
/// Kernel taps that fall off the grid are returned to the centre tap. The
/// kernel is symmetric, so the operator stays doubly stochastic: constant
/// maps are unchanged and the map mean is preserved.
pub fn wander_convolve(map: &Grid2, sigma_w: f64) -> Result<Convolved> {
    if !(sigma_w >= 0.0) || !sigma_w.is_finite() {
        return Err(Error::InvalidParameter {
            name: "spectral_wander_sigma",
            reason: alloc::format!("must be finite and >= 0, got {sigma_w}"),
        });
    }
    let h1 = uniform_spacing(&map.axis1)?;
    let h2 = uniform_spacing(&map.axis2)?;
    let (n1, n2) = (map.axis1.len(), map.axis2.len());
    let h = if n1 > 1 { h1 } else { h2 };
    if n1 > 1 && n2 > 1 && (h1 - h2).abs() > 1e-9 * h1 {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: alloc::string::String::from("diagonal convolution needs equal spacing on both axes"),
        });
    }
    let extent = (n1.max(n2) - 1) as f64 * h;
    let wide_kernel = sigma_w > extent / 4.0;
    if sigma_w == 0.0 || h == 0.0 {
        return Ok(Convolved { map: map.clone(), wide_kernel });
    }
    let reach = libm::floor(4.0 * sigma_w / h) as i64;
    let mut taps: Vec<f64> = (-reach..=reach)
        .map(|k| {
            let s = k as f64 * h / sigma_w;
            libm::exp(-0.5 * s * s)
        })
        .collect();
    let norm: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= norm;
    }
    let mut out = vec![0.0; map.values.len()];
    for i in 0..n1 {
        for j in 0..n2 {
            let mut acc = 0.0;
            let mut missing = 0.0;
            for (t, &w) in taps.iter().enumerate() {
                let k = t as i64 - reach;
                let (a, b) = (i as i64 + k, j as i64 + k);
                if a >= 0 && b >= 0 && (a as usize) < n1 && (b as usize) < n2 {
                    acc += w * map.get(a as usize, b as usize);
                } else {
                    missing += w;
                }
            }
            out[i * n2 + j] = acc + missing * map.get(i, j);
        }
    }
    Ok(Convolved {
        map: Grid2 { axis1: map.axis1.clone(), axis2: map.axis2.clone(), values: out },
        wide_kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        let g = Philox4x64::new([0, 0]);
        assert_eq!(
            g.block([1, 0, 0, 0]),
            [0x02f4ba6408e4d89b, 0x3dd62b0b9ca8c5b2, 0x1c8667a55d902e79, 0x907d7a052fd5b4dc]
        );
        let g = Philox4x64::new([u64::MAX, u64::MAX]);
        assert_eq!(
            g.block([0, 0, 0, 0]),
            [0x44b7493d1acfc229, 0x6636af8e997921dd, 0x3f73e132b5b3780e, 0x605644dde03b01b1]
        );
        let g = Philox4x64::new([0x452821e638d01377, 0xbe5466cf34e90c6c]);
        assert_eq!(
            g.block([0x243f6a8885a308d4, 0x13198a2e03707344, 0xa4093822299f31d0, 0x082efa98ec4e6c89]),
            [0x4c8e672094922aa3, 0x527061cd2884102a, 0xf4c265b2d783d553, 0x0556e76cb0298c8d]
        );
    }

    #[test]
    fn unit_interval_excludes_zero() {
        assert!(unit_interval(0) > 0.0);
        assert_eq!(unit_interval(u64::MAX), 1.0);
    }

    #[test]
    fn zero_sigma_gives_zero_field() {
        let spec = OhEnsembleSpec::new(0.0, 10, 3).unwrap();
        assert!((0..10).all(|i| sample_oh(&spec, i) == MagneticField::ZERO));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = OhEnsembleSpec::new(18.0, 100, 1).unwrap();
        let a = sample_oh(&spec, 7);
        let b = sample_oh(&spec, 7);
        assert_eq!(a.components().map(f64::to_bits), b.components().map(f64::to_bits));
        assert_ne!(a, sample_oh(&spec, 8));
    }

    #[test]
    fn constant_kernel_has_no_spread() {
        let spec = OhEnsembleSpec::new(18.0, 50, 2).unwrap();
        let e = ensemble_average(&spec, |_, _| Ok(1.0), None::<fn(&MagneticField) -> bool>).unwrap();
        assert_eq!((e.mean, e.std_error, e.n_effective), (1.0, 0.0, 50));
    }

    #[test]
    fn rejecting_everything_is_an_error() {
        let spec = OhEnsembleSpec::new(18.0, 50, 2).unwrap();
        let r = ensemble_average(&spec, |_, _| Ok(1.0), Some(|_: &MagneticField| false));
        assert_eq!(r, Err(Error::EmptySelection));
    }

    #[test]
    fn zero_wander_is_identity() {
        let g = Grid2::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0], (0..9).map(f64::from).collect()).unwrap();
        let c = wander_convolve(&g, 0.0).unwrap();
        assert_eq!(c.map, g);
    }

    #[test]
    fn rejects_unequal_spacing() {
        let g = Grid2::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 4.0], vec![0.0; 9]).unwrap();
        assert!(wander_convolve(&g, 1.0).is_err());
        let g = Grid2::new(vec![0.0, 1.0, 3.0], vec![0.0, 1.0, 2.0], vec![0.0; 9]).unwrap();
        assert!(wander_convolve(&g, 1.0).is_err());
    }
}
