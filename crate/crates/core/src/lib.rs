//! Numerical core for simulating a single quantum-dot electron spin that is
//! quantised by a quasi-static Overhauser field and driven by one or two
//! phase-controlled lasers.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation:
//!
//! * [`qcore`]: dense complex linear algebra for the 4-dimensional Hilbert
//!   space and the 16-dimensional Liouville space.
//! * [`model`]: the four-level Hamiltonian and collapse operators.
//! * [`dynamics`]: Lindblad generators, RK4 integration, steady states.
//! * [`nuclear`]: Overhauser-field sampling, ensemble reduction and
//!   spectral-wandering convolution.
//! * [`observables`]: fluorescence, photon correlations, dark/bright states.
//! * [`fit`]: a damped Gauss-Newton least-squares fitter.
//!
//! Units: times in µs, user-facing frequencies in MHz (ordinary frequency),
//! magnetic fields in mT. Hamiltonians and Liouvillians are in rad/µs.
#![no_std]

extern crate alloc;

pub mod dynamics;
pub mod fit;
pub mod model;
pub mod nuclear;
pub mod observables;
pub mod qcore;

mod error;

pub use error::Error;

pub type Result<T> = core::result::Result<T, Error>;

pub use num_complex::Complex64 as C64;
