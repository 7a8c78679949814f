use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// LU elimination met a pivot below the relative threshold.
    SingularMatrix { pivot: f64, scale: f64 },
    NotHermitian { deviation: f64 },
    NonFinite,
    /// The quantisation axis is undefined for a zero field.
    DegenerateAxis,
    /// The generator has more than one stationary state.
    NonUniqueSteadyState,
    /// A state left the physical set by more than the abort tolerance.
    InvariantViolation {
        what: &'static str,
        value: f64,
        time: f64,
    },
    StepUnderflow { step: f64 },
    EmptySelection,
    /// Both Rabi frequencies of a Λ system vanish.
    UndefinedLambda,
    NonStationary { residual: f64 },
    /// Ground-state block has (numerically) no population.
    UndefinedBlochVector { trace: f64 },
    /// The generator is not periodic with a single beat frequency.
    NotPeriodic,
    InvalidParameter { name: &'static str, reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => write!(
                f,
                "dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::SingularMatrix { pivot, scale } => {
                write!(f, "singular matrix: pivot {pivot:e} against scale {scale:e}")
            }
            Error::NotHermitian { deviation } => {
                write!(f, "matrix is not Hermitian (deviation {deviation:e})")
            }
            Error::NonFinite => f.write_str("non-finite matrix entry"),
            Error::DegenerateAxis => f.write_str("zero magnetic field has no quantisation axis"),
            Error::NonUniqueSteadyState => {
                f.write_str("generator kernel is degenerate: steady state is not unique")
            }
            Error::InvariantViolation { what, value, time } => {
                write!(f, "state invariant violated at t = {time} us: {what} = {value:e}")
            }
            Error::StepUnderflow { step } => write!(f, "integration step underflow ({step:e} us)"),
            Error::EmptySelection => f.write_str("post-selection accepted no samples"),
            Error::UndefinedLambda => f.write_str("both Rabi frequencies vanish"),
            Error::NonStationary { residual } => {
                write!(f, "state is not stationary (residual {residual:e})")
            }
            Error::UndefinedBlochVector { trace } => {
                write!(f, "ground block trace {trace:e} too small for a Bloch vector")
            }
            Error::NotPeriodic => f.write_str("generator is not periodic in a single beat frequency"),
            Error::InvalidParameter { name, reason } => write!(f, "invalid {name}: {reason}"),
        }
    }
}

impl core::error::Error for Error {}
