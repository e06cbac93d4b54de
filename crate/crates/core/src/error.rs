use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes disagree.
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    NotSquare { rows: usize, cols: usize },
    NotSymmetric { asymmetry: f64 },
    /// An eigenvalue (or Cholesky pivot) fell below the admissible floor.
    NotPositiveDefinite { min_eigenvalue: f64 },
    NonFinite { row: usize, col: usize },
    InvalidArgument(String),
    /// Mask entries set outside the training block.
    MaskOutsideTraining { row: usize, col: usize },
    /// Rows with no observed value inside the conditioning horizon.
    UnobservedRows(Vec<usize>),
    /// Flat-prior precision is singular because some rows were never observed.
    SingularPrecision(Vec<usize>),
    IndexOutOfRange { index: usize, len: usize },
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            found,
        }
    }

    /// True for failures of the numerical kind (as opposed to bad input shapes or arguments).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::SingularPrecision(_) | Error::NonFinite { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, found {found}"),
            Error::NotSquare { rows, cols } => write!(f, "matrix is not square ({rows}x{cols})"),
            Error::NotSymmetric { asymmetry } => {
                write!(f, "matrix is not symmetric (relative asymmetry {asymmetry:e})")
            }
            Error::NotPositiveDefinite { min_eigenvalue } => write!(
                f,
                "matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})"
            ),
            Error::NonFinite { row, col } => write!(f, "non-finite entry at ({row}, {col})"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::MaskOutsideTraining { row, col } => write!(
                f,
                "mask entry ({row}, {col}) lies outside the training block"
            ),
            Error::UnobservedRows(rows) => write!(
                f,
                "rows without any observed training value: {rows:?}"
            ),
            Error::SingularPrecision(rows) => write!(
                f,
                "posterior precision is singular: rows {rows:?} are never observed"
            ),
            Error::IndexOutOfRange { index, len } => {
                write!(f, "index {index} out of range for length {len}")
            }
        }
    }
}

impl core::error::Error for Error {}
