//! Error type shared across the crate.

use std::fmt;

#[derive(Debug)]
pub enum SvdsError {
    /// An argument violated a documented contract (shape, range, finiteness).
    InvalidArgument(String),
    /// The Krylov subspace cannot be sized for this matrix/rank combination.
    SubspaceTooSmall {
        k: usize,
        t: usize,
        min_dim: usize,
    },
    /// A residual denominator vanished while its numerator did not.
    RankDeficient { index: usize },
    /// The Jacobi sweep loop hit its sweep cap without meeting the off-diagonal
    /// tolerance.
    JacobiNoConvergence { sweeps: usize },
    /// A file could not be parsed; `line` is 1-based.
    Parse { line: usize, message: String },
    Io(std::io::Error),
    ThreadPool(String),
}

impl fmt::Display for SvdsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SvdsError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            SvdsError::SubspaceTooSmall { k, t, min_dim } => write!(
                f,
                "subspace dimension {t} cannot hold rank {k} on a matrix with min(m,n) = {min_dim}; \
                 use the dense full-decomposition path for matrices this small"
            ),
            SvdsError::RankDeficient { index } => write!(
                f,
                "rank deficiency: singular value {index} is zero with a nonzero residual numerator"
            ),
            SvdsError::JacobiNoConvergence { sweeps } => {
                write!(f, "Jacobi SVD did not converge after {sweeps} sweeps")
            }
            SvdsError::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            SvdsError::Io(err) => write!(f, "io error: {err}"),
            SvdsError::ThreadPool(msg) => write!(f, "thread pool error: {msg}"),
        }
    }
}

impl std::error::Error for SvdsError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            SvdsError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for SvdsError {
    fn from(err: std::io::Error) -> Self {
        SvdsError::Io(err)
    }
}
