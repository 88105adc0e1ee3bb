use std::fmt;

/// Errors from construction, validation, file handling, and the solver loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Matrix or argument dimensions do not line up.
    Shape(String),
    /// The edge list or capacities were rejected.
    Topology(String),
    /// A parameter is outside its documented range.
    Parameter(String),
    /// The directed graph does not connect every ordered node pair.
    NotStronglyConnected,
    /// Utility evaluated at a traffic matrix with nonpositive off-diagonal
    /// entries; carries how many entries were out of domain.
    UtilityDomain { nonpositive: usize },
    /// An iterate stopped being finite at the given iteration.
    NonFinite { iter: u64 },
    /// The perturbed presolve ran out of iterations before reaching a
    /// feasible traffic matrix.
    FeasibilityNotReached { iters: u64 },
    /// Instance generation kept producing disconnected graphs.
    GenerationFailed { attempts: u32 },
    /// An iterative method hit its iteration cap before reaching its
    /// tolerance. The main solver never returns this; it reports partial
    /// progress instead. Used by the slow test-side solver.
    NoConvergence { iters: u64 },
    /// Reading or writing a file failed.
    Io(String),
    /// A file parsed but did not match the documented schema.
    Format(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Topology(msg) => write!(f, "invalid topology: {msg}"),
            Error::Parameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::NotStronglyConnected => write!(f, "graph is not strongly connected"),
            Error::UtilityDomain { nonpositive } => write!(
                f,
                "utility undefined: {nonpositive} nonpositive off-diagonal traffic entries"
            ),
            Error::NonFinite { iter } => {
                write!(f, "iterate became non-finite at iteration {iter}")
            }
            Error::FeasibilityNotReached { iters } => {
                write!(f, "presolve found no feasible point within {iters} iterations")
            }
            Error::GenerationFailed { attempts } => {
                write!(f, "no strongly connected graph after {attempts} attempts")
            }
            Error::NoConvergence { iters } => {
                write!(f, "tolerance not reached within {iters} iterations")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
