use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("QUBO dimension {dim} exceeds the enumeration bound of {bound}")]
    EnumerationBound { dim: usize, bound: usize },

    #[error("register needs {atoms} atoms but the device allows at most {max}")]
    TooManyAtoms { atoms: usize, max: usize },

    #[error("atoms {0} and {1} coincide")]
    CoincidentAtoms(usize, usize),

    #[error("register violates hardware constraints: {0:?}")]
    UnvalidatedRegister(Vec<crate::embedding::Violation>),

    #[error("no feasible register after {restarts} restarts (best loss {best_loss})")]
    Infeasible {
        restarts: usize,
        best_loss: f64,
        best: Box<crate::embedding::Register>,
    },

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("model is not fitted")]
    NotFitted,

    #[error("{0}")]
    Data(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while running a computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::Invalid(_)
                | Error::EnumerationBound { .. }
                | Error::TooManyAtoms { .. }
                | Error::Unknown { .. }
                | Error::Data(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
