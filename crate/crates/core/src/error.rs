use crate::data::CoefVector;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The objective became non-finite; the last finite iterate is attached.
    #[error("numerical blow-up after {iterations} iterations")]
    NumericalBlowUp {
        iterations: usize,
        last_iterate: Box<CoefVector>,
    },

    #[error("fit at lambda grid index {index} failed: {source}")]
    GridFit {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fit for source {source_index} failed: {source}")]
    SourceFit {
        source_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("distributed round {round} failed: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Csv {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("codec: {0}")]
    Codec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical routines rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NumericalBlowUp { .. } => true,
            Error::GridFit { source, .. }
            | Error::SourceFit { source, .. }
            | Error::Round { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
