use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: row has {found} fields, expected {expected}")]
    RaggedRow {
        line: u64,
        found: usize,
        expected: usize,
    },

    #[error("duplicate sensor id `{0}`")]
    DuplicateSensor(String),

    #[error("line {line}: time `{time}` does not increase")]
    NonMonotone { line: u64, time: String },

    #[error("line {line}: gap in time axis, missing {missing}")]
    Gap { line: u64, missing: String },

    #[error("line {line}: irregular sample interval ({found} instead of {expected})")]
    NonUniform {
        line: u64,
        found: i64,
        expected: i64,
    },

    #[error("{0} out of range")]
    Range(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("series of length {len} is too short, need more than {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("zero variance in correlation window")]
    ZeroVariance,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty tag list for sensor `{0}`")]
    EmptyTags(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::Numerical(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io(_))
    }
}
