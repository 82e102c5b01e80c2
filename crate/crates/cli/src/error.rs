use std::fmt;
use std::path::Path;

use interleave::analysis::AnalysisError;
use interleave::conditioning::ConditioningError;
use interleave::grid::GridError;
use interleave::model::ModelError;
use interleave::oracle::OracleError;
use interleave::patterns::PatternError;
use interleave::rvq::RvqError;
use interleave::sampling::SamplingError;

/// Process exit status for each failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Validation = 3,
    Resource = 4,
    Invariant = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Usage, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Validation, message: message.into() }
    }

    pub fn resource(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Resource, message: message.into() }
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Invariant, message: message.into() }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::resource(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, Failure>;

impl From<PatternError> for Failure {
    fn from(e: PatternError) -> Self {
        match e {
            PatternError::UnknownKind(_) | PatternError::Construction { .. } => Failure::usage(e.to_string()),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        Failure::validation(e.to_string())
    }
}

impl From<ConditioningError> for Failure {
    fn from(e: ConditioningError) -> Self {
        match e {
            ConditioningError::InvalidParameter(_) | ConditioningError::Probability { .. } => {
                Failure::usage(e.to_string())
            }
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<RvqError> for Failure {
    fn from(e: RvqError) -> Self {
        match e {
            RvqError::Config(_) | RvqError::InsufficientData { .. } => Failure::usage(e.to_string()),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::ConditionNotAccepted(_) | ModelError::TooManySteps { .. } => {
                Failure::usage(e.to_string())
            }
            ModelError::NonFinite(_) => Failure::invariant(e.to_string()),
            ModelError::Pattern(p) => p.into(),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<SamplingError> for Failure {
    fn from(e: SamplingError) -> Self {
        match e {
            SamplingError::Config(_) | SamplingError::PromptTooLong { .. } => Failure::usage(e.to_string()),
            SamplingError::ReadBeforeWrite { .. } | SamplingError::NonFinite => Failure::invariant(e.to_string()),
            SamplingError::Model(m) => m.into(),
            SamplingError::Pattern(p) => p.into(),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::TooLarge { .. } => Failure::resource(e.to_string()),
            OracleError::UnknownFamily(_) | OracleError::Shape(_) => Failure::usage(e.to_string()),
            OracleError::Pattern(p) => p.into(),
            _ => Failure::invariant(e.to_string()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Sampling(s) => s.into(),
            AnalysisError::Pattern(p) => p.into(),
            AnalysisError::Grid(g) => g.into(),
            AnalysisError::Rvq(r) => r.into(),
            AnalysisError::Conditioning(c) => c.into(),
            AnalysisError::EmptyDataset | AnalysisError::TooShort { .. } | AnalysisError::Config(_) => {
                Failure::usage(e.to_string())
            }
        }
    }
}
