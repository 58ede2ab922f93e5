use std::fmt;
use std::path::PathBuf;

use topicsteer_core::Error as CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Validation,
    MissingArtifact,
    Numerical,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Validation => 1,
            Kind::MissingArtifact => 2,
            Kind::Numerical => 3,
        }
    }
}

/// A failure attributed to a pipeline stage.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub kind: Kind,
    pub message: String,
}

impl StageError {
    pub fn new(stage: &'static str, kind: Kind, message: impl Into<String>) -> Self {
        Self { stage, kind, message: message.into() }
    }

    pub fn validation(stage: &'static str, message: impl Into<String>) -> Self {
        Self::new(stage, Kind::Validation, message)
    }

    pub fn missing(stage: &'static str, path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        Self::new(stage, Kind::MissingArtifact, format!("missing artifact {}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = Result<T, StageError>;

pub fn core_kind(e: &CoreError) -> Kind {
    match e {
        CoreError::NonFinite(_) => Kind::Numerical,
        _ => Kind::Validation,
    }
}

/// Attaches a stage name to lower-level errors.
pub trait AtStage<T> {
    fn at(self, stage: &'static str) -> StageResult<T>;
}

impl<T> AtStage<T> for Result<T, CoreError> {
    fn at(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| StageError::new(stage, core_kind(&e), e.to_string()))
    }
}

impl<T> AtStage<T> for Result<T, crate::io::IoError> {
    fn at(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| match e {
            crate::io::IoError::NotFound(p) => StageError::missing(stage, p),
            e => StageError::validation(stage, e.to_string()),
        })
    }
}

impl<T> AtStage<T> for Result<T, crate::container::ContainerError> {
    fn at(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|e| match e {
            crate::container::ContainerError::Io(crate::io::IoError::NotFound(p)) => StageError::missing(stage, p),
            e => StageError::validation(stage, e.to_string()),
        })
    }
}
