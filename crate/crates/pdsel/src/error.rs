use std::fmt;

use pdsel_core::Error as CoreError;

/// Process exit classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage,
    Data,
    /// Non-finite results or failed verification.
    Numeric,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        match self {
            ExitKind::Usage => 1,
            ExitKind::Data => 2,
            ExitKind::Numeric => 3,
        }
    }
}

/// A stage-tagged error carrying its exit class.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct Failure {
    pub stage: &'static str,
    pub kind: ExitKind,
    pub message: String,
}

impl Failure {
    pub fn new(stage: &'static str, kind: ExitKind, message: impl fmt::Display) -> Self {
        Failure {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn usage(stage: &'static str, message: impl fmt::Display) -> Self {
        Failure::new(stage, ExitKind::Usage, message)
    }

    pub fn data(stage: &'static str, message: impl fmt::Display) -> Self {
        Failure::new(stage, ExitKind::Data, message)
    }

    pub fn numeric(stage: &'static str, message: impl fmt::Display) -> Self {
        Failure::new(stage, ExitKind::Numeric, message)
    }

    pub fn core(stage: &'static str, err: CoreError) -> Self {
        Failure::new(stage, classify(&err), err)
    }
}

/// Parameter problems are usage errors; everything about the records is data.
pub fn classify(err: &CoreError) -> ExitKind {
    match err {
        CoreError::InvalidParameter { .. } | CoreError::InfeasibleConflict { .. } | CoreError::TooLarge { .. } => {
            ExitKind::Usage
        }
        _ => ExitKind::Data,
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> StageExt<T> for Result<T, CoreError> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::core(stage, e))
    }
}
