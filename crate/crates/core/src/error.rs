use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no records")]
    NoRecords,
    #[error("record `{id}`: {field} has {found} entries, expected {expected}")]
    DimensionMismatch {
        id: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("duplicate pair id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}`: unknown aspect `{aspect}`")]
    UnknownAspect { id: String, aspect: String },
    #[error("record `{id}`: non-finite value in {field}")]
    NonFinite { id: String, field: &'static str },
    #[error("aspect {aspect} out of range (kappa = {kappa})")]
    AspectOutOfRange { aspect: usize, kappa: usize },
    #[error("aspect {0} has no pairs to train on")]
    EmptyAspect(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("reward model for aspect {aspect} cannot cross-score pair `{id}` from its own aspect")]
    SameAspect { aspect: usize, id: String },
    #[error("no reward model for aspect {0}")]
    MissingModel(usize),
    #[error("pair `{0}` is missing a log-probability field")]
    MissingLogProb(String),
    #[error("pair `{0}` has no ground truth")]
    MissingTruth(String),
    #[error("pair `{0}`: stored conflict flag disagrees with its scores")]
    ConflictMismatch(String),
    #[error("unknown pair id `{0}`")]
    UnknownId(String),
    #[error("instance has {found} values, enumeration limit is {max}")]
    TooLarge { found: usize, max: usize },
    #[error("conflict target {target} is infeasible: {reason}")]
    InfeasibleConflict { target: f64, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
