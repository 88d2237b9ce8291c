use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("split error: dataset `{dataset}` has {available} samples, {requested} requested")]
    Split {
        dataset: String,
        requested: usize,
        available: usize,
    },
    #[error("annotator error: {0}")]
    Annotator(String),
    #[error("empty dataset `{0}`")]
    EmptyDataset(String),
    #[error("training diverged in {stage} at epoch {epoch}: non-finite loss")]
    NonFinite { stage: String, epoch: usize },
    #[error("non-finite gradient at sample {index}")]
    NonFiniteGradient { index: usize },
    #[error("missing bound constituents: {}", .0.join(", "))]
    MissingTerms(Vec<String>),
}
