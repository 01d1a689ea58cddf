use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("duplicate item id `{0}` in item bank")]
    DuplicateItem(String),

    #[error("record `{respondent_id}` references unknown item `{item_id}`")]
    UnknownItem { respondent_id: String, item_id: String },

    #[error("records mix populations `{first}` and `{other}`")]
    MixedPopulations { first: String, other: String },

    #[error("respondent `{0}` appears more than once")]
    DuplicateRespondent(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("item sets have an empty intersection")]
    EmptyIntersection,

    #[error("item `{0}` has no non-missing responses")]
    NoResponses(String),

    #[error("invalid label `{0}` (expected entailment, contradiction or neutral)")]
    InvalidLabel(String),

    #[error("matrix shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("vectors are not aligned: {0}")]
    Misaligned(String),

    #[error("undefined correlation between `{0}` and `{1}` (strict mode)")]
    UndefinedCorrelation(String, String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}
