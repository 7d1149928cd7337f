use crate::tokenizer::TokenId;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by construction, evaluation, tokenization and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands have incompatible shapes for the requested operation.
    #[error("{op}: incompatible shapes {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A single value or tensor has the wrong shape for its contract.
    #[error("{0}")]
    Shape(String),

    /// An input is outside the mathematical domain of the operation.
    #[error("{0}")]
    Domain(String),

    /// Invalid hyperparameters or construction arguments.
    #[error("{0}")]
    Config(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Text contains a character the tokenizer does not know.
    #[error("unknown character {ch:?} at position {position}")]
    UnknownCharacter { ch: char, position: usize },

    /// Corpus ingestion failed (unreadable file, bad encoding, or a
    /// character outside the configured alphabet).
    #[error("corpus ingestion: {0}")]
    Ingest(String),

    /// A token id does not exist in the vocabulary.
    #[error("token id {id} out of range for vocabulary of size {n_vocab}")]
    TokenRange { id: TokenId, n_vocab: usize },

    /// A model or vocabulary file failed validation on load.
    #[error("load: {0}")]
    Load(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
