use thiserror::Error;

use crate::text::SpecId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("bpe: {0}")]
    Bpe(String),

    #[error("dangling continuation marker at end of sequence")]
    DanglingMarker,

    #[error("invalid token sequence: {0}")]
    Sequence(String),

    #[error("sequence bound to spec {found} but {expected} was required")]
    SpecMismatch { expected: SpecId, found: SpecId },

    #[error("shallow fusion requires a shared vocabulary, tokenization and generation order")]
    FusionSpecMismatch,

    #[error("training: {0}")]
    Training(String),

    #[error("scorer does not provide token embeddings")]
    EmbeddingsUnavailable,

    #[error("source record has no field `{0}`")]
    MissingField(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no hypothesis survived the search")]
    EmptyBeam,

    #[error("enumeration of {0} sequences exceeds the exact-search limit")]
    EnumerationLimit(u128),

    #[error("none of the {0} candidates could be mapped into the target spec")]
    NoMappableCandidate(usize),

    #[error("model file: {0}")]
    Format(String),

    #[error("checksum mismatch in model file")]
    Checksum,

    #[error("unsupported model file version {0}")]
    Version(String),

    #[error("spec mismatch: remote vocabulary hash {found} does not match expected {expected}")]
    VocabMismatch { expected: String, found: String },

    #[error("remote scorer: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
