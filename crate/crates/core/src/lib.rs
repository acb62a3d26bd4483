//! Twist decoding: beam search over two sequence models that need not share a
//! vocabulary, tokenization or generation order, each guided toward the
//! other's candidate outputs by a prefix distance penalty.
//!
//! ```
//! use twist_core::{
//!     beam_search, BeamConfig, GenerationOrder, ModelTextSpec, NGramConfig, NGramModel,
//!     TokenizationScheme, Vocabulary,
//! };
//!
//! let corpus = ["the cat sat", "the dog sat"];
//! let scheme = TokenizationScheme::whitespace();
//! let vocab = Vocabulary::build(&corpus, &scheme, None).unwrap();
//! let spec = ModelTextSpec::new(vocab, scheme, GenerationOrder::LeftToRight);
//! let model = NGramModel::train(&corpus, spec.clone(), NGramConfig::default()).unwrap();
//! let out = beam_search(&model, "", &BeamConfig::default(), None).unwrap();
//! assert!(out.best().sequence.is_finished());
//! ```

pub mod batch;
pub mod beam;
pub mod distance;
pub mod error;
pub mod metrics;
pub mod persist;
pub mod remote;
pub mod scoring;
pub mod text;
pub mod twist;

pub use batch::{decode_batch, map_indexed, Execution};
pub use beam::{beam_search, exact_topk, BeamConfig, Candidate, CandidateSet, Guidance, Stopping};
pub use distance::{hamming_prefix_distance, min_distance, DistanceFn};
pub use error::{Error, Result};
pub use metrics::{corpus_bleu, rouge_l, EvalPair, Metric, RougeScore};
pub use remote::{RemoteOptions, RemoteScorer};
pub use scoring::{
    score_sequence, score_step, FusedScorer, NGramConfig, NGramModel, Scorer, SourceRecord, SourceView, StepScores,
    TableScorer,
};
pub use text::{
    detokenize, learn_bpe, map_output, tokenize, Bpe, GenerationOrder, ModelTextSpec, SpecId, TokenId, TokenSequence,
    TokenizationScheme, Vocabulary, BOS, EOS, UNK,
};
pub use twist::{
    isolation_decode, rerank_decode, shallow_fusion_decode, twist_decode, DecodeSession, DecodeTrace, GuidanceConfig,
    ModelHandle, PassLabel, RerankOutput, Selection, TwistFailure, TwistOutput,
};
