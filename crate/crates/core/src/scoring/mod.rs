//! Scorers: anything that assigns additive scores to the next token given a
//! source text and an output prefix.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{ModelTextSpec, TokenId, TokenSequence, BOS, EOS};

mod ngram;
mod table;

pub use ngram::{NGramConfig, NGramModel};
pub use table::TableScorer;

/// Next-token scores indexed by vocabulary id. Scores are additive in the log
/// domain but need not be normalized; `-inf` marks a forbidden token.
#[derive(Clone, Debug, PartialEq)]
pub struct StepScores(pub Vec<f64>);

impl StepScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.0.get(id as usize).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn validate(&self, vocab_len: usize) -> Result<()> {
        if self.0.len() != vocab_len {
            return Err(Error::Config(format!(
                "step scores have {} entries for a vocabulary of {vocab_len}",
                self.0.len()
            )));
        }
        if let Some(i) = self.0.iter().position(|s| s.is_nan() || *s == f64::INFINITY) {
            return Err(Error::Config(format!("step score {i} is not finite or -inf")));
        }
        Ok(())
    }
}

/// A generation model seen as a black-box scoring function.
///
/// `step_scores` receives the raw prefix in generation order (BOS implicit,
/// no EOS). It must be deterministic and must return one score per entry of
/// `spec().vocab()`. The returned BOS score is ignored; search never emits BOS.
pub trait Scorer: Send + Sync {
    fn spec(&self) -> &Arc<ModelTextSpec>;

    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> Result<StepScores>;

    /// Token embedding, if the model exposes them.
    fn embedding(&self, _token: TokenId) -> Result<Vec<f64>> {
        Err(Error::EmbeddingsUnavailable)
    }

    fn has_embeddings(&self) -> bool {
        false
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn spec(&self) -> &Arc<ModelTextSpec> {
        (**self).spec()
    }
    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> Result<StepScores> {
        (**self).step_scores(source, prefix)
    }
    fn embedding(&self, token: TokenId) -> Result<Vec<f64>> {
        (**self).embedding(token)
    }
    fn has_embeddings(&self) -> bool {
        (**self).has_embeddings()
    }
}

impl<S: Scorer + ?Sized> Scorer for Arc<S> {
    fn spec(&self) -> &Arc<ModelTextSpec> {
        (**self).spec()
    }
    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> Result<StepScores> {
        (**self).step_scores(source, prefix)
    }
    fn embedding(&self, token: TokenId) -> Result<Vec<f64>> {
        (**self).embedding(token)
    }
    fn has_embeddings(&self) -> bool {
        (**self).has_embeddings()
    }
}

/// Scores for the token after `prefix`, with BOS forced to `-inf`.
pub fn score_step(scorer: &dyn Scorer, source: &str, prefix: &TokenSequence) -> Result<StepScores> {
    scorer.spec().check(prefix)?;
    if prefix.is_finished() {
        return Err(Error::Sequence("prefix already ends with EOS".into()));
    }
    raw_step(scorer, source, prefix.ids())
}

pub(crate) fn raw_step(scorer: &dyn Scorer, source: &str, prefix: &[TokenId]) -> Result<StepScores> {
    let mut scores = scorer.step_scores(source, prefix)?;
    scores.validate(scorer.spec().vocab().len())?;
    scores.0[BOS as usize] = f64::NEG_INFINITY;
    Ok(scores)
}

/// Sum of step scores along `seq`, including the EOS step.
pub fn score_sequence(scorer: &dyn Scorer, source: &str, seq: &TokenSequence) -> Result<f64> {
    scorer.spec().check(seq)?;
    if !seq.is_finished() {
        return Err(Error::Sequence("sequence must end with EOS".into()));
    }
    let ids = seq.ids();
    let mut total = 0.0;
    for i in 0..ids.len() {
        total += raw_step(scorer, source, &ids[..i])?.get(ids[i]);
    }
    Ok(total)
}

/// Structured source input: named text fields.
pub type SourceRecord = BTreeMap<String, String>;

/// The part of a source record a particular model conditions on: the named
/// fields joined by single spaces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceView {
    pub fields: Vec<String>,
}

impl Default for SourceView {
    fn default() -> Self {
        Self { fields: vec!["source".to_string()] }
    }
}

impl SourceView {
    pub fn new<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { fields: fields.into_iter().map(Into::into).collect() }
    }

    pub fn project(&self, record: &SourceRecord) -> Result<String> {
        let mut parts = Vec::with_capacity(self.fields.len());
        for f in &self.fields {
            let text = record.get(f).ok_or_else(|| Error::MissingField(f.clone()))?;
            if !text.is_empty() {
                parts.push(text.as_str());
            }
        }
        Ok(parts.join(" "))
    }
}

pub fn record_from_line(line: &str) -> SourceRecord {
    BTreeMap::from([("source".to_string(), line.to_string())])
}

/// Element-wise sum of two scorers sharing one text spec (shallow fusion).
///
/// By default both scorers see the source passed to `step_scores`;
/// [`FusedScorer::with_sources`] pins a separate source text per scorer.
pub struct FusedScorer<'a> {
    first: &'a dyn Scorer,
    second: &'a dyn Scorer,
    sources: Option<(String, String)>,
}

impl<'a> FusedScorer<'a> {
    pub fn new(first: &'a dyn Scorer, second: &'a dyn Scorer) -> Result<Self> {
        if first.spec().id() != second.spec().id() {
            return Err(Error::FusionSpecMismatch);
        }
        Ok(Self { first, second, sources: None })
    }

    pub fn with_sources(mut self, first: impl Into<String>, second: impl Into<String>) -> Self {
        self.sources = Some((first.into(), second.into()));
        self
    }
}

impl Scorer for FusedScorer<'_> {
    fn spec(&self) -> &Arc<ModelTextSpec> {
        self.first.spec()
    }

    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> Result<StepScores> {
        let (sa, sb) = match &self.sources {
            Some((a, b)) => (a.as_str(), b.as_str()),
            None => (source, source),
        };
        let a = self.first.step_scores(sa, prefix)?;
        let b = self.second.step_scores(sb, prefix)?;
        Ok(StepScores(a.0.iter().zip(&b.0).map(|(x, y)| x + y).collect()))
    }
}

/// True when `prefix` may be extended: no EOS, all ids inside the vocabulary.
pub(crate) fn check_prefix(spec: &ModelTextSpec, prefix: &[TokenId]) -> Result<()> {
    let n = spec.vocab().len() as TokenId;
    if let Some(&bad) = prefix.iter().find(|&&t| t == BOS || t == EOS || t >= n) {
        return Err(Error::Sequence(format!("token {bad} cannot appear in a prefix")));
    }
    Ok(())
}
