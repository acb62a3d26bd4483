//! Prefix distances between a partial hypothesis and candidate outputs of
//! the other model.
//!
//! Candidates are padded with EOS past their end, so a hypothesis that runs
//! longer than a candidate pays one mismatch per extra position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::Scorer;
use crate::text::{TokenId, TokenSequence, EOS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceFn {
    /// Hamming distance to the closest candidate.
    #[default]
    HammingMin,
    /// Hamming distance to the top-ranked candidate only.
    HammingOneBest,
    /// Summed L2 distance between token embeddings, closest candidate.
    EmbeddingMin,
}

impl DistanceFn {
    pub fn needs_embeddings(self) -> bool {
        self == DistanceFn::EmbeddingMin
    }
}

#[inline]
fn candidate_at(candidate: &[TokenId], i: usize) -> TokenId {
    candidate.get(i).copied().unwrap_or(EOS)
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Number of positions `i < prefix.len()` where the prefix differs from the
/// EOS-padded candidate.
pub fn hamming_prefix_distance(prefix: &TokenSequence, candidate: &TokenSequence) -> Result<usize> {
    if prefix.spec_id() != candidate.spec_id() {
        return Err(Error::SpecMismatch { expected: prefix.spec_id(), found: candidate.spec_id() });
    }
    let cand = candidate.content();
    Ok(prefix.ids().iter().enumerate().filter(|&(i, &z)| z != candidate_at(cand, i)).count())
}

/// Sum over prefix positions of the L2 distance between the embeddings of
/// the prefix token and the EOS-padded candidate token.
pub fn embedding_prefix_distance(
    prefix: &TokenSequence,
    candidate: &TokenSequence,
    scorer: &dyn Scorer,
) -> Result<f64> {
    if prefix.spec_id() != candidate.spec_id() {
        return Err(Error::SpecMismatch { expected: prefix.spec_id(), found: candidate.spec_id() });
    }
    let cand = candidate.content();
    let mut total = 0.0;
    for (i, &z) in prefix.ids().iter().enumerate() {
        let y = candidate_at(cand, i);
        total += l2(&scorer.embedding(z)?, &scorer.embedding(y)?);
    }
    Ok(total)
}

/// Distance from `prefix` to a ranked candidate list under `dist`.
pub fn min_distance(
    prefix: &TokenSequence,
    candidates: &[TokenSequence],
    dist: DistanceFn,
    scorer: &dyn Scorer,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Config("guidance needs at least one candidate".into()));
    }
    let pool = match dist {
        DistanceFn::HammingOneBest => &candidates[..1],
        _ => candidates,
    };
    let mut best = f64::INFINITY;
    for c in pool {
        let d = match dist {
            DistanceFn::HammingMin | DistanceFn::HammingOneBest => hamming_prefix_distance(prefix, c)? as f64,
            DistanceFn::EmbeddingMin => embedding_prefix_distance(prefix, c, scorer)?,
        };
        best = best.min(d);
    }
    Ok(best)
}

/// Incremental form used during search: keeps one running distance per
/// candidate so that extending a hypothesis by one token costs O(candidates).
pub(crate) struct DistanceTracker {
    candidates: Vec<Vec<TokenId>>,
    embeddings: Option<Vec<Vec<f64>>>,
}

impl DistanceTracker {
    pub(crate) fn new(candidates: &[TokenSequence], dist: DistanceFn, scorer: &dyn Scorer) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("guidance needs at least one candidate".into()));
        }
        let pool = match dist {
            DistanceFn::HammingOneBest => &candidates[..1],
            _ => candidates,
        };
        let embeddings = if dist.needs_embeddings() {
            if !scorer.has_embeddings() {
                return Err(Error::EmbeddingsUnavailable);
            }
            let n = scorer.spec().vocab().len() as TokenId;
            Some((0..n).map(|t| scorer.embedding(t)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        Ok(Self { candidates: pool.iter().map(|c| c.content().to_vec()).collect(), embeddings })
    }

    pub(crate) fn initial(&self) -> Vec<f64> {
        vec![0.0; self.candidates.len()]
    }

    /// Running distances after appending `token` at 0-based `position`.
    pub(crate) fn extend(&self, state: &[f64], position: usize, token: TokenId) -> Vec<f64> {
        self.candidates
            .iter()
            .zip(state)
            .map(|(cand, &d)| {
                let y = candidate_at(cand, position);
                let step = match &self.embeddings {
                    Some(e) => l2(&e[token as usize], &e[y as usize]),
                    None => f64::from(u8::from(token != y)),
                };
                d + step
            })
            .collect()
    }

    /// `min(extend(state, position, token))` without materializing the state.
    pub(crate) fn min_after(&self, state: &[f64], position: usize, token: TokenId) -> f64 {
        let mut best = f64::INFINITY;
        for (cand, &d) in self.candidates.iter().zip(state) {
            let y = candidate_at(cand, position);
            let step = match &self.embeddings {
                Some(e) => l2(&e[token as usize], &e[y as usize]),
                None => f64::from(u8::from(token != y)),
            };
            best = best.min(d + step);
        }
        best
    }

    #[cfg(test)]
    fn min(state: &[f64]) -> f64 {
        state.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
