//! Beam search with an optional distance penalty, plus exhaustive
//! enumeration used as an oracle on small instances.
//!
//! At every step each live hypothesis is expanded by every token. An
//! expansion is ranked by its search score, the accumulated model score minus
//! `lambda * min_distance(prefix, candidates)` when guided. Expansions are
//! taken in descending order: those ending in EOS join the finished set,
//! the rest fill the next beam until it holds `beam_size` hypotheses.
//! Hypotheses still alive at `max_len` are closed with EOS. Finished
//! hypotheses are ranked by `search_score / len^alpha`, `len` counting EOS.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::distance::{min_distance, DistanceFn, DistanceTracker};
use crate::error::{Error, Result};
use crate::scoring::{raw_step, Scorer};
use crate::text::{ModelTextSpec, SpecId, TokenId, TokenSequence, BOS, EOS};

/// Refuse exact enumeration beyond this many sequences.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// When the search stops collecting finished hypotheses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stopping {
    /// Expand until `max_len` (or until the beam empties) and keep every
    /// finished hypothesis for the final ranking.
    #[default]
    MaxLength,
    /// Stop as soon as `beam_size` hypotheses have finished.
    FirstCome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    pub stopping: Stopping,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_size: 5, max_len: 64, length_penalty: 1.0, stopping: Stopping::MaxLength }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max length must be at least 1".into()));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::Config("length penalty must be a non-negative number".into()));
        }
        Ok(())
    }

    pub fn normalize(&self, search_score: f64, len: usize) -> f64 {
        search_score / (len as f64).powf(self.length_penalty)
    }
}

/// Candidate outputs of the other model, already mapped into the searching
/// model's spec, and the weight of the distance term.
#[derive(Clone, Debug)]
pub struct Guidance {
    candidates: Vec<TokenSequence>,
    lambda: f64,
    distance: DistanceFn,
}

impl Guidance {
    pub fn new(candidates: Vec<TokenSequence>, lambda: f64, distance: DistanceFn) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config("guidance needs at least one candidate".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
        }
        let spec = candidates[0].spec_id();
        if let Some(c) = candidates.iter().find(|c| c.spec_id() != spec) {
            return Err(Error::SpecMismatch { expected: spec, found: c.spec_id() });
        }
        Ok(Self { candidates, lambda, distance })
    }

    pub fn candidates(&self) -> &[TokenSequence] {
        &self.candidates
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn distance(&self) -> DistanceFn {
        self.distance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub sequence: TokenSequence,
    /// Sum of step scores, EOS step included.
    pub model_score: f64,
    /// `lambda * min_distance` of the full sequence; 0 when unguided.
    pub penalty: f64,
    pub normalized: f64,
}

impl Candidate {
    fn new(sequence: TokenSequence, model_score: f64, penalty: f64, config: &BeamConfig) -> Self {
        let normalized = config.normalize(model_score - penalty, sequence.len());
        Self { sequence, model_score, penalty, normalized }
    }

    pub fn search_score(&self) -> f64 {
        self.model_score - self.penalty
    }
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.normalized.total_cmp(&a.normalized).then_with(|| a.sequence.ids().cmp(b.sequence.ids()))
}

/// Finished sequences of one search pass, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    spec: SpecId,
    candidates: Vec<Candidate>,
    step_evals: usize,
}

impl CandidateSet {
    fn from_finished(spec: SpecId, mut candidates: Vec<Candidate>, k: usize, step_evals: usize) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::EmptyBeam);
        }
        candidates.sort_by(rank);
        candidates.truncate(k);
        Ok(Self { spec, candidates, step_evals })
    }

    pub fn spec_id(&self) -> SpecId {
        self.spec
    }

    pub fn best(&self) -> &Candidate {
        &self.candidates[0]
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn sequences(&self) -> impl Iterator<Item = &TokenSequence> {
        self.candidates.iter().map(|c| &c.sequence)
    }

    /// Scorer step evaluations spent producing this set.
    pub fn step_evals(&self) -> usize {
        self.step_evals
    }

    /// One line per candidate:
    /// `index<TAB>normalized<TAB>model<TAB>penalty<TAB>tokens`, tokens in
    /// generation order without the final EOS.
    pub fn write_nbest<W: Write>(&self, spec: &ModelTextSpec, mut w: W) -> Result<()> {
        for (i, c) in self.candidates.iter().enumerate() {
            let toks = spec.token_strings(&c.sequence)?;
            writeln!(w, "{i}\t{}\t{}\t{}\t{}", c.normalized, c.model_score, c.penalty, toks.join(" "))?;
        }
        Ok(())
    }

    pub fn to_nbest(&self, spec: &ModelTextSpec) -> Result<String> {
        let mut buf = Vec::new();
        self.write_nbest(spec, &mut buf)?;
        Ok(String::from_utf8(buf).expect("token strings are utf-8"))
    }
}

struct Hyp {
    tokens: Vec<TokenId>,
    model: f64,
    penalty: f64,
    dist: Vec<f64>,
}

struct Expansion {
    parent: usize,
    token: TokenId,
    model: f64,
    penalty: f64,
}

impl Expansion {
    fn search(&self) -> f64 {
        self.model - self.penalty
    }
}

fn guidance_tracker(scorer: &dyn Scorer, guidance: Option<&Guidance>) -> Result<Option<(DistanceTracker, f64)>> {
    let Some(g) = guidance else { return Ok(None) };
    scorer.spec().check(&g.candidates[0])?;
    Ok(Some((DistanceTracker::new(&g.candidates, g.distance, scorer)?, g.lambda)))
}

pub fn beam_search(
    scorer: &dyn Scorer,
    source: &str,
    config: &BeamConfig,
    guidance: Option<&Guidance>,
) -> Result<CandidateSet> {
    config.validate()?;
    let spec = scorer.spec();
    let vocab_len = spec.vocab().len() as TokenId;
    let k = config.beam_size;
    let tracker = guidance_tracker(scorer, guidance)?;

    let initial = tracker.as_ref().map_or_else(Vec::new, |(t, _)| t.initial());
    let mut beam = vec![Hyp { tokens: Vec::new(), model: 0.0, penalty: 0.0, dist: initial }];
    let mut finished: Vec<Hyp> = Vec::new();
    let mut evals = 0usize;
    let mut stopped_early = false;

    for step in 0..config.max_len {
        let mut expansions = Vec::with_capacity(beam.len() * vocab_len as usize);
        for (parent, h) in beam.iter().enumerate() {
            let scores = raw_step(scorer, source, &h.tokens)?;
            evals += 1;
            for token in (BOS + 1)..vocab_len {
                let s = scores.get(token);
                if s == f64::NEG_INFINITY {
                    continue;
                }
                let penalty = match &tracker {
                    Some((t, lambda)) => lambda * t.min_after(&h.dist, step, token),
                    None => 0.0,
                };
                expansions.push(Expansion { parent, token, model: h.model + s, penalty });
            }
        }
        expansions.sort_by(|a, b| {
            b.search()
                .total_cmp(&a.search())
                .then_with(|| beam[a.parent].tokens.cmp(&beam[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        });

        let mut next: Vec<Hyp> = Vec::with_capacity(k);
        for e in expansions {
            let parent = &beam[e.parent];
            let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
            tokens.extend_from_slice(&parent.tokens);
            tokens.push(e.token);
            let dist = match &tracker {
                Some((t, _)) => t.extend(&parent.dist, step, e.token),
                None => Vec::new(),
            };
            let hyp = Hyp { tokens, model: e.model, penalty: e.penalty, dist };
            if e.token == EOS {
                finished.push(hyp);
                if config.stopping == Stopping::FirstCome && finished.len() >= k {
                    stopped_early = true;
                    break;
                }
            } else {
                next.push(hyp);
                if next.len() == k {
                    break;
                }
            }
        }
        beam = next;
        if stopped_early || beam.is_empty() {
            break;
        }
    }

    if !stopped_early {
        for h in beam {
            let scores = raw_step(scorer, source, &h.tokens)?;
            evals += 1;
            let s = scores.get(EOS);
            if s == f64::NEG_INFINITY {
                continue;
            }
            let penalty = match &tracker {
                Some((t, lambda)) => lambda * t.min_after(&h.dist, h.tokens.len(), EOS),
                None => 0.0,
            };
            let mut tokens = h.tokens;
            tokens.push(EOS);
            finished.push(Hyp { tokens, model: h.model + s, penalty, dist: Vec::new() });
        }
    }

    let candidates = finished
        .into_iter()
        .map(|h| Candidate::new(TokenSequence::from_raw(h.tokens, spec.id()), h.model, h.penalty, config))
        .collect();
    CandidateSet::from_finished(spec.id(), candidates, k, evals)
}

/// Number of sequences `exact_topk` would enumerate: every sequence of at
/// most `max_len` non-EOS tokens, closed by EOS.
pub fn enumeration_size(vocab_len: usize, max_len: usize) -> u128 {
    let branching = vocab_len.saturating_sub(2) as u128;
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=max_len {
        total = total.saturating_add(level);
        level = level.saturating_mul(branching);
    }
    total
}

/// Exhaustive top-k under the same scoring and ranking as [`beam_search`].
/// The distance penalty is recomputed from scratch for every complete
/// sequence, independently of the incremental bookkeeping used in search.
pub fn exact_topk(
    scorer: &dyn Scorer,
    source: &str,
    config: &BeamConfig,
    guidance: Option<&Guidance>,
) -> Result<CandidateSet> {
    config.validate()?;
    let spec = scorer.spec();
    let total = enumeration_size(spec.vocab().len(), config.max_len);
    if total > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit(total));
    }
    if let Some(g) = guidance {
        spec.check(&g.candidates[0])?;
    }

    struct Walk<'a> {
        scorer: &'a dyn Scorer,
        source: &'a str,
        config: &'a BeamConfig,
        guidance: Option<&'a Guidance>,
        spec: SpecId,
        out: Vec<Candidate>,
        evals: usize,
    }

    impl Walk<'_> {
        fn visit(&mut self, prefix: &mut Vec<TokenId>, model: f64) -> Result<()> {
            let scores = raw_step(self.scorer, self.source, prefix)?;
            self.evals += 1;
            let vocab_len = scores.len() as TokenId;
            let tokens: Vec<TokenId> =
                if prefix.len() == self.config.max_len { vec![EOS] } else { ((BOS + 1)..vocab_len).collect() };
            for token in tokens {
                let s = scores.get(token);
                if s == f64::NEG_INFINITY {
                    continue;
                }
                prefix.push(token);
                if token == EOS {
                    let seq = TokenSequence::from_raw(prefix.clone(), self.spec);
                    let penalty = match self.guidance {
                        Some(g) => g.lambda * min_distance(&seq, &g.candidates, g.distance, self.scorer)?,
                        None => 0.0,
                    };
                    self.out.push(Candidate::new(seq, model + s, penalty, self.config));
                } else {
                    self.visit(prefix, model + s)?;
                }
                prefix.pop();
            }
            Ok(())
        }
    }

    let mut walk = Walk { scorer, source, config, guidance, spec: spec.id(), out: Vec::new(), evals: 0 };
    walk.visit(&mut Vec::new(), 0.0)?;
    CandidateSet::from_finished(spec.id(), walk.out, config.beam_size, walk.evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::TableScorer;
    use crate::text::{GenerationOrder, TokenizationScheme, Vocabulary, UNK};
    use std::sync::Arc;

    const NINF: f64 = f64::NEG_INFINITY;
    const A: TokenId = 3;
    const B: TokenId = 4;

    fn spec() -> Arc<ModelTextSpec> {
        ModelTextSpec::new(
            Vocabulary::new(["a", "b"]).unwrap(),
            TokenizationScheme::whitespace(),
            GenerationOrder::LeftToRight,
        )
    }

    /// |V| = 3 generatable tokens (EOS, a, b); UNK forbidden.
    fn table(spec: &Arc<ModelTextSpec>) -> TableScorer {
        let row = |eos: f64, a: f64, b: f64| vec![NINF, eos, NINF, a, b];
        TableScorer::new(spec.clone(), row(-1.0, -1.0, -1.0))
            .unwrap()
            .with_entry("s", &[], row(-2.0, -0.5, -1.5))
            .unwrap()
            .with_entry("s", &[A], row(-1.0, -2.0, -0.25))
            .unwrap()
            .with_entry("s", &[B], row(-0.75, -3.0, -3.0))
            .unwrap()
            .with_entry("s", &[A, B], row(-0.5, -4.0, -4.0))
            .unwrap()
            .with_entry("s", &[A, A], row(-0.5, -1.0, -1.0))
            .unwrap()
    }

    #[test]
    fn saturated_beam_matches_enumeration() {
        let spec = spec();
        let t = table(&spec);
        for alpha in [0.0, 0.6, 1.0] {
            let config = BeamConfig { beam_size: 9, max_len: 2, length_penalty: alpha, ..Default::default() };
            let beam = beam_search(&t, "s", &config, None).unwrap();
            let exact = exact_topk(&t, "s", &config, None).unwrap();
            assert_eq!(beam.candidates(), exact.candidates());
            assert_eq!(exact.len(), 7);
        }
    }

    #[test]
    fn hand_checked_best_sequence() {
        // a b </s> = -0.5 - 0.25 - 0.5 = -1.25 over 3 tokens; a </s> = -1.5 over 2
        let spec = spec();
        let t = table(&spec);
        let config = BeamConfig { beam_size: 2, max_len: 2, length_penalty: 1.0, ..Default::default() };
        let out = beam_search(&t, "s", &config, None).unwrap();
        assert_eq!(out.best().sequence.ids(), &[A, B, EOS]);
        assert_eq!(out.best().model_score, -1.25);
        assert_eq!(out.best().normalized, -1.25 / 3.0);
        assert!(out.sequences().all(|s| s.is_finished() && !s.ids().contains(&BOS)));
    }

    #[test]
    fn max_len_one_forces_eos() {
        let spec = spec();
        let t = table(&spec);
        let config = BeamConfig { beam_size: 1, max_len: 1, length_penalty: 1.0, ..Default::default() };
        let out = beam_search(&t, "s", &config, None).unwrap();
        // first step argmax is a (-0.5); forced EOS after a costs -1.0
        assert_eq!(out.candidates().len(), 1);
        assert_eq!(out.best().sequence.ids(), &[A, EOS]);
        assert_eq!(out.best().model_score, -1.5);
    }

    #[test]
    fn zero_lambda_guidance_is_a_no_op() {
        let spec = spec();
        let t = table(&spec);
        let config = BeamConfig { beam_size: 2, max_len: 3, ..Default::default() };
        let cand = TokenSequence::new(vec![B, B], &spec).unwrap();
        let g = Guidance::new(vec![cand], 0.0, DistanceFn::HammingMin).unwrap();
        assert_eq!(beam_search(&t, "s", &config, Some(&g)).unwrap(), beam_search(&t, "s", &config, None).unwrap());
    }

    #[test]
    fn huge_lambda_reproduces_single_candidate() {
        let spec = spec();
        let t = table(&spec);
        let config = BeamConfig { beam_size: 50, max_len: 3, ..Default::default() };
        let cand = TokenSequence::new(vec![B, A, A], &spec).unwrap();
        let g = Guidance::new(vec![cand], 1e6, DistanceFn::HammingMin).unwrap();
        let exact = exact_topk(&t, "s", &config, Some(&g)).unwrap();
        assert_eq!(exact.best().sequence.ids(), &[B, A, A, EOS]);
        assert_eq!(exact.best().penalty, 0.0);
        let beam = beam_search(&t, "s", &BeamConfig { beam_size: 2, ..config }, Some(&g)).unwrap();
        assert_eq!(beam.best().sequence.ids(), &[B, A, A, EOS]);
    }

    #[test]
    fn singleton_vocabulary_enumerates_one_sequence_per_length() {
        let spec = ModelTextSpec::new(
            Vocabulary::new(["t"]).unwrap(),
            TokenizationScheme::whitespace(),
            GenerationOrder::LeftToRight,
        );
        let t = TableScorer::new(spec.clone(), vec![NINF, -1.0, NINF, -0.1]).unwrap();
        let config = BeamConfig { beam_size: 10, max_len: 4, length_penalty: 1.0, ..Default::default() };
        let exact = exact_topk(&t, "", &config, None).unwrap();
        assert_eq!(exact.len(), 5);
        // -(0.1 n + 1) / (n + 1) is maximized by the longest sequence
        assert_eq!(exact.best().sequence.ids(), &[3, 3, 3, 3, EOS]);
    }

    #[test]
    fn first_come_stops_once_k_finished() {
        let spec = spec();
        let t = table(&spec);
        let fc = BeamConfig { beam_size: 1, max_len: 5, length_penalty: 0.0, stopping: Stopping::FirstCome };
        let ml = BeamConfig { stopping: Stopping::MaxLength, ..fc.clone() };
        let a = beam_search(&t, "s", &fc, None).unwrap();
        let b = beam_search(&t, "s", &ml, None).unwrap();
        assert_eq!(a.len(), 1);
        assert!(a.step_evals() <= b.step_evals());
    }

    #[test]
    fn all_forbidden_is_an_empty_beam() {
        let spec = spec();
        let t = TableScorer::new(spec, vec![NINF; 5]).unwrap();
        let err = beam_search(&t, "", &BeamConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::EmptyBeam));
    }

    #[test]
    fn enumeration_guard() {
        let spec = ModelTextSpec::new(
            Vocabulary::new((0..20).map(|i| format!("w{i}"))).unwrap(),
            TokenizationScheme::whitespace(),
            GenerationOrder::LeftToRight,
        );
        let t = TableScorer::new(spec, vec![-1.0; 23]).unwrap();
        let config = BeamConfig { beam_size: 1, max_len: 6, ..Default::default() };
        assert!(matches!(exact_topk(&t, "", &config, None), Err(Error::EnumerationLimit(_))));
        assert_eq!(enumeration_size(5, 2), 1 + 3 + 9);
    }

    #[test]
    fn guidance_validation() {
        let spec = spec();
        let c = TokenSequence::new(vec![A], &spec).unwrap();
        assert!(Guidance::new(vec![], 1.0, DistanceFn::HammingMin).is_err());
        assert!(Guidance::new(vec![c.clone()], -1.0, DistanceFn::HammingMin).is_err());
        assert!(Guidance::new(vec![c.clone()], f64::NAN, DistanceFn::HammingMin).is_err());
        let other = ModelTextSpec::new(
            Vocabulary::new(["b", "a"]).unwrap(),
            TokenizationScheme::whitespace(),
            GenerationOrder::LeftToRight,
        );
        let g =
            Guidance::new(vec![TokenSequence::new(vec![UNK], &other).unwrap()], 1.0, DistanceFn::HammingMin).unwrap();
        let t = table(&spec);
        assert!(matches!(beam_search(&t, "s", &BeamConfig::default(), Some(&g)), Err(Error::SpecMismatch { .. })));
        assert!(BeamConfig { beam_size: 0, ..Default::default() }.validate().is_err());
        assert!(BeamConfig { length_penalty: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn nbest_format() {
        let spec = spec();
        let t = table(&spec);
        let config = BeamConfig { beam_size: 2, max_len: 2, ..Default::default() };
        let text = beam_search(&t, "s", &config, None).unwrap().to_nbest(&spec).unwrap();
        let first = text.lines().next().unwrap();
        let cols: Vec<&str> = first.split('\t').collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[0], "0");
        assert_eq!(cols[2], "-1.25");
        assert_eq!(cols[3], "0");
        assert_eq!(cols[4], "a b");
    }
}
