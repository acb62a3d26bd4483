//! Twist decoding and the baselines it is compared against.
//!
//! One Twist iteration maps f's candidates into g's text interface, runs g's
//! beam search penalized by distance to them, maps g's candidates back and
//! runs f's search penalized by distance to those. The output is the best
//! candidate of f's last pass.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::beam::{beam_search, BeamConfig, Candidate, CandidateSet, Guidance};
use crate::distance::DistanceFn;
use crate::error::{Error, Result};
use crate::scoring::{score_sequence, FusedScorer, Scorer, SourceRecord, SourceView};
use crate::text::{map_output, ModelTextSpec, TokenSequence};

/// Grid the guidance weights are tuned over.
pub const LAMBDA_GRID: [f64; 4] = [0.1, 0.3, 1.0, 3.0];

/// Score used to pick the output from the final candidate set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Length-normalized search score, distance penalty included.
    #[default]
    Normalized,
    /// Accumulated model score alone.
    RawModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Weight of the distance term while g searches (toward f's outputs).
    pub lambda_f: f64,
    /// Weight of the distance term while f searches (toward g's outputs).
    pub lambda_g: f64,
    pub iterations: usize,
    pub distance: DistanceFn,
    pub selection: Selection,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda_f: 0.3,
            lambda_g: 1.0,
            iterations: 1,
            distance: DistanceFn::HammingMin,
            selection: Selection::Normalized,
        }
    }
}

impl GuidanceConfig {
    pub fn with_lambdas(lambda_f: f64, lambda_g: f64) -> Self {
        Self { lambda_f, lambda_g, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_f", self.lambda_f), ("lambda_g", self.lambda_g)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// A scorer together with the part of the source record it reads.
#[derive(Clone, Copy)]
pub struct ModelHandle<'a> {
    pub scorer: &'a dyn Scorer,
    pub view: &'a SourceView,
}

impl<'a> ModelHandle<'a> {
    pub fn new(scorer: &'a dyn Scorer, view: &'a SourceView) -> Self {
        Self { scorer, view }
    }

    pub fn spec(&self) -> &ModelTextSpec {
        self.scorer.spec()
    }
}

pub struct DecodeSession<'a> {
    pub f: ModelHandle<'a>,
    pub g: ModelHandle<'a>,
    pub record: &'a SourceRecord,
    pub beam: &'a BeamConfig,
    pub guidance: &'a GuidanceConfig,
}

impl DecodeSession<'_> {
    /// The same session with f and g exchanged.
    pub fn swapped(&self) -> Self {
        Self { f: self.g, g: self.f, record: self.record, beam: self.beam, guidance: self.guidance }
    }

    fn sources(&self) -> Result<(String, String)> {
        Ok((self.f.view.project(self.record)?, self.g.view.project(self.record)?))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassLabel {
    FInit,
    GGuided,
    FGuided,
}

impl PassLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PassLabel::FInit => "f-init",
            PassLabel::GGuided => "g-guided",
            PassLabel::FGuided => "f-guided",
        }
    }
}

impl std::fmt::Display for PassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct PassTrace {
    pub iteration: usize,
    pub label: PassLabel,
    pub candidates: CandidateSet,
    pub step_evals: usize,
    pub wall: Duration,
}

/// All candidate sets of one Twist run: f's initial pass, then a g-guided and
/// an f-guided pass per iteration.
#[derive(Clone, Debug, Default)]
pub struct DecodeTrace {
    pub passes: Vec<PassTrace>,
}

pub const TRACE_HEADER: &str = "method\titeration\tpass\tnbest\tstep_evals\twall_us";

impl DecodeTrace {
    pub fn step_evals(&self) -> usize {
        self.passes.iter().map(|p| p.step_evals).sum()
    }

    pub fn wall(&self) -> Duration {
        self.passes.iter().map(|p| p.wall).sum()
    }

    /// Best f candidate after each iteration; index 0 is the initial pass.
    pub fn f_outputs(&self) -> impl Iterator<Item = (usize, &CandidateSet)> {
        self.passes.iter().filter(|p| p.label != PassLabel::GGuided).map(|p| (p.iteration, &p.candidates))
    }

    /// One record per pass (no header). `nbest_ref` names where the pass's
    /// n-best list was written.
    pub fn write_tsv<W: Write>(&self, method: &str, nbest_ref: impl Fn(&PassTrace) -> String, mut w: W) -> Result<()> {
        for p in &self.passes {
            writeln!(
                w,
                "{method}\t{}\t{}\t{}\t{}\t{}",
                p.iteration,
                p.label,
                nbest_ref(p),
                p.step_evals,
                p.wall.as_micros()
            )?;
        }
        Ok(())
    }

    fn record(
        &mut self,
        iteration: usize,
        label: PassLabel,
        start: Instant,
        candidates: CandidateSet,
    ) -> &CandidateSet {
        let step_evals = candidates.step_evals();
        self.passes.push(PassTrace { iteration, label, candidates, step_evals, wall: start.elapsed() });
        &self.passes.last().expect("just pushed").candidates
    }
}

#[derive(Debug, thiserror::Error)]
#[error("twist decoding failed after {} completed passes: {error}", trace.passes.len())]
pub struct TwistFailure {
    #[source]
    pub error: Error,
    pub trace: DecodeTrace,
}

#[derive(Clone, Debug)]
pub struct TwistOutput {
    /// Chosen candidate, in f's spec.
    pub candidate: Candidate,
    pub trace: DecodeTrace,
}

impl TwistOutput {
    pub fn output(&self) -> &TokenSequence {
        &self.candidate.sequence
    }

    /// The g-guided candidate set of the last iteration.
    pub fn last_g_pass(&self) -> &CandidateSet {
        &self
            .trace
            .passes
            .iter()
            .rev()
            .find(|p| p.label == PassLabel::GGuided)
            .expect("at least one iteration")
            .candidates
    }
}

/// Picks the output of a candidate set under `selection`.
pub fn select(set: &CandidateSet, selection: Selection) -> &Candidate {
    match selection {
        Selection::Normalized => set.best(),
        Selection::RawModel => set
            .candidates()
            .iter()
            .reduce(|best, c| {
                let better =
                    c.model_score.total_cmp(&best.model_score).then_with(|| best.sequence.ids().cmp(c.sequence.ids()));
                if better.is_gt() {
                    c
                } else {
                    best
                }
            })
            .expect("candidate sets are non-empty"),
    }
}

/// Maps every candidate into `to`, keeping rank order and dropping
/// duplicates and candidates whose mapping fails.
pub fn map_candidates(set: &CandidateSet, from: &ModelTextSpec, to: &ModelTextSpec) -> Result<Vec<TokenSequence>> {
    let mut out: Vec<TokenSequence> = Vec::with_capacity(set.len());
    for seq in set.sequences() {
        if let Ok(mapped) = map_output(seq, from, to) {
            if !out.contains(&mapped) {
                out.push(mapped);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoMappableCandidate(set.len()));
    }
    Ok(out)
}

fn guided_pass(
    model: ModelHandle<'_>,
    source: &str,
    beam: &BeamConfig,
    guide: &CandidateSet,
    guide_spec: &ModelTextSpec,
    lambda: f64,
    distance: DistanceFn,
) -> Result<CandidateSet> {
    let mapped = map_candidates(guide, guide_spec, model.spec())?;
    let guidance = Guidance::new(mapped, lambda, distance)?;
    beam_search(model.scorer, source, beam, Some(&guidance))
}

pub fn twist_decode(session: &DecodeSession<'_>) -> Result<TwistOutput, TwistFailure> {
    let mut trace = DecodeTrace::default();
    match run_twist(session, &mut trace) {
        Ok(candidate) => Ok(TwistOutput { candidate, trace }),
        Err(error) => Err(TwistFailure { error, trace }),
    }
}

fn run_twist(s: &DecodeSession<'_>, trace: &mut DecodeTrace) -> Result<Candidate> {
    s.beam.validate()?;
    s.guidance.validate()?;
    let (src_f, src_g) = s.sources()?;
    let gc = s.guidance;

    let start = Instant::now();
    let mut y = trace.record(0, PassLabel::FInit, start, beam_search(s.f.scorer, &src_f, s.beam, None)?).clone();
    for t in 1..=gc.iterations {
        let start = Instant::now();
        let z = guided_pass(s.g, &src_g, s.beam, &y, s.f.spec(), gc.lambda_f, gc.distance)?;
        let z = trace.record(t, PassLabel::GGuided, start, z).clone();

        let start = Instant::now();
        let next = guided_pass(s.f, &src_f, s.beam, &z, s.g.spec(), gc.lambda_g, gc.distance)?;
        y = trace.record(t, PassLabel::FGuided, start, next).clone();
    }
    Ok(select(&y, gc.selection).clone())
}

#[derive(Clone, Debug)]
pub struct RerankOutput {
    /// Chosen candidate of f's pass, in f's spec.
    pub candidate: Candidate,
    /// Index of the chosen candidate within `f_candidates`.
    pub index: usize,
    pub f_candidates: CandidateSet,
    /// g's length-normalized score per f candidate; `None` when the candidate
    /// could not be mapped into g's spec.
    pub g_scores: Vec<Option<f64>>,
    /// Step evaluations of f's beam pass.
    pub f_step_evals: usize,
    /// Step evaluations spent scoring f's candidates with g.
    pub g_step_evals: usize,
    /// Number of full sequences scored by g.
    pub g_sequences: usize,
    pub wall: Duration,
}

impl RerankOutput {
    pub fn output(&self) -> &TokenSequence {
        &self.candidate.sequence
    }

    pub fn step_evals(&self) -> usize {
        self.f_step_evals + self.g_step_evals
    }
}

/// Rescores f's candidates with g alone (length-normalized) and returns the
/// winner. Ties keep f's ranking.
pub fn rerank_decode(session: &DecodeSession<'_>) -> Result<RerankOutput> {
    session.beam.validate()?;
    let start = Instant::now();
    let (src_f, src_g) = session.sources()?;
    let f_candidates = beam_search(session.f.scorer, &src_f, session.beam, None)?;

    let mut g_scores = Vec::with_capacity(f_candidates.len());
    let mut g_step_evals = 0;
    let mut g_sequences = 0;
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in f_candidates.candidates().iter().enumerate() {
        let Ok(mapped) = map_output(&c.sequence, session.f.spec(), session.g.spec()) else {
            g_scores.push(None);
            continue;
        };
        let full = mapped.with_eos();
        let raw = score_sequence(session.g.scorer, &src_g, &full)?;
        g_step_evals += full.len();
        g_sequences += 1;
        let score = session.beam.normalize(raw, full.len());
        g_scores.push(Some(score));
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    let Some((index, _)) = best else {
        return Err(Error::NoMappableCandidate(f_candidates.len()));
    };
    Ok(RerankOutput {
        candidate: f_candidates.candidates()[index].clone(),
        index,
        f_step_evals: f_candidates.step_evals(),
        f_candidates,
        g_scores,
        g_step_evals,
        g_sequences,
        wall: start.elapsed(),
    })
}

/// Beam search on the step-wise sum of two scorers that share a spec.
pub fn shallow_fusion_decode(
    f: &dyn Scorer,
    g: &dyn Scorer,
    source: &str,
    config: &BeamConfig,
) -> Result<CandidateSet> {
    let fused = FusedScorer::new(f, g)?;
    beam_search(&fused, source, config, None)
}

/// Shallow fusion where each model reads its own source view.
pub fn shallow_fusion_session(session: &DecodeSession<'_>) -> Result<CandidateSet> {
    let (src_f, src_g) = session.sources()?;
    let fused = FusedScorer::new(session.f.scorer, session.g.scorer)?.with_sources(src_f, src_g);
    beam_search(&fused, "", session.beam, None)
}

/// Unguided beam search; the output is `best()` of the returned set.
pub fn isolation_decode(scorer: &dyn Scorer, source: &str, config: &BeamConfig) -> Result<CandidateSet> {
    beam_search(scorer, source, config, None)
}
