//! Running one decoding method on one source record.

use std::time::{Duration, Instant};

use twist_core::twist::shallow_fusion_session;
use twist_core::{
    isolation_decode, rerank_decode, twist_decode, BeamConfig, CandidateSet, DecodeSession, GuidanceConfig,
    ModelHandle, ModelTextSpec, PassLabel, SourceRecord,
};

use crate::config::Method;
use crate::models::LoadedModel;

/// An n-best list to write, named relative to the method's n-best directory.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestFile {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassRecord {
    pub iteration: usize,
    pub label: PassLabel,
    pub nbest: String,
    pub step_evals: usize,
    pub wall: Duration,
}

/// Everything a method produced for one line.
#[derive(Clone, Debug, PartialEq)]
pub struct LineResult {
    pub hypothesis: String,
    pub step_evals: usize,
    /// Full sequences scored after the fact (rerank only).
    pub sequences_scored: usize,
    pub wall: Duration,
    pub nbest: Vec<NBestFile>,
    /// Surface output of f after each iteration, index 0 being the initial
    /// pass (twist only).
    pub iterations: Vec<String>,
    pub passes: Vec<PassRecord>,
}

/// A per-line failure; partial passes of a failed twist run are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct LineFailure {
    pub message: String,
    pub passes: Vec<PassRecord>,
    pub nbest: Vec<NBestFile>,
}

fn nbest_text(set: &CandidateSet, spec: &ModelTextSpec) -> twist_core::Result<String> {
    set.to_nbest(spec)
}

fn simple(set: &CandidateSet, spec: &ModelTextSpec, line: usize, wall: Duration) -> Result<LineResult, LineFailure> {
    let fail = |e: twist_core::Error| LineFailure { message: e.to_string(), passes: vec![], nbest: vec![] };
    Ok(LineResult {
        hypothesis: spec.surface(&set.best().sequence).map_err(fail)?,
        step_evals: set.step_evals(),
        sequences_scored: 0,
        wall,
        nbest: vec![NBestFile { name: format!("{line}.nbest"), contents: nbest_text(set, spec).map_err(fail)? }],
        iterations: vec![],
        passes: vec![],
    })
}

fn pass_records(
    trace: &twist_core::DecodeTrace,
    f: &ModelTextSpec,
    g: &ModelTextSpec,
    line: usize,
) -> (Vec<PassRecord>, Vec<NBestFile>) {
    let mut passes = Vec::new();
    let mut files = Vec::new();
    for p in &trace.passes {
        let spec = if p.label == PassLabel::GGuided { g } else { f };
        let name = format!("{line}.{}.{}.nbest", p.iteration, p.label);
        if let Ok(contents) = nbest_text(&p.candidates, spec) {
            files.push(NBestFile { name: name.clone(), contents });
        }
        passes.push(PassRecord {
            iteration: p.iteration,
            label: p.label,
            nbest: name,
            step_evals: p.step_evals,
            wall: p.wall,
        });
    }
    (passes, files)
}

/// Decodes `record` with `method`. `line` only names the n-best files.
pub fn run_method(
    method: Method,
    f: &LoadedModel,
    g: &LoadedModel,
    record: &SourceRecord,
    beam: &BeamConfig,
    guidance: &GuidanceConfig,
    line: usize,
) -> Result<LineResult, LineFailure> {
    let fail = |e: twist_core::Error| LineFailure { message: e.to_string(), passes: vec![], nbest: vec![] };
    let session = DecodeSession {
        f: ModelHandle::new(&*f.scorer, &f.view),
        g: ModelHandle::new(&*g.scorer, &g.view),
        record,
        beam,
        guidance,
    };
    let start = Instant::now();
    match method {
        Method::IsolationF | Method::IsolationG => {
            let m = if method == Method::IsolationF { f } else { g };
            let source = m.view.project(record).map_err(fail)?;
            let set = isolation_decode(&*m.scorer, &source, beam).map_err(fail)?;
            simple(&set, m.spec(), line, start.elapsed())
        }
        Method::Fusion => {
            let set = shallow_fusion_session(&session).map_err(fail)?;
            simple(&set, f.spec(), line, start.elapsed())
        }
        Method::RerankFg | Method::RerankGf => {
            let s = if method == Method::RerankFg { session } else { session.swapped() };
            let out = rerank_decode(&s).map_err(fail)?;
            let spec = s.f.spec();
            Ok(LineResult {
                hypothesis: spec.surface(out.output()).map_err(fail)?,
                step_evals: out.step_evals(),
                sequences_scored: out.g_sequences,
                wall: start.elapsed(),
                nbest: vec![NBestFile {
                    name: format!("{line}.nbest"),
                    contents: nbest_text(&out.f_candidates, spec).map_err(fail)?,
                }],
                iterations: vec![],
                passes: vec![],
            })
        }
        Method::TwistFg | Method::TwistGf => {
            let s = if method == Method::TwistFg { session } else { session.swapped() };
            let (fs, gs) = (s.f.spec(), s.g.spec());
            match twist_decode(&s) {
                Ok(out) => {
                    let (passes, mut files) = pass_records(&out.trace, fs, gs, line);
                    let last = &out.trace.passes.last().expect("twist runs at least two passes").candidates;
                    files.insert(
                        0,
                        NBestFile { name: format!("{line}.nbest"), contents: nbest_text(last, fs).map_err(fail)? },
                    );
                    let iterations = out
                        .trace
                        .f_outputs()
                        .map(|(_, set)| fs.surface(&twist_core::twist::select(set, guidance.selection).sequence))
                        .collect::<twist_core::Result<Vec<_>>>()
                        .map_err(fail)?;
                    Ok(LineResult {
                        hypothesis: fs.surface(out.output()).map_err(fail)?,
                        step_evals: out.trace.step_evals(),
                        sequences_scored: 0,
                        wall: start.elapsed(),
                        nbest: files,
                        iterations,
                        passes,
                    })
                }
                Err(failure) => {
                    let (passes, nbest) = pass_records(&failure.trace, fs, gs, line);
                    Err(LineFailure { message: failure.to_string(), passes, nbest })
                }
            }
        }
    }
}
