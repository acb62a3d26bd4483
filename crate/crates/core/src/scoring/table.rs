use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Scorer, StepScores};
use crate::error::{Error, Result};
use crate::persist::SpecDescriptor;
use crate::text::{ModelTextSpec, TokenId};

const FORMAT: &str = "twist-table";

/// Explicit lookup table from (source, prefix) to step scores.
///
/// Lookup tries the exact prefix first, then a row keyed by the source and
/// the prefix length, then the default vector. Optional per-token embeddings.
#[derive(Clone, Debug)]
pub struct TableScorer {
    spec: Arc<ModelTextSpec>,
    default: Vec<f64>,
    entries: BTreeMap<String, BTreeMap<Vec<TokenId>, Vec<f64>>>,
    positional: BTreeMap<String, BTreeMap<usize, Vec<f64>>>,
    embeddings: Option<Vec<Vec<f64>>>,
}

/// Table rows are log-probability-like: finite or -inf, never above zero.
fn check_row(scores: &[f64], vocab_len: usize) -> Result<()> {
    StepScores(scores.to_vec()).validate(vocab_len)?;
    match scores.iter().position(|&s| s > 0.0) {
        Some(i) => Err(Error::Config(format!("table score {i} is positive"))),
        None => Ok(()),
    }
}

impl TableScorer {
    pub fn new(spec: Arc<ModelTextSpec>, default: Vec<f64>) -> Result<Self> {
        check_row(&default, spec.vocab().len())?;
        Ok(Self { spec, default, entries: BTreeMap::new(), positional: BTreeMap::new(), embeddings: None })
    }

    pub fn insert(&mut self, source: &str, prefix: &[TokenId], scores: Vec<f64>) -> Result<()> {
        check_row(&scores, self.spec.vocab().len())?;
        super::check_prefix(&self.spec, prefix)?;
        self.entries.entry(source.to_string()).or_default().insert(prefix.to_vec(), scores);
        Ok(())
    }

    /// Scores for every prefix of length `position` under `source` that has
    /// no exact entry.
    pub fn insert_positional(&mut self, source: &str, position: usize, scores: Vec<f64>) -> Result<()> {
        check_row(&scores, self.spec.vocab().len())?;
        self.positional.entry(source.to_string()).or_default().insert(position, scores);
        Ok(())
    }

    pub fn with_entry(mut self, source: &str, prefix: &[TokenId], scores: Vec<f64>) -> Result<Self> {
        self.insert(source, prefix, scores)?;
        Ok(self)
    }

    /// Attaches one embedding row per vocabulary entry, all of equal width.
    pub fn with_embeddings(mut self, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != self.spec.vocab().len() {
            return Err(Error::Config(format!(
                "{} embedding rows for a vocabulary of {}",
                rows.len(),
                self.spec.vocab().len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim || r.iter().any(|x| !x.is_finite())) {
            return Err(Error::Config("embedding rows must be non-empty, finite and equal width".into()));
        }
        self.embeddings = Some(rows);
        Ok(self)
    }

    pub fn num_entries(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum::<usize>()
            + self.positional.values().map(BTreeMap::len).sum::<usize>()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let file = TableFile {
            format: FORMAT.to_string(),
            version: 1,
            spec: SpecDescriptor::from_spec(&self.spec),
            default: to_wire(&self.default),
            entries: self
                .entries
                .iter()
                .flat_map(|(src, m)| {
                    m.iter().map(move |(prefix, s)| EntryFile {
                        source: src.clone(),
                        prefix: prefix.clone(),
                        scores: to_wire(s),
                    })
                })
                .collect(),
            positional: self
                .positional
                .iter()
                .flat_map(|(src, m)| {
                    m.iter().map(move |(&position, s)| PositionalFile {
                        source: src.clone(),
                        position,
                        scores: to_wire(s),
                    })
                })
                .collect(),
            embeddings: self.embeddings.clone(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let file: TableFile = serde_json::from_reader(r)?;
        if file.format != FORMAT {
            return Err(Error::Format(format!("not a table file: {}", file.format)));
        }
        if file.version != 1 {
            return Err(Error::Version(file.version.to_string()));
        }
        let spec = file.spec.into_spec()?;
        let mut t = Self::new(spec, from_wire(&file.default))?;
        for e in file.entries {
            t.insert(&e.source, &e.prefix, from_wire(&e.scores))?;
        }
        for e in file.positional {
            t.insert_positional(&e.source, e.position, from_wire(&e.scores))?;
        }
        match file.embeddings {
            Some(rows) => t.with_embeddings(rows),
            None => Ok(t),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    format: String,
    version: u32,
    spec: SpecDescriptor,
    default: Vec<Option<f64>>,
    entries: Vec<EntryFile>,
    #[serde(default)]
    positional: Vec<PositionalFile>,
    #[serde(default)]
    embeddings: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    source: String,
    prefix: Vec<TokenId>,
    scores: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PositionalFile {
    source: String,
    position: usize,
    scores: Vec<Option<f64>>,
}

/// JSON has no infinities; forbidden tokens travel as `null`.
pub(crate) fn to_wire(scores: &[f64]) -> Vec<Option<f64>> {
    scores.iter().map(|&s| (s != f64::NEG_INFINITY).then_some(s)).collect()
}

pub(crate) fn from_wire(scores: &[Option<f64>]) -> Vec<f64> {
    scores.iter().map(|s| s.unwrap_or(f64::NEG_INFINITY)).collect()
}

impl Scorer for TableScorer {
    fn spec(&self) -> &Arc<ModelTextSpec> {
        &self.spec
    }

    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> Result<StepScores> {
        let row = self
            .entries
            .get(source)
            .and_then(|m| m.get(prefix))
            .or_else(|| self.positional.get(source).and_then(|m| m.get(&prefix.len())))
            .unwrap_or(&self.default);
        Ok(StepScores(row.clone()))
    }

    fn embedding(&self, token: TokenId) -> Result<Vec<f64>> {
        let rows = self.embeddings.as_ref().ok_or(Error::EmbeddingsUnavailable)?;
        rows.get(token as usize).cloned().ok_or_else(|| Error::Sequence(format!("token {token} outside vocabulary")))
    }

    fn has_embeddings(&self) -> bool {
        self.embeddings.is_some()
    }
}
