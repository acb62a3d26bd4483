//! Building scorers from model declarations, and the on-disk model format
//! written by `twist train`: a directory holding the text spec
//! (`vocab.txt`, `spec.json`, `merges.txt` for BPE) and `model.ngram`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use twist_core::persist::{load_spec_dir, save_spec_dir};
use twist_core::{
    learn_bpe, ModelTextSpec, NGramConfig, NGramModel, RemoteOptions, RemoteScorer, Scorer, SourceView, StepScores,
    TableScorer, TokenId, TokenizationScheme, Vocabulary,
};

use crate::config::{ExperimentConfig, ModelDecl, ModelKind, SchemeKind, SpecDecl};
use crate::data::read_lines;
use crate::error::{config_err, HarnessError, Result};

pub const MODEL_FILE: &str = "model.ngram";

/// A ready scorer with the source view it reads.
pub struct LoadedModel {
    pub scorer: Box<dyn Scorer>,
    pub view: SourceView,
}

impl LoadedModel {
    pub fn new(scorer: impl Scorer + 'static, view: SourceView) -> Self {
        Self { scorer: Box::new(scorer), view }
    }

    pub fn spec(&self) -> &Arc<ModelTextSpec> {
        self.scorer.spec()
    }
}

/// Builds the text spec a declaration describes from a training corpus.
pub fn build_spec<S: AsRef<str>>(corpus: &[S], decl: &SpecDecl) -> Result<Arc<ModelTextSpec>> {
    let scheme = match decl.scheme {
        SchemeKind::Whitespace => TokenizationScheme::whitespace(),
        SchemeKind::Contractions => TokenizationScheme::contractions(),
        SchemeKind::Character => TokenizationScheme::Character,
        SchemeKind::Bpe => TokenizationScheme::Bpe(learn_bpe(corpus, decl.merges, &decl.marker)?),
    };
    let vocab = Vocabulary::build(corpus, &scheme, decl.max_vocab)?;
    Ok(ModelTextSpec::new(vocab, scheme, decl.order))
}

pub fn train_ngram<S: AsRef<str>>(corpus: &[S], spec: &SpecDecl, config: NGramConfig) -> Result<NGramModel> {
    if corpus.is_empty() {
        return Err(config_err("training corpus is empty"));
    }
    let spec = build_spec(corpus, spec)?;
    Ok(NGramModel::train(corpus, spec, config)?)
}

pub fn save_model_dir(model: &NGramModel, dir: &Path) -> Result<()> {
    save_spec_dir(model.spec(), dir)?;
    let mut w = BufWriter::new(File::create(dir.join(MODEL_FILE))?);
    model.save(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model_dir(dir: &Path) -> Result<NGramModel> {
    if !dir.join(MODEL_FILE).is_file() {
        return Err(config_err(format!("{} is not a model directory", dir.display())));
    }
    let spec = load_spec_dir(dir)?;
    let file =
        File::open(dir.join(MODEL_FILE)).map_err(|source| HarnessError::Read { path: dir.join(MODEL_FILE), source })?;
    Ok(NGramModel::load(BufReader::new(file), spec)?)
}

pub fn load_table(path: &Path) -> Result<TableScorer> {
    let bytes = fs::read(path).map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
    Ok(TableScorer::load(bytes.as_slice())?)
}

/// Loads or trains the declared model. `train_subset`, when given, replaces
/// the training corpus of an n-gram declaration.
pub fn load_model(config: &ExperimentConfig, decl: &ModelDecl, train_subset: Option<&[String]>) -> Result<LoadedModel> {
    let view = SourceView::new(decl.view.iter().cloned());
    let path = |p: &Option<std::path::PathBuf>| config.resolve(p.as_deref().expect("validated"));
    Ok(match decl.kind {
        ModelKind::Ngram => {
            let model = match train_subset {
                Some(lines) => train_ngram(lines, &decl.spec, decl.ngram)?,
                None => train_ngram(&read_lines(&path(&decl.train))?, &decl.spec, decl.ngram)?,
            };
            LoadedModel::new(model, view)
        }
        ModelKind::Saved => LoadedModel::new(load_model_dir(&path(&decl.path))?, view),
        ModelKind::Table => LoadedModel::new(load_table(&path(&decl.path))?, view),
        ModelKind::Remote => {
            let options = RemoteOptions { top_n: decl.top_n, ..Default::default() };
            let remote = match (&decl.address, &decl.command) {
                (Some(addr), _) => RemoteScorer::connect_tcp(addr.as_str(), options)?,
                (None, Some(cmd)) if !cmd.is_empty() => RemoteScorer::spawn(&cmd[0], &cmd[1..], options)?,
                _ => return Err(config_err("remote model needs `address` or a non-empty `command`")),
            };
            LoadedModel::new(remote, view)
        }
    })
}

/// Wraps a scorer and counts `step_scores` calls.
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S: Scorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<S: Scorer> Scorer for CountingScorer<S> {
    fn spec(&self) -> &Arc<ModelTextSpec> {
        self.inner.spec()
    }

    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> twist_core::Result<StepScores> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.step_scores(source, prefix)
    }

    fn embedding(&self, token: TokenId) -> twist_core::Result<Vec<f64>> {
        self.inner.embedding(token)
    }

    fn has_embeddings(&self) -> bool {
        self.inner.has_embeddings()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use twist_core::GenerationOrder;

    fn corpus() -> Vec<String> {
        ["the cat sat on the mat", "the dog did n't sit", "a cat and a dog"].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn saved_model_scores_identically() {
        let spec =
            SpecDecl { scheme: SchemeKind::Bpe, merges: 8, order: GenerationOrder::RightToLeft, ..Default::default() };
        let model = train_ngram(&corpus(), &spec, NGramConfig { copy_bonus: 0.5, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model_dir(&model, dir.path()).unwrap();
        let back = load_model_dir(dir.path()).unwrap();
        assert_eq!(back.spec().id(), model.spec().id());
        let v = model.spec().vocab().len() as TokenId;
        for prefix in [vec![], vec![3], vec![4, 3], vec![v - 1, 5, 3]] {
            for src in ["", "the cat"] {
                assert_eq!(back.step_scores(src, &prefix).unwrap(), model.step_scores(src, &prefix).unwrap());
            }
        }
    }

    #[test]
    fn corrupted_model_file_is_an_error() {
        let model = train_ngram(&corpus(), &SpecDecl::default(), NGramConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model_dir(&model, dir.path()).unwrap();
        let path = dir.path().join(MODEL_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let pos = text.rfind('1').unwrap();
        let mut bytes = text.into_bytes();
        bytes[pos] = b'7';
        fs::write(&path, bytes).unwrap();
        let err = load_model_dir(dir.path()).err().unwrap();
        assert!(matches!(err, HarnessError::Core(twist_core::Error::Checksum)), "{err}");
    }

    #[test]
    fn counting_wrapper_counts() {
        let model = train_ngram(&corpus(), &SpecDecl::default(), NGramConfig::default()).unwrap();
        let counted = CountingScorer::new(model);
        let beam = twist_core::BeamConfig { beam_size: 2, max_len: 5, ..Default::default() };
        let out = twist_core::beam_search(&counted, "", &beam, None).unwrap();
        assert_eq!(counted.calls(), out.step_evals());
        counted.reset();
        assert_eq!(counted.calls(), 0);
    }
}
