//! Synthetic scenarios written to disk as ready-to-run experiments.
//!
//! * `complementary`: two table scorers over the same words with different
//!   vocabulary orders, f generating left to right and g right to left. f
//!   knows the first half of every reference and g the second half; each
//!   prefers a distractor word on the half it does not know.
//! * `identical`: f and g are both the left-to-right table of
//!   `complementary`. Its best sequence keeps the top score at every prefix
//!   length, so no guidance weight changes any output.
//! * `copy`: a word-level left-to-right n-gram model and a BPE right-to-left
//!   one, both trained on the same corpus and rewarded for copying the source.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twist_core::{
    DistanceFn, GenerationOrder, GuidanceConfig, ModelTextSpec, NGramConfig, TableScorer, TokenizationScheme,
    Vocabulary, BOS, EOS, UNK,
};

use crate::config::{
    DataConfig, DatasetDecl, ExperimentConfig, Method, ModelDecl, ModelKind, Models, Role, SchemeKind, SpecDecl,
    SubsampleConfig,
};
use crate::error::{config_err, HarnessError, Result};

pub const WORDS: [&str; 8] = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen"];

/// Score of the preferred token at a position.
const LIKED: f64 = -1.0;
/// Score of the right word where the model prefers a distractor.
const DOUBTED: f64 = -1.5;
const DISLIKED: f64 = -3.0;
const EOS_AT_END: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    Complementary,
    Identical,
    Copy,
}

impl FromStr for ScenarioKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complementary" => Ok(Self::Complementary),
            "identical" => Ok(Self::Identical),
            "copy" => Ok(Self::Copy),
            _ => Err(config_err(format!("unknown scenario {s:?} (complementary, identical, copy)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthOptions {
    pub seed: u64,
    pub dev: usize,
    pub test: usize,
    /// Words per reference (complementary) or training sentences (n-gram
    /// scenarios).
    pub length: usize,
    pub train: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { seed: 0, dev: 20, test: 40, length: 4, train: 400 }
    }
}

/// One line of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthLine {
    pub source: String,
    pub reference: String,
}

pub struct Complementary {
    pub f: TableScorer,
    pub g: TableScorer,
    pub dev: Vec<SynthLine>,
    pub test: Vec<SynthLine>,
}

fn table_spec(words: Vec<&str>, order: GenerationOrder) -> Result<std::sync::Arc<ModelTextSpec>> {
    Ok(ModelTextSpec::new(Vocabulary::new(words)?, TokenizationScheme::whitespace(), order))
}

fn base_row(n: usize, eos: f64) -> Vec<f64> {
    let mut v = vec![DISLIKED; n];
    v[BOS as usize] = f64::NEG_INFINITY;
    v[UNK as usize] = f64::NEG_INFINITY;
    v[EOS as usize] = eos;
    v
}

/// Builds the complementary table scorers and their datasets. The positional
/// rows of f cover reference word `i` at position `i`; those of g, which
/// generates right to left, at position `length - 1 - i`.
pub fn complementary(opts: &SynthOptions) -> Result<Complementary> {
    if opts.length < 2 {
        return Err(config_err("complementary references need at least two words"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let f_spec = table_spec(WORDS.to_vec(), GenerationOrder::LeftToRight)?;
    let g_spec = table_spec(WORDS.iter().rev().copied().collect(), GenerationOrder::RightToLeft)?;
    let n = f_spec.vocab().len();
    let mut f = TableScorer::new(f_spec.clone(), base_row(n, EOS_AT_END))?;
    let mut g = TableScorer::new(g_spec.clone(), base_row(n, EOS_AT_END))?;
    let half = opts.length / 2;

    let mut lines = Vec::with_capacity(opts.dev + opts.test);
    for i in 0..opts.dev + opts.test {
        let source = format!("s{i}");
        let words: Vec<&str> = (0..opts.length).map(|_| *WORDS.choose(&mut rng).expect("non-empty")).collect();
        for (pos, &right) in words.iter().enumerate() {
            let distractor = loop {
                let w = *WORDS.choose(&mut rng).expect("non-empty");
                if w != right {
                    break w;
                }
            };
            let mut known = base_row(n, DISLIKED);
            let mut unknown = base_row(n, DISLIKED);
            known[f_spec.vocab().id(right).expect("word") as usize] = LIKED;
            unknown[f_spec.vocab().id(distractor).expect("word") as usize] = LIKED;
            unknown[f_spec.vocab().id(right).expect("word") as usize] = DOUBTED;
            let to_g = |row: &[f64]| {
                let mut out = base_row(n, DISLIKED);
                for w in WORDS {
                    out[g_spec.vocab().id(w).expect("word") as usize] =
                        row[f_spec.vocab().id(w).expect("word") as usize];
                }
                out
            };
            let g_pos = opts.length - 1 - pos;
            if pos < half {
                g.insert_positional(&source, g_pos, to_g(&unknown))?;
                f.insert_positional(&source, pos, known)?;
            } else {
                g.insert_positional(&source, g_pos, to_g(&known))?;
                f.insert_positional(&source, pos, unknown)?;
            }
        }
        lines.push(SynthLine { source, reference: words.join(" ") });
    }
    let test = lines.split_off(opts.dev);
    Ok(Complementary { f, g, dev: lines, test })
}

const DETS: [&str; 3] = ["the", "a", "every"];
const ADJS: [&str; 5] = ["red", "small", "quick", "old", "quiet"];
const NOUNS: [&str; 6] = ["cat", "dog", "bird", "fish", "horse", "mouse"];
const VERBS: [&str; 5] = ["sees", "chases", "likes", "finds", "doesn't see"];

fn noun_phrase(out: &mut Vec<&'static str>, rng: &mut impl Rng) {
    out.push(DETS.choose(rng).expect("non-empty"));
    if rng.random_bool(0.5) {
        out.push(ADJS.choose(rng).expect("non-empty"));
    }
    out.push(NOUNS.choose(rng).expect("non-empty"));
}

/// A sentence from a tiny grammar: `det [adj] noun verb det [adj] noun`.
pub fn grammar_sentence(rng: &mut impl Rng) -> String {
    let mut out = Vec::new();
    noun_phrase(&mut out, rng);
    out.push(VERBS.choose(rng).expect("non-empty"));
    noun_phrase(&mut out, rng);
    out.join(" ")
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_split(dir: &Path, name: &str, lines: &[SynthLine]) -> Result<DatasetDecl> {
    write_lines(&dir.join(format!("{name}.src")), lines.iter().map(|l| l.source.clone()))?;
    write_lines(&dir.join(format!("{name}.ref")), lines.iter().map(|l| l.reference.clone()))?;
    Ok(DatasetDecl {
        source: Some(PathBuf::from(format!("{name}.src"))),
        references: vec![PathBuf::from(format!("{name}.ref"))],
        records: None,
        reference_fields: vec!["reference".into()],
    })
}

fn model(kind: ModelKind) -> ModelDecl {
    ModelDecl {
        kind,
        train: None,
        path: None,
        address: None,
        command: None,
        top_n: None,
        ngram: NGramConfig::default(),
        spec: SpecDecl::default(),
        view: vec!["source".into()],
    }
}

fn base_config(f: ModelDecl, g: ModelDecl, test: DatasetDecl, dev: DatasetDecl, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        workers: 0,
        output_dir: PathBuf::from("out"),
        methods: Method::SIX.to_vec(),
        dev_metric: twist_core::Metric::Bleu,
        lambda_grid: twist_core::twist::LAMBDA_GRID.to_vec(),
        beam: twist_core::BeamConfig::default(),
        guidance: GuidanceConfig::default(),
        models: Models { f, g },
        data: DataConfig { test, dev: Some(dev) },
        subsample: None,
        base_dir: PathBuf::new(),
    }
}

/// Writes the scenario's models, datasets and `experiment.toml` into `dir`
/// and returns the config path.
pub fn write_scenario(kind: ScenarioKind, dir: &Path, opts: &SynthOptions) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let config = match kind {
        ScenarioKind::Complementary | ScenarioKind::Identical => {
            let c = complementary(opts)?;
            c.f.save(fs::File::create(dir.join("f.table.json"))?)?;
            let test = write_split(dir, "test", &c.test)?;
            let dev = write_split(dir, "dev", &c.dev)?;
            let table = |name: &str| ModelDecl { path: Some(PathBuf::from(name)), ..model(ModelKind::Table) };
            let mut config = if kind == ScenarioKind::Complementary {
                c.g.save(fs::File::create(dir.join("g.table.json"))?)?;
                let mut config = base_config(table("f.table.json"), table("g.table.json"), test, dev, opts.seed);
                config.guidance =
                    GuidanceConfig { distance: DistanceFn::HammingOneBest, ..GuidanceConfig::with_lambdas(1.0, 1.0) };
                config
            } else {
                let mut config = base_config(table("f.table.json"), table("f.table.json"), test, dev, opts.seed);
                config.methods.push(Method::Fusion);
                config.dev_metric = twist_core::Metric::RougeL;
                config
            };
            config.beam.max_len = opts.length + 1;
            config
        }
        ScenarioKind::Copy => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let corpus: Vec<String> = (0..opts.train).map(|_| grammar_sentence(&mut rng)).collect();
            write_lines(&dir.join("train.txt"), corpus)?;
            let mut split = |n: usize| -> Vec<SynthLine> {
                (0..n)
                    .map(|_| {
                        let s = grammar_sentence(&mut rng);
                        SynthLine { source: s.clone(), reference: s }
                    })
                    .collect()
            };
            let dev_lines = split(opts.dev);
            let test_lines = split(opts.test);
            let test = write_split(dir, "test", &test_lines)?;
            let dev = write_split(dir, "dev", &dev_lines)?;
            let ngram = NGramConfig { order: 3, k_add: 0.1, copy_bonus: 2.0 };
            let f = ModelDecl { train: Some(PathBuf::from("train.txt")), ngram, ..model(ModelKind::Ngram) };
            let g = ModelDecl {
                spec: SpecDecl {
                    scheme: SchemeKind::Bpe,
                    merges: 30,
                    order: GenerationOrder::RightToLeft,
                    ..SpecDecl::default()
                },
                ngram: NGramConfig { order: 4, ..ngram },
                ..f.clone()
            };
            let mut config = base_config(f, g, test, dev, opts.seed);
            config.beam.max_len = 24;
            let full = opts.train;
            let mut sizes: Vec<usize> = [full / 4, full / 2, full].into_iter().filter(|&n| n > 0).collect();
            sizes.dedup();
            config.subsample = Some(SubsampleConfig { model: Role::G, sizes });
            config
        }
    };
    config.validate()?;
    let text = toml::to_string(&config).map_err(|e| config_err(format!("serializing config: {e}")))?;
    let path = dir.join("experiment.toml");
    fs::write(&path, text)?;
    Ok(path)
}
