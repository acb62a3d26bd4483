//! Experiment configuration, read from a TOML file.
//!
//! ```toml
//! seed = 7
//! workers = 0                      # 0: one per core
//! output_dir = "out"
//! methods = ["isolation-f", "isolation-g", "rerank-fg", "rerank-gf", "twist-fg", "twist-gf"]
//! dev_metric = "bleu"              # or "rouge-l"
//! lambda_grid = [0.1, 0.3, 1.0, 3.0]
//!
//! [beam]
//! beam_size = 5
//! max_len = 40
//! length_penalty = 1.0
//!
//! [guidance]
//! lambda_f = 0.3
//! lambda_g = 1.0
//! iterations = 1
//! distance = "hamming-min"        # hamming-one-best, embedding-min
//!
//! [models.f]
//! kind = "ngram"                  # ngram | saved | table | remote
//! train = "train.tgt"
//! view = ["source"]
//! ngram = { order = 3, k_add = 0.1, copy_bonus = 1.0 }
//! spec = { scheme = "bpe", merges = 200, order = "r2l" }
//!
//! [models.g]
//! kind = "table"
//! path = "g.table.json"
//!
//! [data.test]
//! source = "test.src"
//! references = ["test.ref"]
//!
//! [subsample]
//! model = "f"
//! sizes = [100, 200]
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twist_core::metrics::Metric;
use twist_core::twist::LAMBDA_GRID;
use twist_core::{BeamConfig, GenerationOrder, GuidanceConfig, NGramConfig};

use crate::error::{config_err, HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    IsolationF,
    IsolationG,
    RerankFg,
    RerankGf,
    TwistFg,
    TwistGf,
    Fusion,
}

impl Method {
    pub const SIX: [Method; 6] =
        [Method::IsolationF, Method::IsolationG, Method::RerankFg, Method::RerankGf, Method::TwistFg, Method::TwistGf];

    pub fn name(self) -> &'static str {
        match self {
            Method::IsolationF => "isolation-f",
            Method::IsolationG => "isolation-g",
            Method::RerankFg => "rerank-fg",
            Method::RerankGf => "rerank-gf",
            Method::TwistFg => "twist-fg",
            Method::TwistGf => "twist-gf",
            Method::Fusion => "fusion",
        }
    }

    pub fn is_twist(self) -> bool {
        matches!(self, Method::TwistFg | Method::TwistGf)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Fusion]
            .into_iter()
            .chain(Method::SIX)
            .find(|m| m.name() == s)
            .ok_or_else(|| config_err(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Train an n-gram model from `train` when the experiment starts.
    #[default]
    Ngram,
    /// Load a model directory written by `twist train`.
    Saved,
    /// Load a table scorer file.
    Table,
    /// Connect to a remote scorer at `address`, or spawn `command`.
    Remote,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    #[default]
    Whitespace,
    Contractions,
    Character,
    Bpe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecDecl {
    pub scheme: SchemeKind,
    /// BPE merges learned from the training corpus.
    pub merges: usize,
    pub marker: String,
    pub order: GenerationOrder,
    pub max_vocab: Option<usize>,
}

impl Default for SpecDecl {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::Whitespace,
            merges: 100,
            marker: twist_core::text::DEFAULT_MARKER.to_string(),
            order: GenerationOrder::LeftToRight,
            max_vocab: None,
        }
    }
}

fn is_default<T: Default + PartialEq>(value: &T) -> bool {
    *value == T::default()
}

fn default_view() -> Vec<String> {
    vec!["source".to_string()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDecl {
    #[serde(default)]
    pub kind: ModelKind,
    pub train: Option<PathBuf>,
    pub path: Option<PathBuf>,
    pub address: Option<String>,
    pub command: Option<Vec<String>>,
    pub top_n: Option<usize>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub ngram: NGramConfig,
    #[serde(default, skip_serializing_if = "is_default")]
    pub spec: SpecDecl,
    /// Source-record fields this model reads, joined by spaces.
    #[serde(default = "default_view")]
    pub view: Vec<String>,
}

impl ModelDecl {
    fn validate(&self, role: &str) -> Result<()> {
        let need = |field: &str, present: bool| {
            if present {
                Ok(())
            } else {
                Err(config_err(format!("model {role}: kind {:?} needs `{field}`", self.kind)))
            }
        };
        match self.kind {
            ModelKind::Ngram => need("train", self.train.is_some()),
            ModelKind::Saved | ModelKind::Table => need("path", self.path.is_some()),
            ModelKind::Remote => need("address or command", self.address.is_some() || self.command.is_some()),
        }?;
        if self.view.is_empty() {
            return Err(config_err(format!("model {role}: view must name at least one field")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Models {
    pub f: ModelDecl,
    pub g: ModelDecl,
}

fn is_default_reference_fields(fields: &Vec<String>) -> bool {
    *fields == default_reference_fields()
}

fn default_reference_fields() -> Vec<String> {
    vec!["reference".to_string()]
}

/// Either line-aligned `source` and `references` files, or a JSON-lines
/// `records` file whose objects map field names to text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDecl {
    pub source: Option<PathBuf>,
    #[serde(default)]
    pub references: Vec<PathBuf>,
    pub records: Option<PathBuf>,
    #[serde(default = "default_reference_fields", skip_serializing_if = "is_default_reference_fields")]
    pub reference_fields: Vec<String>,
}

impl Default for DatasetDecl {
    fn default() -> Self {
        Self { source: None, references: Vec::new(), records: None, reference_fields: default_reference_fields() }
    }
}

impl DatasetDecl {
    fn validate(&self, name: &str) -> Result<()> {
        match (&self.source, &self.records) {
            (Some(_), None) if !self.references.is_empty() => Ok(()),
            (Some(_), None) => Err(config_err(format!("dataset {name}: `references` is empty"))),
            (None, Some(_)) if !self.reference_fields.is_empty() => Ok(()),
            (None, Some(_)) => Err(config_err(format!("dataset {name}: `reference_fields` is empty"))),
            _ => Err(config_err(format!("dataset {name}: give exactly one of `source` or `records`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub test: DatasetDecl,
    pub dev: Option<DatasetDecl>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    F,
    G,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsampleConfig {
    pub model: Role,
    pub sizes: Vec<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_grid() -> Vec<f64> {
    LAMBDA_GRID.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub dev_metric: Metric,
    #[serde(default = "default_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub beam: BeamConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    pub models: Models,
    pub data: DataConfig,
    pub subsample: Option<SubsampleConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: Self = toml::from_str(text)?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(config_err("method list is empty"));
        }
        self.beam.validate()?;
        self.guidance.validate()?;
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(config_err("lambda_grid must be a non-empty list of non-negative numbers"));
        }
        self.models.f.validate("f")?;
        self.models.g.validate("g")?;
        self.data.test.validate("test")?;
        if let Some(dev) = &self.data.dev {
            dev.validate("dev")?;
        }
        if let Some(s) = &self.subsample {
            if s.sizes.is_empty() || s.sizes.contains(&0) {
                return Err(config_err("subsample sizes must be positive"));
            }
            let decl = match s.model {
                Role::F => &self.models.f,
                Role::G => &self.models.g,
            };
            if decl.kind != ModelKind::Ngram {
                return Err(config_err("the subsampled model must be of kind \"ngram\""));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }
}
