//! On-disk layout of model text specs.
//!
//! A spec directory holds `vocab.txt` (one token per line, reserved symbols
//! first), `merges.txt` for BPE schemes (`left<TAB>right` per line, in
//! application order) and `spec.json` with the scheme kind and generation
//! order.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{Bpe, GenerationOrder, ModelTextSpec, TokenizationScheme, Vocabulary, DEFAULT_MARKER};

/// Self-contained JSON form of a spec (used inside table files and the
/// remote-scorer handshake).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpecDescriptor {
    pub vocab: Vec<String>,
    pub scheme: TokenizationScheme,
    pub order: GenerationOrder,
}

impl SpecDescriptor {
    pub fn from_spec(spec: &ModelTextSpec) -> Self {
        Self { vocab: spec.vocab().entries().to_vec(), scheme: spec.scheme().clone(), order: spec.order() }
    }

    pub fn into_spec(self) -> Result<Arc<ModelTextSpec>> {
        Ok(ModelTextSpec::new(Vocabulary::from_entries(self.vocab)?, self.scheme, self.order))
    }
}

#[derive(Serialize, Deserialize)]
struct SpecHeader {
    scheme: String,
    #[serde(default)]
    split_contractions: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    marker: Option<String>,
    order: GenerationOrder,
}

pub fn save_spec_dir(spec: &ModelTextSpec, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("vocab.txt"))?);
    spec.vocab().write_to(&mut w)?;
    w.flush()?;
    let header = match spec.scheme() {
        TokenizationScheme::Whitespace { split_contractions } => SpecHeader {
            scheme: "whitespace".into(),
            split_contractions: *split_contractions,
            marker: None,
            order: spec.order(),
        },
        TokenizationScheme::Character => {
            SpecHeader { scheme: "character".into(), split_contractions: false, marker: None, order: spec.order() }
        }
        TokenizationScheme::Bpe(bpe) => {
            let mut w = BufWriter::new(File::create(dir.join("merges.txt"))?);
            bpe.write_merges(&mut w)?;
            w.flush()?;
            SpecHeader {
                scheme: "bpe".into(),
                split_contractions: false,
                marker: Some(bpe.marker().to_string()),
                order: spec.order(),
            }
        }
    };
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    fs::write(dir.join("spec.json"), json)?;
    Ok(())
}

pub fn load_spec_dir(dir: &Path) -> Result<Arc<ModelTextSpec>> {
    let header: SpecHeader = serde_json::from_str(&fs::read_to_string(dir.join("spec.json"))?)?;
    let vocab = Vocabulary::read_from(BufReader::new(File::open(dir.join("vocab.txt"))?))?;
    let scheme = match header.scheme.as_str() {
        "whitespace" => TokenizationScheme::Whitespace { split_contractions: header.split_contractions },
        "character" => TokenizationScheme::Character,
        "bpe" => {
            let marker = header.marker.unwrap_or_else(|| DEFAULT_MARKER.to_string());
            TokenizationScheme::Bpe(Bpe::read_merges(BufReader::new(File::open(dir.join("merges.txt"))?), marker)?)
        }
        other => return Err(Error::Format(format!("unknown scheme {other:?}"))),
    };
    Ok(ModelTextSpec::new(vocab, scheme, header.order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::learn_bpe;

    #[test]
    fn spec_dir_round_trip_preserves_ids() {
        let corpus = ["low lower lowest", "new newer"];
        let bpe = learn_bpe(&corpus, 5, DEFAULT_MARKER).unwrap();
        let scheme = TokenizationScheme::Bpe(bpe);
        let vocab = Vocabulary::build(&corpus, &scheme, None).unwrap();
        let spec = ModelTextSpec::new(vocab, scheme, GenerationOrder::RightToLeft);
        let dir = tempfile::tempdir().unwrap();
        save_spec_dir(&spec, dir.path()).unwrap();
        let back = load_spec_dir(dir.path()).unwrap();
        assert_eq!(back.id(), spec.id());
        assert_eq!(back.vocab().entries(), spec.vocab().entries());
    }

    #[test]
    fn descriptor_round_trip() {
        let spec = ModelTextSpec::new(
            Vocabulary::new(["x"]).unwrap(),
            TokenizationScheme::contractions(),
            GenerationOrder::LeftToRight,
        );
        let json = serde_json::to_string(&SpecDescriptor::from_spec(&spec)).unwrap();
        let back: SpecDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_spec().unwrap().id(), spec.id());
    }
}
