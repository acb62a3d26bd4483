//! Datasets: source records paired with one or more references.

use std::fs;
use std::path::Path;

use twist_core::SourceRecord;

use crate::config::DatasetDecl;
use crate::error::{config_err, HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub record: SourceRecord,
    pub references: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Collapses runs of whitespace and trims.
pub fn normalize(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })
}

/// Non-empty lines of a text file, whitespace-normalized.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(normalize).filter(|l| !l.is_empty()).collect())
}

fn aligned_lines(path: &Path) -> Result<Vec<String>> {
    let mut lines: Vec<String> = read_text(path)?.lines().map(normalize).collect();
    while lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    Ok(lines)
}

pub fn load_dataset(name: &str, decl: &DatasetDecl, resolve: impl Fn(&Path) -> std::path::PathBuf) -> Result<Dataset> {
    let examples = match (&decl.source, &decl.records) {
        (Some(src), None) => {
            let sources = aligned_lines(&resolve(src))?;
            let refs = decl.references.iter().map(|p| aligned_lines(&resolve(p))).collect::<Result<Vec<_>>>()?;
            for (p, r) in decl.references.iter().zip(&refs) {
                if r.len() != sources.len() {
                    return Err(config_err(format!(
                        "dataset {name}: {} has {} lines but the source has {}",
                        p.display(),
                        r.len(),
                        sources.len()
                    )));
                }
            }
            sources
                .into_iter()
                .enumerate()
                .map(|(i, s)| Example {
                    record: twist_core::scoring::record_from_line(&s),
                    references: refs.iter().map(|r| r[i].clone()).collect(),
                })
                .collect()
        }
        (None, Some(path)) => load_records(name, &resolve(path), &decl.reference_fields)?,
        _ => return Err(config_err(format!("dataset {name}: give exactly one of `source` or `records`"))),
    };
    Ok(Dataset { name: name.to_string(), examples })
}

fn load_records(name: &str, path: &Path, reference_fields: &[String]) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(line).map_err(|e| config_err(format!("dataset {name}: line {}: {e}", i + 1)))?;
        let mut record = SourceRecord::new();
        let mut by_field = std::collections::BTreeMap::new();
        for (key, value) in obj {
            let texts: Vec<String> = match value {
                serde_json::Value::String(s) => vec![normalize(&s)],
                serde_json::Value::Array(items) => {
                    items.into_iter().map(|v| v.as_str().map(normalize)).collect::<Option<_>>().ok_or_else(|| {
                        config_err(format!("dataset {name}: line {}: `{key}` must hold strings", i + 1))
                    })?
                }
                _ => return Err(config_err(format!("dataset {name}: line {}: `{key}` must hold text", i + 1))),
            };
            if reference_fields.contains(&key) {
                by_field.insert(key, texts);
            } else {
                record.insert(key, texts.join(" "));
            }
        }
        let references: Vec<String> = reference_fields.iter().filter_map(|f| by_field.remove(f)).flatten().collect();
        if references.is_empty() {
            return Err(config_err(format!("dataset {name}: line {} has no reference", i + 1)));
        }
        out.push(Example { record, references });
    }
    Ok(out)
}
