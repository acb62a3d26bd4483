use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_prefix, Scorer, StepScores};
use crate::error::{Error, Result};
use crate::text::{ModelTextSpec, TokenId, BOS, EOS, UNK};

const MAGIC: &str = "twist-ngram";
const VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NGramConfig {
    pub order: usize,
    pub k_add: f64,
    /// Added to the log-probability of tokens whose surface form occurs in
    /// the source; results are capped at zero. 0 disables conditioning.
    pub copy_bonus: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self { order: 3, k_add: 0.1, copy_bonus: 0.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

/// Add-k smoothed n-gram model with interpolated backoff:
///
/// `P_m(w|h) = (c(h,w) + kV * P_{m-1}(w|h')) / (c(h) + kV)`, where `V` counts
/// every token except BOS and `P_1(w) = (c(w) + k) / (N + kV)`. Unseen
/// contexts back off entirely to the lower order.
#[derive(Clone, Debug)]
pub struct NGramModel {
    spec: Arc<ModelTextSpec>,
    config: NGramConfig,
    // tables[m - 1] holds contexts of length m - 1
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
    unigram: Vec<f64>,
}

impl NGramModel {
    /// Trains on surface-text lines; tokens are taken in `spec`'s generation
    /// order, BOS-padded and EOS-terminated.
    pub fn train<S: AsRef<str>>(corpus: &[S], spec: Arc<ModelTextSpec>, config: NGramConfig) -> Result<Self> {
        validate(&config)?;
        if corpus.is_empty() {
            return Err(Error::Training("empty corpus".into()));
        }
        let n = config.order;
        let mut tables: Vec<HashMap<Vec<TokenId>, ContextCounts>> = vec![HashMap::new(); n];
        for line in corpus {
            let seq = spec.encode_text(line.as_ref());
            let mut stream = vec![BOS; n - 1];
            stream.extend_from_slice(seq.ids());
            stream.push(EOS);
            for j in (n - 1)..stream.len() {
                let tok = stream[j];
                for m in 1..=n {
                    let ctx = stream[j + 1 - m..j].to_vec();
                    let c = tables[m - 1].entry(ctx).or_default();
                    c.total += 1;
                    *c.next.entry(tok).or_default() += 1;
                }
            }
        }
        Ok(Self::from_tables(spec, config, tables))
    }

    fn from_tables(
        spec: Arc<ModelTextSpec>,
        config: NGramConfig,
        tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
    ) -> Self {
        let v = spec.vocab().len();
        let kv = config.k_add * (v - 1) as f64;
        let root = tables[0].get(&Vec::new()).cloned().unwrap_or_default();
        let denom = root.total as f64 + kv;
        let mut unigram: Vec<f64> = (0..v as TokenId)
            .map(|t| (root.next.get(&t).copied().unwrap_or(0) as f64 + config.k_add) / denom)
            .collect();
        unigram[BOS as usize] = 0.0;
        Self { spec, config, tables, unigram }
    }

    pub fn config(&self) -> NGramConfig {
        self.config
    }

    /// Number of times `token` followed `context` (context length < order).
    pub fn count(&self, context: &[TokenId], token: TokenId) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|c| c.next.get(&token))
            .copied()
            .unwrap_or(0)
    }

    /// Smoothed next-token distribution (probabilities, BOS = 0).
    pub fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let n = self.config.order;
        let kv = self.config.k_add * (self.spec.vocab().len() - 1) as f64;
        let mut history = vec![BOS; n - 1];
        history.extend_from_slice(prefix);
        let mut p = self.unigram.clone();
        for m in 2..=n {
            let ctx = &history[history.len() - (m - 1)..];
            let Some(c) = self.tables[m - 1].get(ctx) else { continue };
            let denom = c.total as f64 + kv;
            for (w, pw) in p.iter_mut().enumerate() {
                let count = c.next.get(&(w as TokenId)).copied().unwrap_or(0) as f64;
                *pw = (count + kv * *pw) / denom;
            }
        }
        p[BOS as usize] = 0.0;
        p
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let mut body = String::new();
        body.push_str(&format!("{MAGIC}\t{VERSION}\n"));
        body.push_str(&format!("order\t{}\n", self.config.order));
        body.push_str(&format!("k_add\t{}\n", self.config.k_add));
        body.push_str(&format!("copy_bonus\t{}\n", self.config.copy_bonus));
        body.push_str(&format!("spec\t{}\n", self.spec.id()));
        let mut rows: Vec<(usize, &Vec<TokenId>, TokenId, u64)> = Vec::new();
        for (m, table) in self.tables.iter().enumerate() {
            for (ctx, c) in table {
                for (&tok, &n) in &c.next {
                    rows.push((m + 1, ctx, tok, n));
                }
            }
        }
        rows.sort();
        body.push_str(&format!("counts\t{}\n", rows.len()));
        for (m, ctx, tok, n) in rows {
            let ctx = if ctx.is_empty() {
                "-".to_string()
            } else {
                ctx.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
            };
            body.push_str(&format!("{m}\t{ctx}\t{tok}\t{n}\n"));
        }
        let sum = hex::encode(Sha256::digest(body.as_bytes()));
        w.write_all(body.as_bytes())?;
        writeln!(w, "checksum\t{sum}")?;
        Ok(())
    }

    /// Loads a model saved with [`NGramModel::save`]; `spec` must be the spec
    /// the model was trained under.
    pub fn load<R: BufRead>(mut r: R, spec: Arc<ModelTextSpec>) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let body_end = text.rfind("checksum\t").ok_or_else(|| Error::Format("missing checksum line".into()))?;
        let (body, tail) = text.split_at(body_end);
        let expected = tail.trim_end().trim_start_matches("checksum\t");
        if hex::encode(Sha256::digest(body.as_bytes())) != expected {
            return Err(Error::Checksum);
        }
        let mut lines = body.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing {key}")))?;
            let (k, v) =
                line.split_once('\t').ok_or_else(|| Error::Format(format!("malformed header line {line:?}")))?;
            if k != key {
                return Err(Error::Format(format!("expected {key}, found {k}")));
            }
            Ok(v.to_string())
        };
        let version = header(MAGIC)?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let parse_err = |what: &str| Error::Format(format!("bad {what}"));
        let order: usize = header("order")?.parse().map_err(|_| parse_err("order"))?;
        let k_add: f64 = header("k_add")?.parse().map_err(|_| parse_err("k_add"))?;
        let copy_bonus: f64 = header("copy_bonus")?.parse().map_err(|_| parse_err("copy_bonus"))?;
        let spec_ref = header("spec")?;
        if spec_ref != spec.id().to_string() {
            return Err(Error::Format(format!("model was trained under spec {spec_ref}, given {}", spec.id())));
        }
        let n_rows: usize = header("counts")?.parse().map_err(|_| parse_err("counts"))?;
        let config = NGramConfig { order, k_add, copy_bonus };
        validate(&config)?;
        let v = spec.vocab().len() as TokenId;
        let mut tables: Vec<HashMap<Vec<TokenId>, ContextCounts>> = vec![HashMap::new(); order];
        let mut seen = 0;
        for line in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            let [m, ctx, tok, n] = cols[..] else {
                return Err(Error::Format(format!("malformed count row {line:?}")));
            };
            let m: usize = m.parse().map_err(|_| parse_err("order column"))?;
            let ctx: Vec<TokenId> = if ctx == "-" {
                Vec::new()
            } else {
                ctx.split(' ').map(|t| t.parse().map_err(|_| parse_err("context id"))).collect::<Result<_>>()?
            };
            let tok: TokenId = tok.parse().map_err(|_| parse_err("token id"))?;
            let n: u64 = n.parse().map_err(|_| parse_err("count"))?;
            if m == 0 || m > order || ctx.len() != m - 1 || tok >= v || ctx.iter().any(|&t| t >= v) {
                return Err(Error::Format(format!("count row out of range: {line:?}")));
            }
            let c = tables[m - 1].entry(ctx).or_default();
            c.total += n;
            c.next.insert(tok, n);
            seen += 1;
        }
        if seen != n_rows {
            return Err(Error::Format(format!("expected {n_rows} count rows, found {seen}")));
        }
        Ok(Self::from_tables(spec, config, tables))
    }
}

fn validate(config: &NGramConfig) -> Result<()> {
    if config.order == 0 {
        return Err(Error::Training("order must be at least 1".into()));
    }
    if !(config.k_add > 0.0 && config.k_add.is_finite()) {
        return Err(Error::Training("k_add must be positive".into()));
    }
    if !(config.copy_bonus >= 0.0 && config.copy_bonus.is_finite()) {
        return Err(Error::Training("copy_bonus must be non-negative".into()));
    }
    Ok(())
}

impl Scorer for NGramModel {
    fn spec(&self) -> &Arc<ModelTextSpec> {
        &self.spec
    }

    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> Result<StepScores> {
        check_prefix(&self.spec, prefix)?;
        let mut scores: Vec<f64> = self.distribution(prefix).into_iter().map(f64::ln).collect();
        if self.config.copy_bonus > 0.0 {
            let in_source: HashSet<TokenId> = self.spec.encode_text(source).ids().iter().copied().collect();
            for t in in_source {
                if t != UNK {
                    let s = &mut scores[t as usize];
                    *s = (*s + self.config.copy_bonus).min(0.0);
                }
            }
        }
        Ok(StepScores(scores))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{GenerationOrder, TokenizationScheme, Vocabulary};

    fn spec_for(corpus: &[&str]) -> Arc<ModelTextSpec> {
        let scheme = TokenizationScheme::whitespace();
        let vocab = Vocabulary::build(corpus, &scheme, None).unwrap();
        ModelTextSpec::new(vocab, scheme, GenerationOrder::LeftToRight)
    }

    #[test]
    fn bigram_counts() {
        let corpus = ["a b", "a b"];
        let spec = spec_for(&corpus);
        let m = NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 2, ..Default::default() }).unwrap();
        let a = spec.vocab().id("a").unwrap();
        let b = spec.vocab().id("b").unwrap();
        assert_eq!(m.count(&[a], b), 2);
        assert_eq!(m.count(&[BOS], a), 2);
        assert_eq!(m.count(&[b], EOS), 2);
        assert_eq!(m.count(&[], a), 2);
    }

    #[test]
    fn degenerate_unigram_prefers_the_only_token() {
        let corpus = ["t t t t"];
        let spec = spec_for(&corpus);
        let m = NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 1, ..Default::default() }).unwrap();
        let t = spec.vocab().id("t").unwrap();
        for prefix in [vec![], vec![t], vec![t, t, t]] {
            let s = m.step_scores("", &prefix).unwrap();
            let best = (1..s.len() as TokenId).max_by(|&x, &y| s.get(x).total_cmp(&s.get(y))).unwrap();
            assert_eq!(best, t);
        }
    }

    #[test]
    fn observed_continuation_beats_unobserved() {
        let corpus = ["x y", "z w"];
        let spec = spec_for(&corpus);
        let m = NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 2, ..Default::default() }).unwrap();
        let v = spec.vocab();
        let s = m.step_scores("", &[v.id("x").unwrap()]).unwrap();
        let y = s.get(v.id("y").unwrap());
        for other in ["z", "w", "x"] {
            assert!(y > s.get(v.id(other).unwrap()));
        }
        assert!(y > s.get(UNK));
    }

    #[test]
    fn every_token_is_finite_and_distribution_normalized() {
        let corpus = ["a b c", "b c a", "c c"];
        let spec = spec_for(&corpus);
        let m =
            NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 3, k_add: 0.5, copy_bonus: 0.0 }).unwrap();
        for prefix in [vec![], vec![UNK], vec![3, 4], vec![5, 5, 5, UNK]] {
            let p = m.distribution(&prefix);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let s = m.step_scores("", &prefix).unwrap();
            assert!(s.0[1..].iter().all(|x| x.is_finite() && *x <= 0.0));
        }
        let unk_only = crate::text::TokenSequence::new(vec![UNK, UNK, EOS], &spec).unwrap();
        assert!(super::super::score_sequence(&m, "", &unk_only).unwrap().is_finite());
    }

    #[test]
    fn copy_bonus_rewards_source_tokens() {
        let corpus = ["a b", "a c"];
        let spec = spec_for(&corpus);
        let plain =
            NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 2, k_add: 0.1, copy_bonus: 0.0 }).unwrap();
        let cond =
            NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 2, k_add: 0.1, copy_bonus: 1.0 }).unwrap();
        let a = spec.vocab().id("a").unwrap();
        let b = spec.vocab().id("b").unwrap();
        let c = spec.vocab().id("c").unwrap();
        let s = cond.step_scores("c", &[a]).unwrap();
        assert!(s.get(c) > s.get(b));
        assert_eq!(plain.step_scores("c", &[a]).unwrap().get(c), plain.step_scores("", &[a]).unwrap().get(c));
        assert!(s.0.iter().all(|x| *x <= 0.0));
    }

    #[test]
    fn rejects_bad_config_and_empty_corpus() {
        let spec = spec_for(&["a"]);
        let empty: [&str; 0] = [];
        assert!(NGramModel::train(&empty, spec.clone(), NGramConfig::default()).is_err());
        assert!(NGramModel::train(&["a"], spec.clone(), NGramConfig { order: 0, ..Default::default() }).is_err());
        assert!(NGramModel::train(&["a"], spec, NGramConfig { k_add: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn right_to_left_counts_reversed_stream() {
        let corpus = ["a b"];
        let scheme = TokenizationScheme::whitespace();
        let vocab = Vocabulary::build(&corpus, &scheme, None).unwrap();
        let spec = ModelTextSpec::new(vocab, scheme, GenerationOrder::RightToLeft);
        let m = NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 2, ..Default::default() }).unwrap();
        let a = spec.vocab().id("a").unwrap();
        let b = spec.vocab().id("b").unwrap();
        assert_eq!(m.count(&[BOS], b), 1);
        assert_eq!(m.count(&[b], a), 1);
        assert_eq!(m.count(&[a], EOS), 1);
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let corpus = ["a b c", "b c a", "c c"];
        let spec = spec_for(&corpus);
        let m =
            NGramModel::train(&corpus, spec.clone(), NGramConfig { order: 3, k_add: 0.25, copy_bonus: 0.5 }).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let mut again = Vec::new();
        m.save(&mut again).unwrap();
        assert_eq!(buf, again, "serialization is byte-stable");

        let back = NGramModel::load(buf.as_slice(), spec.clone()).unwrap();
        for prefix in [vec![], vec![3], vec![4, 5], vec![UNK, 3, 3]] {
            assert_eq!(m.step_scores("a c", &prefix).unwrap(), back.step_scores("a c", &prefix).unwrap());
        }

        let mut corrupt = buf.clone();
        let pos = corrupt.len() / 2;
        corrupt[pos] = if corrupt[pos] == b'1' { b'2' } else { b'1' };
        assert!(matches!(NGramModel::load(corrupt.as_slice(), spec.clone()), Err(Error::Checksum)));

        let text = String::from_utf8(buf).unwrap();
        let body = text.replacen("twist-ngram\t1", "twist-ngram\t9", 1);
        let body = &body[..body.rfind("checksum\t").unwrap()];
        let resigned = format!("{body}checksum\t{}\n", hex::encode(Sha256::digest(body.as_bytes())));
        assert!(matches!(NGramModel::load(resigned.as_bytes(), spec), Err(Error::Version(v)) if v == "9"));
    }
}
