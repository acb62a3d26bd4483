//! Corpus BLEU and ROUGE-L over surface text.
//!
//! BLEU tokenizes with a fixed 13a-style rule:
//!
//! * the symbols `! " # $ % & ( ) * + / : ; < = > ? @ [ \ ] ^ _ { | } ~` and
//!   the backtick are always split off;
//! * `.` and `,` are split off unless they sit between two digits;
//! * `-` is split off when it follows a digit;
//! * the apostrophe is never split.
//!
//! Orders with no hypothesis n-grams anywhere in the corpus are left out of
//! the geometric mean, so short outputs are scored on the orders they have.
//! ROUGE-L works on whitespace tokens with no stemming.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub hypothesis: String,
    pub references: Vec<String>,
}

impl EvalPair {
    pub fn new(hypothesis: impl Into<String>, references: Vec<String>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Config("an evaluation pair needs at least one reference".into()));
        }
        Ok(Self { hypothesis: hypothesis.into(), references })
    }

    pub fn single(hypothesis: impl Into<String>, reference: impl Into<String>) -> Self {
        Self { hypothesis: hypothesis.into(), references: vec![reference.into()] }
    }
}

fn always_split(c: char) -> bool {
    matches!(c, '!'..='&' | '('..='+' | '/' | ':'..='@' | '['..='`' | '{'..='~')
}

pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(char::is_ascii_digit);
        let split =
            always_split(c) || (matches!(c, '.' | ',') && !(prev_digit && next_digit)) || (c == '-' && prev_digit);
        if split {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level sufficient statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn collect(pairs: &[EvalPair], max_n: usize) -> Self {
        let mut stats = Self { matches: vec![0; max_n], totals: vec![0; max_n], ..Default::default() };
        for pair in pairs {
            let hyp = bleu_tokenize(&pair.hypothesis);
            let refs: Vec<Vec<String>> = pair.references.iter().map(|r| bleu_tokenize(r)).collect();
            stats.hyp_len += hyp.len();
            stats.ref_len += closest_ref_len(hyp.len(), &refs);
            for n in 1..=max_n {
                let hyp_counts = ngram_counts(&hyp, n);
                let mut max_ref: HashMap<&[String], usize> = HashMap::new();
                for r in &refs {
                    for (g, c) in ngram_counts(r, n) {
                        let e = max_ref.entry(g).or_insert(0);
                        *e = (*e).max(c);
                    }
                }
                for (g, c) in &hyp_counts {
                    stats.matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0));
                    stats.totals[n - 1] += c;
                }
            }
        }
        stats
    }

    pub fn score(&self, smoothing: bool) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for (&m, &t) in self.matches.iter().zip(&self.totals) {
            if t == 0 {
                continue;
            }
            orders += 1;
            let p = if m == 0 {
                if !smoothing {
                    return 0.0;
                }
                1.0 / (t as f64 + 1.0)
            } else {
                m as f64 / t as f64
            };
            log_sum += p.ln();
        }
        if orders == 0 {
            return 0.0;
        }
        let bp =
            if self.hyp_len >= self.ref_len { 1.0 } else { (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp() };
        100.0 * bp * (log_sum / orders as f64).exp()
    }
}

fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter().map(Vec::len).min_by_key(|&r| (r.abs_diff(hyp_len), r)).unwrap_or(0)
}

/// Corpus BLEU in `[0, 100]`. An empty list scores 0.
pub fn corpus_bleu(pairs: &[EvalPair], max_n: usize, smoothing: bool) -> f64 {
    BleuStats::collect(pairs, max_n.max(1)).score(smoothing)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn rouge_pair(hyp: &[&str], reference: &[&str]) -> RougeScore {
    if hyp.is_empty() && reference.is_empty() {
        return RougeScore { recall: 1.0, precision: 1.0, f1: 1.0 };
    }
    let lcs = lcs_len(hyp, reference);
    if lcs == 0 {
        return RougeScore::default();
    }
    let recall = lcs as f64 / reference.len() as f64;
    let precision = lcs as f64 / hyp.len() as f64;
    RougeScore { recall, precision, f1: 2.0 * precision * recall / (precision + recall) }
}

/// Corpus mean of per-pair ROUGE-L, each pair taking the reference with the
/// highest F1.
pub fn rouge_l(pairs: &[EvalPair]) -> RougeScore {
    if pairs.is_empty() {
        return RougeScore::default();
    }
    let mut total = RougeScore::default();
    for pair in pairs {
        let hyp: Vec<&str> = pair.hypothesis.split_whitespace().collect();
        let best = pair
            .references
            .iter()
            .map(|r| rouge_pair(&hyp, &r.split_whitespace().collect::<Vec<_>>()))
            .max_by(|a, b| a.f1.total_cmp(&b.f1))
            .unwrap_or_default();
        total.recall += best.recall;
        total.precision += best.precision;
        total.f1 += best.f1;
    }
    let n = pairs.len() as f64;
    RougeScore { recall: total.recall / n, precision: total.precision / n, f1: total.f1 / n }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Bleu,
    RougeL,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::RougeL => "rouge-l",
        }
    }

    /// BLEU on the 0..100 scale, ROUGE-L F1 on 0..1.
    pub fn evaluate(self, pairs: &[EvalPair]) -> f64 {
        match self {
            Metric::Bleu => corpus_bleu(pairs, 4, false),
            Metric::RougeL => rouge_l(pairs).f1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub value: f64,
}

pub const METRICS_HEADER: &str = "method\tdataset\tmetric\tvalue";

pub fn write_metrics_tsv<W: Write>(rows: &[MetricRow], mut w: W) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}\t{}\t{}\t{:.4}", r.method, r.dataset, r.metric, r.value)?;
    }
    Ok(())
}
