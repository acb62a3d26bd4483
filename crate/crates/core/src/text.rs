//! Text interfaces of generation models.
//!
//! A model sees text through a [`ModelTextSpec`]: its vocabulary, the
//! tokenization scheme that produces vocabulary entries from surface text and
//! the order in which it emits tokens. [`map_output`] converts a token sequence
//! produced under one spec into the equivalent sequence under another, which is
//! what lets two models with unrelated vocabularies guide each other.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token standing for a space under the character scheme.
pub const SPACE_TOKEN: &str = "\u{2581}";

pub const DEFAULT_MARKER: &str = "@@";

const RESERVED: [&str; 3] = [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Clitics split off (and re-attached) by the contraction-aware whitespace scheme.
const CLITICS: [&str; 7] = ["n't", "'s", "'re", "'ve", "'ll", "'d", "'m"];

/// Ordered token inventory. Ids 0, 1 and 2 are always BOS, EOS and UNK.
#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary").field("len", &self.entries.len()).finish()
    }
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens; the reserved symbols are
    /// prepended automatically.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut entries: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        entries.extend(tokens.into_iter().map(Into::into));
        Self::from_entries(entries)
    }

    /// Builds a vocabulary from a full entry list that already starts with
    /// the reserved symbols (the on-disk layout).
    pub fn from_entries(entries: Vec<String>) -> Result<Self> {
        if entries.len() < RESERVED.len() || entries.iter().zip(RESERVED).any(|(e, r)| e != r) {
            return Err(Error::Vocabulary(format!("first entries must be {BOS_TOKEN}, {EOS_TOKEN}, {UNK_TOKEN}")));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (id, tok) in entries.iter().enumerate() {
            if tok.is_empty() || tok.contains(['\n', '\r']) {
                return Err(Error::Vocabulary(format!("invalid token {tok:?} at {id}")));
            }
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::Vocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { entries, index })
    }

    /// Collects every token the scheme produces over `corpus`, most frequent
    /// first (ties in lexicographic order). With `max_size`, the content part is
    /// truncated and the remaining tokens fall back to UNK.
    pub fn build<S: AsRef<str>>(corpus: &[S], scheme: &TokenizationScheme, max_size: Option<usize>) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in corpus {
            for tok in tokenize(line.as_ref(), scheme) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        for r in RESERVED {
            counts.remove(r);
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(max) = max_size {
            ranked.truncate(max);
        }
        Self::new(ranked.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    /// Id for an output token. Unknown tokens and the BOS/EOS strings map to
    /// UNK so that encoding never yields control symbols.
    pub fn encode(&self, token: &str) -> TokenId {
        match self.index.get(token) {
            Some(&id) if id != BOS && id != EOS => id,
            _ => UNK,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            writeln!(w, "{e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let entries = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_entries(entries)
    }

    /// SHA-256 (hex) of the vocabulary file contents.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Byte-pair encoding: an ordered merge list plus the suffix that marks
/// non-final subwords.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "BpeRaw", into = "BpeRaw")]
pub struct Bpe {
    merges: Vec<(String, String)>,
    marker: String,
    ranks: HashMap<(String, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct BpeRaw {
    merges: Vec<(String, String)>,
    #[serde(default = "default_marker")]
    marker: String,
}

fn default_marker() -> String {
    DEFAULT_MARKER.to_string()
}

impl TryFrom<BpeRaw> for Bpe {
    type Error = Error;
    fn try_from(raw: BpeRaw) -> Result<Self> {
        Bpe::new(raw.merges, raw.marker)
    }
}

impl From<Bpe> for BpeRaw {
    fn from(b: Bpe) -> Self {
        BpeRaw { merges: b.merges, marker: b.marker }
    }
}

impl PartialEq for Bpe {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges && self.marker == other.marker
    }
}

impl Eq for Bpe {}

impl Bpe {
    pub fn new(merges: Vec<(String, String)>, marker: impl Into<String>) -> Result<Self> {
        let marker = marker.into();
        if marker.is_empty() || marker.contains(' ') {
            return Err(Error::Bpe(format!("invalid continuation marker {marker:?}")));
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if pair.0.is_empty() || pair.1.is_empty() {
                return Err(Error::Bpe(format!("empty symbol in merge {rank}")));
            }
            // a repeated pair can never fire a second time
            ranks.entry(pair.clone()).or_insert(rank);
        }
        Ok(Self { merges, marker, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    /// Splits one word into subwords. Each merge in list order is applied once
    /// to all of its left-to-right occurrences.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        let mut next_rank = 0;
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .filter(|&r| r >= next_rank)
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
            next_rank = rank + 1;
        }
        symbols
    }

    pub fn write_merges<W: Write>(&self, mut w: W) -> Result<()> {
        for (l, r) in &self.merges {
            writeln!(w, "{l}\t{r}")?;
        }
        Ok(())
    }

    pub fn read_merges<R: BufRead>(r: R, marker: impl Into<String>) -> Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let (l, rt) = line
                .split_once('\t')
                .ok_or_else(|| Error::Bpe(format!("merges line {}: expected left<TAB>right", n + 1)))?;
            merges.push((l.to_string(), rt.to_string()));
        }
        Self::new(merges, marker)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TokenizationScheme {
    /// Space-separated words. With `split_contractions`, English clitics
    /// ("n't", "'s", ...) become separate tokens and are re-attached on
    /// detokenization.
    Whitespace {
        #[serde(default)]
        split_contractions: bool,
    },
    /// One token per character, spaces written as [`SPACE_TOKEN`].
    Character,
    Bpe(Bpe),
}

impl TokenizationScheme {
    pub fn whitespace() -> Self {
        Self::Whitespace { split_contractions: false }
    }

    pub fn contractions() -> Self {
        Self::Whitespace { split_contractions: true }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenerationOrder {
    #[default]
    #[serde(rename = "l2r")]
    LeftToRight,
    #[serde(rename = "r2l")]
    RightToLeft,
}

/// Fingerprint of a [`ModelTextSpec`]; sequences carry it to record which
/// interface they are valid under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpecId(pub u64);

impl fmt::Display for SpecId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, PartialEq, Eq)]
pub struct ModelTextSpec {
    vocab: Vocabulary,
    scheme: TokenizationScheme,
    order: GenerationOrder,
    id: SpecId,
}

impl ModelTextSpec {
    pub fn new(vocab: Vocabulary, scheme: TokenizationScheme, order: GenerationOrder) -> Arc<Self> {
        let mut h = Sha256::new();
        h.update(vocab.content_hash().as_bytes());
        h.update(serde_json::to_vec(&scheme).expect("scheme serializes"));
        h.update(serde_json::to_vec(&order).expect("order serializes"));
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        let id = SpecId(u64::from_be_bytes(first));
        Arc::new(Self { vocab, scheme, order, id })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn scheme(&self) -> &TokenizationScheme {
        &self.scheme
    }

    pub fn order(&self) -> GenerationOrder {
        self.order
    }

    pub fn id(&self) -> SpecId {
        self.id
    }

    /// True when both specs share vocabulary and scheme (order may differ).
    pub fn same_interface(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.scheme == other.scheme
    }

    /// Tokenizes and encodes surface text into generation order (no EOS).
    pub fn encode_text(&self, text: &str) -> TokenSequence {
        let mut ids: Vec<TokenId> = tokenize(text, &self.scheme).iter().map(|t| self.vocab.encode(t)).collect();
        if self.order == GenerationOrder::RightToLeft {
            ids.reverse();
        }
        TokenSequence { ids, spec: self.id }
    }

    /// Token strings of a sequence in generation order, trailing EOS dropped.
    pub fn token_strings(&self, seq: &TokenSequence) -> Result<Vec<String>> {
        self.check(seq)?;
        Ok(seq.content().iter().map(|&id| self.vocab.token(id).unwrap_or(UNK_TOKEN).to_string()).collect())
    }

    /// Surface (reading-order, detokenized) text of a sequence.
    pub fn surface(&self, seq: &TokenSequence) -> Result<String> {
        let mut toks = self.token_strings(seq)?;
        if self.order == GenerationOrder::RightToLeft {
            toks.reverse();
        }
        detokenize(&toks, &self.scheme)
    }

    pub fn check(&self, seq: &TokenSequence) -> Result<()> {
        if seq.spec != self.id {
            return Err(Error::SpecMismatch { expected: self.id, found: seq.spec });
        }
        Ok(())
    }
}

/// Token ids valid under one [`ModelTextSpec`]. Never contains BOS; EOS may
/// only appear as the final element.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
    spec: SpecId,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, spec: &ModelTextSpec) -> Result<Self> {
        let n = ids.len();
        for (i, &id) in ids.iter().enumerate() {
            if id == BOS {
                return Err(Error::Sequence("BOS inside sequence".into()));
            }
            if id == EOS && i + 1 != n {
                return Err(Error::Sequence(format!("EOS at interior position {i}")));
            }
            if id as usize >= spec.vocab.len() {
                return Err(Error::Sequence(format!("id {id} outside vocabulary")));
            }
        }
        Ok(Self { ids, spec: spec.id })
    }

    /// Constructor for ids already known to be valid (search internals).
    pub(crate) fn from_raw(ids: Vec<TokenId>, spec: SpecId) -> Self {
        Self { ids, spec }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn spec_id(&self) -> SpecId {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.ids.last() == Some(&EOS)
    }

    /// Ids without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        match self.ids.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.ids,
        }
    }

    pub fn without_eos(&self) -> Self {
        Self { ids: self.content().to_vec(), spec: self.spec }
    }

    pub fn with_eos(&self) -> Self {
        let mut ids = self.content().to_vec();
        ids.push(EOS);
        Self { ids, spec: self.spec }
    }
}

pub fn tokenize(text: &str, scheme: &TokenizationScheme) -> Vec<String> {
    match scheme {
        TokenizationScheme::Whitespace { split_contractions } => {
            let words = text.split(' ').filter(|w| !w.is_empty());
            if *split_contractions {
                words.flat_map(split_clitic).collect()
            } else {
                words.map(str::to_string).collect()
            }
        }
        TokenizationScheme::Character => {
            text.chars().map(|c| if c == ' ' { SPACE_TOKEN.to_string() } else { c.to_string() }).collect()
        }
        TokenizationScheme::Bpe(bpe) => {
            let mut out = Vec::new();
            for word in text.split(' ').filter(|w| !w.is_empty()) {
                let pieces = bpe.segment(word);
                let last = pieces.len() - 1;
                for (i, p) in pieces.into_iter().enumerate() {
                    if i < last {
                        out.push(format!("{p}{}", bpe.marker));
                    } else {
                        out.push(p);
                    }
                }
            }
            out
        }
    }
}

fn split_clitic(word: &str) -> Vec<String> {
    for c in CLITICS {
        if word.len() > c.len() && word.ends_with(c) {
            let stem = &word[..word.len() - c.len()];
            return vec![stem.to_string(), c.to_string()];
        }
    }
    vec![word.to_string()]
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S], scheme: &TokenizationScheme) -> Result<String> {
    match scheme {
        TokenizationScheme::Whitespace { split_contractions } => {
            let mut out = String::new();
            for (i, t) in tokens.iter().enumerate() {
                let t = t.as_ref();
                if i > 0 && !(*split_contractions && CLITICS.contains(&t)) {
                    out.push(' ');
                }
                out.push_str(t);
            }
            Ok(out)
        }
        TokenizationScheme::Character => {
            Ok(tokens.iter().map(|t| if t.as_ref() == SPACE_TOKEN { " " } else { t.as_ref() }).collect())
        }
        TokenizationScheme::Bpe(bpe) => {
            let mut words: Vec<String> = Vec::new();
            let mut word = String::new();
            let mut open = false;
            for t in tokens {
                let t = t.as_ref();
                if let Some(stem) = t.strip_suffix(bpe.marker.as_str()) {
                    word.push_str(stem);
                    open = true;
                } else {
                    word.push_str(t);
                    words.push(std::mem::take(&mut word));
                    open = false;
                }
            }
            if open {
                return Err(Error::DanglingMarker);
            }
            Ok(words.join(" "))
        }
    }
}

/// Learns `num_merges` merges by repeatedly fusing the most frequent adjacent
/// symbol pair (ties: lexicographically smallest pair). Stops early once no
/// pair is left.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[S], num_merges: usize, marker: &str) -> Result<Bpe> {
    if corpus.is_empty() {
        return Err(Error::Bpe("empty corpus".into()));
    }
    let mut word_freq: BTreeMap<&str, u64> = BTreeMap::new();
    for (n, line) in corpus.iter().enumerate() {
        let line = line.as_ref();
        if line.contains(marker) {
            return Err(Error::Bpe(format!("corpus line {} contains the continuation marker {marker:?}", n + 1)));
        }
        for w in line.split(' ').filter(|w| !w.is_empty()) {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> =
        word_freq.into_iter().map(|(w, f)| (w.chars().map(String::from).collect(), f)).collect();

    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
            }
        }
        let Some((best, _)) = pairs.into_iter().max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0))) else {
            break;
        };
        let (left, right) = (best.0.to_string(), best.1.to_string());
        for (syms, _) in &mut words {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == left && syms[i + 1] == right {
                    syms[i] = format!("{left}{right}");
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        merges.push((left, right));
    }
    Bpe::new(merges, marker)
}

/// Converts a sequence produced under `from` into the corresponding sequence
/// under `to`. A trailing EOS is dropped; out-of-vocabulary target tokens
/// become UNK.
pub fn map_output(seq: &TokenSequence, from: &ModelTextSpec, to: &ModelTextSpec) -> Result<TokenSequence> {
    from.check(seq)?;
    if from.same_interface(to) {
        let mut ids = seq.content().to_vec();
        if from.order != to.order {
            ids.reverse();
        }
        return Ok(TokenSequence { ids, spec: to.id });
    }
    let text = from.surface(seq)?;
    Ok(to.encode_text(&text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    #[test]
    fn reserved_layout() {
        let v = Vocabulary::new(["a", "b"]).unwrap();
        assert_eq!(v.id(BOS_TOKEN), Some(BOS));
        assert_eq!(v.id(EOS_TOKEN), Some(EOS));
        assert_eq!(v.id(UNK_TOKEN), Some(UNK));
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.encode("zzz"), UNK);
        assert_eq!(v.encode(BOS_TOKEN), UNK);
        assert_eq!(v.encode(EOS_TOKEN), UNK);
    }

    #[test]
    fn duplicate_tokens_rejected() {
        assert!(Vocabulary::new(["a", "a"]).is_err());
        assert!(Vocabulary::new([EOS_TOKEN]).is_err());
        assert!(Vocabulary::from_entries(toks(&["a", "b", "c"])).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::new(["x", "y", "z"]).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let back = Vocabulary::read_from(buf.as_slice()).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("y"), Some(4));
        assert_eq!(v.content_hash(), back.content_hash());
    }

    #[test]
    fn learn_bpe_most_frequent_pair() {
        let bpe = learn_bpe(&["aa aa ab"], 1, DEFAULT_MARKER).unwrap();
        assert_eq!(bpe.merges(), &[pair("a", "a")]);
    }

    #[test]
    fn learn_bpe_zero_merges() {
        let bpe = learn_bpe(&["x"], 0, DEFAULT_MARKER).unwrap();
        assert!(bpe.merges().is_empty());
    }

    #[test]
    fn learn_bpe_stops_when_no_pairs_remain() {
        // after (a,b) every word is a single symbol
        let bpe = learn_bpe(&["ab ab", "ab"], 2, DEFAULT_MARKER).unwrap();
        assert_eq!(bpe.merges(), &[pair("a", "b")]);
    }

    #[test]
    fn learn_bpe_tie_break_is_lexicographic() {
        // (b,c) and (a,b) both occur once in "abc"; (c,d) once in "cd"
        let bpe = learn_bpe(&["abc cd"], 1, DEFAULT_MARKER).unwrap();
        assert_eq!(bpe.merges(), &[pair("a", "b")]);
    }

    #[test]
    fn learn_bpe_rejects_marker_in_corpus() {
        assert!(matches!(learn_bpe(&["fo@@o"], 3, DEFAULT_MARKER), Err(Error::Bpe(_))));
        assert!(learn_bpe::<&str>(&[], 3, DEFAULT_MARKER).is_err());
    }

    #[test]
    fn whitespace_tokenize() {
        let s = TokenizationScheme::whitespace();
        assert_eq!(tokenize("John does n't like Mary", &s), toks(&["John", "does", "n't", "like", "Mary"]));
        assert!(tokenize("", &s).is_empty());
    }

    #[test]
    fn contractions_split_and_join() {
        let s = TokenizationScheme::contractions();
        let t = tokenize("John doesn't like Mary's cat", &s);
        assert_eq!(t, toks(&["John", "does", "n't", "like", "Mary", "'s", "cat"]));
        assert_eq!(detokenize(&t, &s).unwrap(), "John doesn't like Mary's cat");
    }

    #[test]
    fn bpe_single_merge() {
        let bpe = Bpe::new(vec![pair("a", "b")], DEFAULT_MARKER).unwrap();
        assert_eq!(tokenize("ab", &TokenizationScheme::Bpe(bpe)), toks(&["ab"]));
    }

    #[test]
    fn bpe_marks_non_final_subwords() {
        let bpe = Bpe::new(vec![pair("a", "b")], "@").unwrap();
        let s = TokenizationScheme::Bpe(bpe);
        assert_eq!(tokenize("abc ab", &s), toks(&["ab@", "c", "ab"]));
    }

    #[test]
    fn bpe_merges_apply_in_list_order() {
        // (b,c) is listed first so "abc" becomes a + bc and (a,b) can no longer fire
        let bpe = Bpe::new(vec![pair("b", "c"), pair("a", "b")], "@").unwrap();
        assert_eq!(bpe.segment("abc"), toks(&["a", "bc"]));
        let bpe = Bpe::new(vec![pair("a", "b"), pair("b", "c")], "@").unwrap();
        assert_eq!(bpe.segment("abc"), toks(&["ab", "c"]));
        // a merge listed before the pair it builds on never fires
        let bpe = Bpe::new(vec![pair("ab", "c"), pair("a", "b")], "@").unwrap();
        assert_eq!(bpe.segment("abc"), toks(&["ab", "c"]));
    }

    #[test]
    fn bpe_detokenize_joins_marked_subwords() {
        let bpe = Bpe::new(vec![], "@").unwrap();
        let s = TokenizationScheme::Bpe(bpe);
        let t = toks(&["Jo@", "hn", "doesn't", "like", "Mar@", "y"]);
        assert_eq!(detokenize(&t, &s).unwrap(), "John doesn't like Mary");
        assert_eq!(detokenize::<String>(&[], &s).unwrap(), "");
        assert!(matches!(detokenize(&toks(&["a", "b@"]), &s), Err(Error::DanglingMarker)));
    }

    #[test]
    fn character_scheme_round_trip() {
        let s = TokenizationScheme::Character;
        let t = tokenize("ab c", &s);
        assert_eq!(t, toks(&["a", "b", SPACE_TOKEN, "c"]));
        assert_eq!(detokenize(&t, &s).unwrap(), "ab c");
    }

    #[test]
    fn merges_file_round_trip() {
        let bpe = learn_bpe(&["low lower lowest", "newer newest"], 6, DEFAULT_MARKER).unwrap();
        let mut buf = Vec::new();
        bpe.write_merges(&mut buf).unwrap();
        let back = Bpe::read_merges(buf.as_slice(), DEFAULT_MARKER).unwrap();
        assert_eq!(bpe, back);
        assert!(Bpe::read_merges("no tab here\n".as_bytes(), "@@").is_err());
    }

    fn ws_spec(words: &[&str], order: GenerationOrder) -> Arc<ModelTextSpec> {
        ModelTextSpec::new(Vocabulary::new(words.iter().copied()).unwrap(), TokenizationScheme::whitespace(), order)
    }

    #[test]
    fn map_output_identity_on_equal_specs() {
        let spec = ws_spec(&["a", "b", "c"], GenerationOrder::LeftToRight);
        let seq = TokenSequence::new(vec![3, 4, 5, EOS], &spec).unwrap();
        let mapped = map_output(&seq, &spec, &spec).unwrap();
        assert_eq!(mapped.ids(), &[3, 4, 5]);
    }

    #[test]
    fn map_output_reverses_for_r2l() {
        let l2r = ws_spec(&["a", "b", "c"], GenerationOrder::LeftToRight);
        let r2l = ws_spec(&["a", "b", "c"], GenerationOrder::RightToLeft);
        assert_ne!(l2r.id(), r2l.id());
        let seq = TokenSequence::new(vec![3, 4, 5], &l2r).unwrap();
        let mapped = map_output(&seq, &l2r, &r2l).unwrap();
        assert_eq!(r2l.token_strings(&mapped).unwrap(), toks(&["c", "b", "a"]));
        assert_eq!(r2l.surface(&mapped).unwrap(), "a b c");
        assert_eq!(map_output(&mapped, &r2l, &l2r).unwrap(), seq);
    }

    #[test]
    fn map_output_into_bpe_splits_oov_word() {
        let from = ws_spec(&["John", "doesn't"], GenerationOrder::LeftToRight);
        let merges = vec![pair("d", "o"), pair("do", "e"), pair("doe", "s"), pair("J", "o")];
        let scheme = TokenizationScheme::Bpe(Bpe::new(merges, "@@").unwrap());
        let vocab = Vocabulary::build(&["John doesn't"], &scheme, None).unwrap();
        let to = ModelTextSpec::new(vocab, scheme, GenerationOrder::LeftToRight);
        let seq = TokenSequence::new(vec![3, 4, EOS], &from).unwrap();
        let mapped = map_output(&seq, &from, &to).unwrap();
        // by hand: John -> Jo h n ; doesn't -> does n ' t
        assert_eq!(to.token_strings(&mapped).unwrap(), toks(&["Jo@@", "h@@", "n", "does@@", "n@@", "'@@", "t"]));
        assert!(!mapped.ids().contains(&UNK));
    }

    #[test]
    fn map_output_uses_unk_for_oov() {
        let from = ws_spec(&["a", "b"], GenerationOrder::LeftToRight);
        let to = ws_spec(&["b"], GenerationOrder::LeftToRight);
        let seq = TokenSequence::new(vec![3, 4], &from).unwrap();
        assert_eq!(map_output(&seq, &from, &to).unwrap().ids(), &[UNK, 3]);
    }

    #[test]
    fn map_output_rejects_foreign_sequence() {
        let a = ws_spec(&["a"], GenerationOrder::LeftToRight);
        let b = ws_spec(&["b"], GenerationOrder::LeftToRight);
        let seq = TokenSequence::new(vec![3], &a).unwrap();
        assert!(matches!(map_output(&seq, &b, &a), Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn sequence_invariants() {
        let spec = ws_spec(&["a"], GenerationOrder::LeftToRight);
        assert!(TokenSequence::new(vec![BOS, 3], &spec).is_err());
        assert!(TokenSequence::new(vec![EOS, 3], &spec).is_err());
        assert!(TokenSequence::new(vec![9], &spec).is_err());
        let s = TokenSequence::new(vec![3, EOS], &spec).unwrap();
        assert!(s.is_finished());
        assert_eq!(s.content(), &[3]);
        assert_eq!(s.without_eos().with_eos(), s);
    }

    #[test]
    fn scheme_serde_round_trip() {
        let bpe = Bpe::new(vec![pair("a", "b")], "@").unwrap();
        for s in [TokenizationScheme::whitespace(), TokenizationScheme::Character, TokenizationScheme::Bpe(bpe)] {
            let json = serde_json::to_string(&s).unwrap();
            let back: TokenizationScheme = serde_json::from_str(&json).unwrap();
            assert_eq!(s, back);
        }
    }
}
