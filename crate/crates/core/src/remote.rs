//! Client for scorers hosted out of process, and a reference server loop.
//!
//! Messages are single-line JSON objects carrying `"v": 1` and a `"type"`.
//! See `docs/protocol.md` for the full message list.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scoring::{check_prefix, raw_step, Scorer, StepScores};
use crate::text::{GenerationOrder, ModelTextSpec, TokenId, TokenizationScheme, Vocabulary, BOS};

pub const PROTOCOL_VERSION: u64 = 1;

/// Gap between the lowest served score and the floor given to unlisted tokens.
pub const FLOOR_MARGIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Message {
    Hello {
        #[serde(default)]
        vocab_hash: Option<String>,
    },
    Welcome {
        /// Omitted (`null`) when the client already holds a vocabulary with
        /// the same hash.
        vocab: Option<Vec<String>>,
        vocab_hash: String,
        scheme: TokenizationScheme,
        order: GenerationOrder,
        embeddings: bool,
        #[serde(default)]
        embedding_dim: usize,
    },
    Score {
        seq: u64,
        #[serde(default)]
        session: String,
        source: String,
        prefix: Vec<TokenId>,
        top_n: usize,
        #[serde(default)]
        deterministic: bool,
    },
    Scores {
        seq: u64,
        /// `(token id, score)` best first; `null` is a forbidden token.
        entries: Vec<(TokenId, Option<f64>)>,
        /// Score of every token not listed in `entries`.
        floor: Option<f64>,
    },
    Embed {
        seq: u64,
        token: TokenId,
    },
    Embedding {
        seq: u64,
        vector: Vec<f64>,
    },
    Error {
        #[serde(default)]
        seq: Option<u64>,
        message: String,
    },
    Close,
}

impl Message {
    pub fn to_line(&self) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Value::Object(map) = &mut value {
            map.insert("v".into(), Value::from(PROTOCOL_VERSION));
        }
        let mut line = serde_json::to_string(&value)?;
        line.push('\n');
        Ok(line)
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(line)?;
        match value.get("v").and_then(Value::as_u64) {
            Some(PROTOCOL_VERSION) => {}
            Some(v) => return Err(Error::Protocol(format!("unsupported protocol version {v}"))),
            None => return Err(Error::Protocol("message has no protocol version".into())),
        }
        Ok(serde_json::from_value(value)?)
    }
}

fn write_message<W: Write + ?Sized>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(msg.to_line()?.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_message<R: BufRead + ?Sized>(r: &mut R) -> Result<Message> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Protocol("connection closed".into()));
    }
    Message::from_line(line.trim_end())
}

/// Sorted `(id, score)` list, best first, ties to the lower id, truncated to
/// `top_n`, and the floor for everything left out.
pub fn truncate_scores(scores: &[f64], top_n: usize) -> (Vec<(TokenId, Option<f64>)>, Option<f64>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_n);
    let entries: Vec<(TokenId, Option<f64>)> =
        order.iter().map(|&i| (i as TokenId, (scores[i] != f64::NEG_INFINITY).then_some(scores[i]))).collect();
    let floor = entries
        .iter()
        .filter_map(|e| e.1)
        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.min(s))))
        .map(|m| m - FLOOR_MARGIN);
    (entries, floor)
}

/// Rebuilds a full score vector from a (possibly truncated) response.
pub fn expand_scores(vocab_len: usize, entries: &[(TokenId, Option<f64>)], floor: Option<f64>) -> Result<Vec<f64>> {
    let mut scores = vec![floor.unwrap_or(f64::NEG_INFINITY); vocab_len];
    for &(id, s) in entries {
        let slot = scores
            .get_mut(id as usize)
            .ok_or_else(|| Error::Protocol(format!("token id {id} outside the vocabulary")))?;
        *slot = s.unwrap_or(f64::NEG_INFINITY);
    }
    if let Some(b) = scores.get_mut(BOS as usize) {
        *b = f64::NEG_INFINITY;
    }
    Ok(scores)
}

/// Serves `scorer` on one connection until the peer sends `close` or hangs
/// up. Malformed requests get an `error` record; the loop keeps going.
pub fn serve<R: BufRead, W: Write>(scorer: &dyn Scorer, reader: R, writer: W) -> Result<()> {
    serve_capped(scorer, reader, writer, None)
}

/// Like [`serve`], but never returns more than `max_top_n` entries per reply
/// whatever the request asks for.
pub fn serve_capped<R: BufRead, W: Write>(
    scorer: &dyn Scorer,
    mut reader: R,
    mut writer: W,
    max_top_n: Option<usize>,
) -> Result<()> {
    let spec = scorer.spec();
    let vocab_hash = spec.vocab().content_hash();
    let mut greeted = false;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Message::from_line(line.trim_end()) {
            Err(e) => Message::Error { seq: None, message: e.to_string() },
            Ok(Message::Close) => return Ok(()),
            Ok(Message::Hello { vocab_hash: client_hash }) => {
                greeted = true;
                let known = client_hash.as_deref() == Some(vocab_hash.as_str());
                let embedding_dim =
                    if scorer.has_embeddings() { scorer.embedding(BOS).map(|v| v.len()).unwrap_or(0) } else { 0 };
                Message::Welcome {
                    vocab: (!known).then(|| spec.vocab().entries().to_vec()),
                    vocab_hash: vocab_hash.clone(),
                    scheme: spec.scheme().clone(),
                    order: spec.order(),
                    embeddings: scorer.has_embeddings(),
                    embedding_dim,
                }
            }
            Ok(_) if !greeted => Message::Error { seq: None, message: "hello expected first".into() },
            Ok(Message::Score { seq, source, prefix, top_n, .. }) => {
                match check_prefix(spec, &prefix).and_then(|()| raw_step(scorer, &source, &prefix)) {
                    Ok(scores) => {
                        let top_n = max_top_n.map_or(top_n, |cap| top_n.min(cap));
                        let (entries, floor) = truncate_scores(scores.as_slice(), top_n);
                        Message::Scores { seq, entries, floor }
                    }
                    Err(e) => Message::Error { seq: Some(seq), message: e.to_string() },
                }
            }
            Ok(Message::Embed { seq, token }) => match scorer.embedding(token) {
                Ok(vector) => Message::Embedding { seq, vector },
                Err(e) => Message::Error { seq: Some(seq), message: e.to_string() },
            },
            Ok(other) => Message::Error { seq: None, message: format!("unexpected message {other:?}") },
        };
        write_message(&mut writer, &reply)?;
    }
}

#[derive(Clone, Debug, Default)]
pub struct RemoteOptions {
    /// Opaque id passed with every request.
    pub session: String,
    /// Scores requested per step; `None` asks for the whole vocabulary.
    pub top_n: Option<usize>,
    /// Vocabulary the client expects. The server must report the same hash.
    pub vocab: Option<Vocabulary>,
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_seq: u64,
}

impl Connection {
    fn call(&mut self, build: impl FnOnce(u64) -> Message) -> Result<Message> {
        let seq = self.next_seq;
        self.next_seq += 1;
        write_message(&mut self.writer, &build(seq))?;
        let reply = read_message(&mut self.reader)?;
        match &reply {
            Message::Error { message, .. } => Err(Error::Protocol(message.clone())),
            Message::Scores { seq: s, .. } | Message::Embedding { seq: s, .. } if *s != seq => {
                Err(Error::Protocol(format!("reply to request {s} while waiting for {seq}")))
            }
            _ => Ok(reply),
        }
    }
}

/// A scorer living behind the wire protocol. Requests on one client are
/// serialized; open one client per concurrent decode stream.
pub struct RemoteScorer {
    spec: Arc<ModelTextSpec>,
    embeddings: bool,
    top_n: usize,
    session: String,
    conn: Mutex<Connection>,
    child: Option<Child>,
}

impl RemoteScorer {
    pub fn connect_tcp<A: ToSocketAddrs>(addr: A, options: RemoteOptions) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::from_streams(reader, stream, options)
    }

    /// Starts `program` and talks to it over its stdin/stdout.
    pub fn spawn<S: AsRef<std::ffi::OsStr>>(program: &str, args: &[S], options: RemoteOptions) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        match Self::from_streams(BufReader::new(stdout), stdin, options) {
            Ok(mut s) => {
                s.child = Some(child);
                Ok(s)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    /// Performs the handshake over an already open byte stream.
    pub fn from_streams<R, W>(reader: R, writer: W, options: RemoteOptions) -> Result<Self>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut conn = Connection { reader: Box::new(reader), writer: Box::new(writer), next_seq: 0 };
        let expected = options.vocab.as_ref().map(Vocabulary::content_hash);
        let reply = conn.call(|_| Message::Hello { vocab_hash: expected.clone() })?;
        let Message::Welcome { vocab, vocab_hash, scheme, order, embeddings, .. } = reply else {
            return Err(Error::Protocol(format!("expected welcome, got {reply:?}")));
        };
        if let Some(expected) = expected {
            if expected != vocab_hash {
                return Err(Error::VocabMismatch { expected, found: vocab_hash });
            }
        }
        let vocab = match (vocab, options.vocab) {
            (Some(entries), _) => Vocabulary::from_entries(entries)?,
            (None, Some(v)) => v,
            (None, None) => return Err(Error::Protocol("server sent no vocabulary".into())),
        };
        if vocab.content_hash() != vocab_hash {
            return Err(Error::VocabMismatch { expected: vocab_hash, found: vocab.content_hash() });
        }
        let top_n = options.top_n.unwrap_or(vocab.len()).min(vocab.len());
        Ok(Self {
            spec: ModelTextSpec::new(vocab, scheme, order),
            embeddings,
            top_n,
            session: options.session,
            conn: Mutex::new(conn),
            child: None,
        })
    }

    pub fn top_n(&self) -> usize {
        self.top_n
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Scorer for RemoteScorer {
    fn spec(&self) -> &Arc<ModelTextSpec> {
        &self.spec
    }

    fn step_scores(&self, source: &str, prefix: &[TokenId]) -> Result<StepScores> {
        let reply = self.lock().call(|seq| Message::Score {
            seq,
            session: self.session.clone(),
            source: source.to_string(),
            prefix: prefix.to_vec(),
            top_n: self.top_n,
            deterministic: true,
        })?;
        let Message::Scores { entries, floor, .. } = reply else {
            return Err(Error::Protocol(format!("expected scores, got {reply:?}")));
        };
        Ok(StepScores(expand_scores(self.spec.vocab().len(), &entries, floor)?))
    }

    fn embedding(&self, token: TokenId) -> Result<Vec<f64>> {
        if !self.embeddings {
            return Err(Error::EmbeddingsUnavailable);
        }
        match self.lock().call(|seq| Message::Embed { seq, token })? {
            Message::Embedding { vector, .. } => Ok(vector),
            other => Err(Error::Protocol(format!("expected embedding, got {other:?}"))),
        }
    }

    fn has_embeddings(&self) -> bool {
        self.embeddings
    }
}

impl Drop for RemoteScorer {
    fn drop(&mut self) {
        {
            let conn = self.conn.get_mut().unwrap_or_else(|p| p.into_inner());
            let _ = write_message(&mut conn.writer, &Message::Close);
        }
        if let Some(child) = &mut self.child {
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::TableScorer;
    use std::io::Cursor;

    fn table() -> TableScorer {
        let spec = ModelTextSpec::new(
            Vocabulary::new(["a", "b"]).unwrap(),
            TokenizationScheme::whitespace(),
            GenerationOrder::RightToLeft,
        );
        TableScorer::new(spec, vec![0.0, -0.5, f64::NEG_INFINITY, -0.25, -3.0]).unwrap()
    }

    fn run(scorer: &dyn Scorer, requests: &[&str]) -> Vec<Message> {
        let input = requests.iter().map(|r| format!("{r}\n")).collect::<String>();
        let mut out = Vec::new();
        serve(scorer, Cursor::new(input), &mut out).unwrap();
        String::from_utf8(out).unwrap().lines().map(|l| Message::from_line(l).unwrap()).collect()
    }

    #[test]
    fn handshake_advertises_spec() {
        let t = table();
        let replies = run(&t, &[r#"{"v":1,"type":"hello"}"#]);
        let Message::Welcome { vocab, order, embeddings, .. } = &replies[0] else { panic!("{replies:?}") };
        assert_eq!(vocab.as_ref().unwrap().len(), 5);
        assert_eq!(*order, GenerationOrder::RightToLeft);
        assert!(!embeddings);
    }

    #[test]
    fn malformed_requests_do_not_end_the_session() {
        let t = table();
        let replies = run(
            &t,
            &[
                r#"{"v":1,"type":"hello"}"#,
                "not json",
                r#"{"v":2,"type":"close"}"#,
                r#"{"v":1,"type":"score","seq":7,"source":"","prefix":[1],"top_n":5}"#,
                r#"{"v":1,"type":"score","seq":8,"source":"","prefix":[],"top_n":2}"#,
            ],
        );
        assert_eq!(replies.len(), 5);
        assert!(matches!(replies[1], Message::Error { seq: None, .. }));
        assert!(matches!(replies[2], Message::Error { .. }));
        assert!(matches!(replies[3], Message::Error { seq: Some(7), .. }));
        assert_eq!(
            replies[4],
            Message::Scores { seq: 8, entries: vec![(3, Some(-0.25)), (1, Some(-0.5))], floor: Some(-1.5) }
        );
    }

    #[test]
    fn server_cap_wins_over_the_request() {
        let t = table();
        let mut out = Vec::new();
        let input = "{\"v\":1,\"type\":\"hello\"}\n{\"v\":1,\"type\":\"score\",\"seq\":0,\"source\":\"\",\"prefix\":[],\"top_n\":5}\n";
        serve_capped(&t, input.as_bytes(), &mut out, Some(1)).unwrap();
        let last = String::from_utf8(out).unwrap().lines().last().map(|l| Message::from_line(l).unwrap()).unwrap();
        assert_eq!(last, Message::Scores { seq: 0, entries: vec![(3, Some(-0.25))], floor: Some(-1.25) });
    }

    #[test]
    fn score_before_hello_is_refused() {
        let t = table();
        let replies = run(&t, &[r#"{"v":1,"type":"score","seq":0,"source":"","prefix":[],"top_n":5}"#]);
        assert!(matches!(replies[0], Message::Error { .. }));
    }

    #[test]
    fn truncation_and_expansion() {
        let scores = [f64::NEG_INFINITY, -0.5, f64::NEG_INFINITY, -0.25, -3.0];
        let (all, _) = truncate_scores(&scores, 5);
        assert_eq!(expand_scores(5, &all, None).unwrap(), scores);
        let (head, floor) = truncate_scores(&scores, 1);
        assert_eq!(floor, Some(-1.25));
        let full = expand_scores(5, &head, floor).unwrap();
        assert_eq!(full, [f64::NEG_INFINITY, -1.25, -1.25, -0.25, -1.25]);
        assert!(expand_scores(2, &head, floor).is_err());
    }

    #[test]
    fn wire_lines_carry_version() {
        let line = Message::Close.to_line().unwrap();
        assert_eq!(line, "{\"type\":\"close\",\"v\":1}\n");
        assert!(Message::from_line(r#"{"type":"close"}"#).is_err());
    }
}
