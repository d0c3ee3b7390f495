//! Session log ingestion and the preprocessing protocol: filtering,
//! temporal train/test split and prefix/next-item example generation.
//!
//! Item indices are 1-based and contiguous in `1..=n`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based contiguous item index.
pub type ItemIndex = u32;

/// Bijection between raw item ids and contiguous indices `1..=n`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    raw: Vec<String>,
    index: HashMap<String, ItemIndex>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary whose raw ids are the decimal indices `1..=n`.
    pub fn identity(n: usize) -> Self {
        let mut v = Self::new();
        for i in 1..=n {
            v.intern(&i.to_string());
        }
        v
    }

    /// Returns the index of `raw`, assigning the next one if unseen.
    pub fn intern(&mut self, raw: &str) -> ItemIndex {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        self.raw.push(raw.to_string());
        let i = self.raw.len() as ItemIndex;
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<ItemIndex> {
        self.index.get(raw).copied()
    }

    pub fn raw_id(&self, index: ItemIndex) -> Option<&str> {
        (index as usize)
            .checked_sub(1)
            .and_then(|i| self.raw.get(i))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// `(raw id, index)` pairs in index order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ItemIndex)> {
        self.raw
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i as ItemIndex + 1))
    }

    /// JSON object mapping raw id to index, keys in index order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        for (k, (raw, idx)) in self.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push_str(&serde_json::to_string(raw).expect("string serializes"));
            out.push(':');
            out.push_str(&idx.to_string());
        }
        out.push('}');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: HashMap<String, ItemIndex> = serde_json::from_str(text)?;
        let mut raw = vec![None; map.len()];
        for (k, &v) in &map {
            let slot = (v as usize)
                .checked_sub(1)
                .and_then(|i| raw.get_mut(i))
                .ok_or_else(|| Error::InvalidArgument(format!("vocab index {v} out of range")))?;
            if slot.is_some() {
                return Err(Error::InvalidArgument(format!("vocab index {v} assigned twice")));
            }
            *slot = Some(k.clone());
        }
        Ok(Self {
            raw: raw.into_iter().map(|r| r.expect("dense indices")).collect(),
            index: map,
        })
    }
}

/// One anonymous session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    /// End time of the session, epoch seconds.
    pub timestamp: i64,
    pub items: Vec<ItemIndex>,
}

/// Sessions over a shared item vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionCorpus {
    pub sessions: Vec<SessionRecord>,
    pub vocab: Vocab,
}

impl SessionCorpus {
    /// Corpus over the identity vocabulary `1..=n_items`; session `k` gets
    /// id `s{k}` and timestamp `k`.
    pub fn from_index_sessions(n_items: usize, sessions: Vec<Vec<ItemIndex>>) -> Result<Self> {
        let sessions = sessions
            .into_iter()
            .enumerate()
            .map(|(k, items)| SessionRecord {
                session_id: format!("s{k}"),
                timestamp: k as i64,
                items,
            })
            .collect();
        let corpus = Self {
            sessions,
            vocab: Vocab::identity(n_items),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn n_items(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn item_sequences(&self) -> impl Iterator<Item = &[ItemIndex]> {
        self.sessions.iter().map(|s| s.items.as_slice())
    }

    /// Occurrence count per item, indexed by `item - 1`.
    pub fn item_frequencies(&self) -> Vec<usize> {
        let mut freq = vec![0usize; self.n_items()];
        for &i in self.sessions.iter().flat_map(|s| &s.items) {
            freq[i as usize - 1] += 1;
        }
        freq
    }

    /// Checks index bounds and non-empty sessions.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_items() as ItemIndex;
        for s in &self.sessions {
            if s.items.is_empty() {
                return Err(Error::Invariant(format!("session `{}` is empty", s.session_id)));
            }
            if let Some(&bad) = s.items.iter().find(|&&i| i == 0 || i > n) {
                return Err(Error::Invariant(format!(
                    "session `{}` has item {bad} outside 1..={n}",
                    s.session_id
                )));
            }
        }
        Ok(())
    }
}

/// A prefix and the item that followed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub prefix: Vec<ItemIndex>,
    pub target: ItemIndex,
}

impl LabeledExample {
    /// Keeps only the most recent `max_len` prefix items.
    pub fn truncated(&self, max_len: usize) -> LabeledExample {
        let start = self.prefix.len().saturating_sub(max_len);
        LabeledExample {
            prefix: self.prefix[start..].to_vec(),
            target: self.target,
        }
    }
}

/// Supported raw input formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Tsv,
    Csv,
    Jsonl,
}

impl InputFormat {
    /// Guesses from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => InputFormat::Csv,
            Some("jsonl") | Some("json") => InputFormat::Jsonl,
            _ => InputFormat::Tsv,
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(InputFormat::Tsv),
            "csv" => Ok(InputFormat::Csv),
            "jsonl" => Ok(InputFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown input format `{other}`"))),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Tsv => "tsv",
            InputFormat::Csv => "csv",
            InputFormat::Jsonl => "jsonl",
        })
    }
}

/// Reads a session log from disk.
pub fn load_sessions(path: &Path, format: InputFormat) -> Result<SessionCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sessions(file, format)
}

struct Event {
    session: usize,
    item: String,
    timestamp: i64,
}

/// Parses a session log. Rows are grouped by session id (sessions in order
/// of first appearance), items ordered by timestamp with ties kept in input
/// order, and indices assigned in first-appearance order of the input.
pub fn parse_sessions(reader: impl Read, format: InputFormat) -> Result<SessionCorpus> {
    let mut session_ids: Vec<String> = Vec::new();
    let mut session_pos: HashMap<String, usize> = HashMap::new();
    let mut events: Vec<Event> = Vec::new();
    let mut session_of = |id: &str, ids: &mut Vec<String>| -> usize {
        *session_pos.entry(id.to_string()).or_insert_with(|| {
            ids.push(id.to_string());
            ids.len() - 1
        })
    };

    match format {
        InputFormat::Tsv | InputFormat::Csv => {
            let delimiter = if format == InputFormat::Tsv { b'\t' } else { b',' };
            let mut rdr = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .has_headers(false)
                .flexible(true)
                .from_reader(reader);
            let mut first = true;
            for record in rdr.records() {
                let record = record.map_err(|e| Error::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                if record.iter().all(|f| f.trim().is_empty()) {
                    continue;
                }
                if record.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        message: format!(
                            "expected session_id, item_id, timestamp; got {} column(s)",
                            record.len()
                        ),
                    });
                }
                let ts_field = record[2].trim();
                let timestamp = match parse_timestamp(ts_field) {
                    Some(t) => t,
                    // a non-numeric first row is a header
                    None if first => {
                        first = false;
                        continue;
                    }
                    None => {
                        return Err(Error::Parse {
                            line,
                            message: format!("invalid timestamp `{ts_field}`"),
                        })
                    }
                };
                first = false;
                let (sid, item) = (record[0].trim(), record[1].trim());
                if sid.is_empty() || item.is_empty() {
                    return Err(Error::Parse {
                        line,
                        message: "empty session or item id".into(),
                    });
                }
                let session = session_of(sid, &mut session_ids);
                events.push(Event {
                    session,
                    item: item.to_string(),
                    timestamp,
                });
            }
        }
        InputFormat::Jsonl => {
            for (k, line) in BufReader::new(reader).lines().enumerate() {
                let lineno = k + 1;
                let line = line.map_err(|e| Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let obj: JsonlSession = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
                let sid = json_id(&obj.session_id).ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: "session_id must be a string or number".into(),
                })?;
                let stamps: Vec<i64> = match (&obj.timestamps, obj.timestamp) {
                    (Some(ts), _) if ts.len() == obj.items.len() => ts.clone(),
                    (Some(_), _) => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: "timestamps and items differ in length".into(),
                        })
                    }
                    (None, Some(t)) => vec![t; obj.items.len()],
                    (None, None) => {
                        return Err(Error::Parse {
                            line: lineno,
                            message: "missing timestamp".into(),
                        })
                    }
                };
                let session = session_of(&sid, &mut session_ids);
                for (item, timestamp) in obj.items.iter().zip(stamps) {
                    let item = json_id(item).ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: "item ids must be strings or numbers".into(),
                    })?;
                    events.push(Event {
                        session,
                        item,
                        timestamp,
                    });
                }
            }
        }
    }

    if events.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut vocab = Vocab::new();
    let mut grouped: Vec<Vec<(i64, ItemIndex)>> = vec![Vec::new(); session_ids.len()];
    for e in &events {
        let idx = vocab.intern(&e.item);
        grouped[e.session].push((e.timestamp, idx));
    }
    let sessions = session_ids
        .into_iter()
        .zip(grouped)
        .map(|(session_id, mut rows)| {
            // stable sort keeps input order on ties
            rows.sort_by_key(|&(t, _)| t);
            SessionRecord {
                session_id,
                timestamp: rows.iter().map(|&(t, _)| t).max().unwrap_or(0),
                items: rows.into_iter().map(|(_, i)| i).collect(),
            }
        })
        .collect();
    Ok(SessionCorpus { sessions, vocab })
}

#[derive(Deserialize)]
struct JsonlSession {
    session_id: serde_json::Value,
    items: Vec<serde_json::Value>,
    #[serde(default)]
    timestamp: Option<i64>,
    #[serde(default)]
    timestamps: Option<Vec<i64>>,
}

fn json_id(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) if !s.is_empty() => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_timestamp(s: &str) -> Option<i64> {
    s.parse::<i64>().ok().or_else(|| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|v| v.floor() as i64)
    })
}

/// Re-indexes the vocabulary to the items still present, keeping their
/// relative order.
fn compact(sessions: Vec<SessionRecord>, vocab: &Vocab) -> SessionCorpus {
    let used: HashSet<ItemIndex> = sessions.iter().flat_map(|s| s.items.iter().copied()).collect();
    let mut remap = HashMap::new();
    let mut new_vocab = Vocab::new();
    for (raw, idx) in vocab.iter() {
        if used.contains(&idx) {
            remap.insert(idx, new_vocab.intern(raw));
        }
    }
    let sessions = sessions
        .into_iter()
        .map(|mut s| {
            s.items.iter_mut().for_each(|i| *i = remap[i]);
            s
        })
        .collect();
    SessionCorpus {
        sessions,
        vocab: new_vocab,
    }
}

/// Drops rare items and short sessions, repeating until neither rule
/// removes anything, then re-indexes the vocabulary contiguously.
pub fn filter_corpus(corpus: &SessionCorpus, min_len: usize, min_item_freq: usize) -> Result<SessionCorpus> {
    if min_len < 2 || min_item_freq < 1 {
        return Err(Error::InvalidArgument(format!(
            "need min_len >= 2 and min_item_freq >= 1, got {min_len} and {min_item_freq}"
        )));
    }
    let mut sessions = corpus.sessions.clone();
    loop {
        let mut freq: HashMap<ItemIndex, usize> = HashMap::new();
        for &i in sessions.iter().flat_map(|s| &s.items) {
            *freq.entry(i).or_default() += 1;
        }
        let before: usize = sessions.iter().map(|s| s.items.len()).sum();
        let count_before = sessions.len();
        for s in &mut sessions {
            s.items.retain(|i| freq[i] >= min_item_freq);
        }
        sessions.retain(|s| s.items.len() >= min_len);
        let after: usize = sessions.iter().map(|s| s.items.len()).sum();
        if after == before && sessions.len() == count_before {
            break;
        }
    }
    if sessions.is_empty() {
        return Err(Error::EmptyAfterFilter { min_len, min_item_freq });
    }
    Ok(compact(sessions, &corpus.vocab))
}

/// Sessions ending after `max_timestamp − holdout` become the test set.
///
/// Both returned corpora share the training vocabulary; test items unseen in
/// training are removed and test sessions left shorter than 2 are dropped.
pub fn split_train_test(corpus: &SessionCorpus, holdout: i64) -> Result<(SessionCorpus, SessionCorpus)> {
    if holdout <= 0 {
        return Err(Error::InvalidArgument("holdout must be positive".into()));
    }
    let max_ts = corpus
        .sessions
        .iter()
        .map(|s| s.timestamp)
        .max()
        .ok_or(Error::EmptyCorpus)?;
    let threshold = max_ts.saturating_sub(holdout);
    let (test, train): (Vec<_>, Vec<_>) = corpus.sessions.iter().cloned().partition(|s| s.timestamp > threshold);
    if train.is_empty() {
        return Err(Error::Split("no sessions left for training".into()));
    }
    let train = compact(train, &corpus.vocab);
    let test: Vec<SessionRecord> = test
        .into_iter()
        .filter_map(|mut s| {
            s.items = s
                .items
                .iter()
                .filter_map(|&i| corpus.vocab.raw_id(i).and_then(|raw| train.vocab.get(raw)))
                .collect();
            (s.items.len() >= 2).then_some(s)
        })
        .collect();
    if test.is_empty() {
        return Err(Error::Split("no test sessions survive the split".into()));
    }
    let test = SessionCorpus {
        sessions: test,
        vocab: train.vocab.clone(),
    };
    Ok((train, test))
}

/// Expands each session `[v1..vm]` into `([v1], v2), …, ([v1..v(m−1)], vm)`.
pub fn augment_sequences(corpus: &SessionCorpus) -> Vec<LabeledExample> {
    corpus
        .sessions
        .iter()
        .flat_map(|s| {
            (1..s.items.len()).map(move |k| LabeledExample {
                prefix: s.items[..k].to_vec(),
                target: s.items[k],
            })
        })
        .collect()
}

/// Only the full-session example (last item as target) of each session.
pub fn full_session_examples(corpus: &SessionCorpus) -> Vec<LabeledExample> {
    corpus
        .sessions
        .iter()
        .filter(|s| s.items.len() >= 2)
        .map(|s| {
            let m = s.items.len();
            LabeledExample {
                prefix: s.items[..m - 1].to_vec(),
                target: s.items[m - 1],
            }
        })
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// One `{"prefix":[..],"target":..}` object per line.
pub fn write_examples_jsonl(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    write_jsonl(path, examples)
}

pub fn read_examples_jsonl(path: &Path) -> Result<Vec<LabeledExample>> {
    read_jsonl(path)
}

/// Index-encoded sessions, one object per line.
pub fn write_sessions_jsonl(path: &Path, corpus: &SessionCorpus) -> Result<()> {
    write_jsonl(path, &corpus.sessions)
}

pub fn read_sessions_jsonl(path: &Path, vocab: Vocab) -> Result<SessionCorpus> {
    let corpus = SessionCorpus {
        sessions: read_jsonl(path)?,
        vocab,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn write_vocab_json(path: &Path, vocab: &Vocab) -> Result<()> {
    std::fs::write(path, vocab.to_json() + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_vocab_json(path: &Path) -> Result<Vocab> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocab::from_json(&text)
}

/// Summary counts in the shape of a dataset-statistics table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub sessions: usize,
    pub items: usize,
    pub average_length: f64,
}

pub fn corpus_stats(corpus: &SessionCorpus) -> CorpusStats {
    let total: usize = corpus.sessions.iter().map(|s| s.items.len()).sum();
    CorpusStats {
        sessions: corpus.len(),
        items: corpus.n_items(),
        average_length: if corpus.is_empty() {
            0.0
        } else {
            total as f64 / corpus.len() as f64
        },
    }
}

/// Item frequency histogram keyed by index.
pub fn frequency_table(corpus: &SessionCorpus) -> BTreeMap<ItemIndex, usize> {
    corpus
        .item_frequencies()
        .into_iter()
        .enumerate()
        .map(|(i, f)| (i as ItemIndex + 1, f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SessionCorpus> {
        parse_sessions(text.as_bytes(), InputFormat::Tsv)
    }

    #[test]
    fn orders_single_session_by_timestamp() {
        let c = parse("s1\tc\t3\ns1\ta\t1\ns1\tb\t2\n").unwrap();
        assert_eq!(c.sessions.len(), 1);
        let raw: Vec<&str> = c.sessions[0]
            .items
            .iter()
            .map(|&i| c.vocab.raw_id(i).unwrap())
            .collect();
        assert_eq!(raw, ["a", "b", "c"]);
        assert_eq!(c.sessions[0].timestamp, 3);
        // indices follow input order of first appearance
        assert_eq!(c.vocab.get("c"), Some(1));
    }

    #[test]
    fn timestamp_ties_keep_input_order() {
        let c = parse("s\tx\t5\ns\ty\t5\ns\tz\t4\n").unwrap();
        let raw: Vec<&str> = c.sessions[0]
            .items
            .iter()
            .map(|&i| c.vocab.raw_id(i).unwrap())
            .collect();
        assert_eq!(raw, ["z", "x", "y"]);
    }

    #[test]
    fn header_is_skipped_and_csv_supported() {
        let c = parse_sessions("session,item,time\n1,a,10\n1,b,11\n".as_bytes(), InputFormat::Csv).unwrap();
        assert_eq!(c.sessions[0].items, vec![1, 2]);
    }

    #[test]
    fn missing_timestamp_names_line() {
        let err = parse("s1\ta\t1\ns1\tb\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("s1\ta\t1\ns1\tb\tnope\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(parse(""), Err(Error::EmptyCorpus)));
        assert!(matches!(parse("sid\titem\tts\n"), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn jsonl_sessions() {
        let text = r#"{"session_id":"a","items":["x","y"],"timestamp":7}
{"session_id":2,"items":[5,"x"],"timestamps":[3,1]}
"#;
        let c = parse_sessions(text.as_bytes(), InputFormat::Jsonl).unwrap();
        assert_eq!(c.sessions.len(), 2);
        assert_eq!(c.sessions[1].session_id, "2");
        assert_eq!(
            c.sessions[1].items,
            vec![c.vocab.get("x").unwrap(), c.vocab.get("5").unwrap()]
        );
        assert_eq!(c.sessions[1].timestamp, 3);
        let err = parse_sessions(r#"{"session_id":"a","items":["x"]}"#.as_bytes(), InputFormat::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn filter_drops_length_one_sessions() {
        let c = SessionCorpus::from_index_sessions(2, vec![vec![1], vec![1, 2]]).unwrap();
        let f = filter_corpus(&c, 2, 1).unwrap();
        assert_eq!(f.sessions.len(), 1);
        assert_eq!(f.sessions[0].items, vec![1, 2]);
    }

    #[test]
    fn filter_identity_when_nothing_to_remove() {
        let sessions: Vec<Vec<u32>> = (0..5).map(|_| vec![1, 2, 3]).collect();
        let c = SessionCorpus::from_index_sessions(3, sessions).unwrap();
        assert_eq!(filter_corpus(&c, 2, 5).unwrap(), c);
    }

    #[test]
    fn filter_cascades_and_reindexes() {
        // item 3 is rare; removing it shortens session 2 below min_len,
        // which in turn makes item 4 rare.
        let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2], vec![1, 2], vec![3, 4], vec![4, 1, 2]]).unwrap();
        let f = filter_corpus(&c, 2, 2).unwrap();
        assert_eq!(f.n_items(), 2);
        assert!(f.sessions.iter().all(|s| s.items == vec![1, 2]));
        assert!(matches!(filter_corpus(&c, 2, 100), Err(Error::EmptyAfterFilter { .. })));
        assert!(filter_corpus(&c, 1, 1).is_err());
    }

    #[test]
    fn split_by_holdout() {
        let day = 86_400;
        let sessions: Vec<SessionRecord> = (1..=10)
            .map(|d| SessionRecord {
                session_id: format!("d{d}"),
                timestamp: d * day,
                items: vec![1, 2],
            })
            .collect();
        let c = SessionCorpus {
            sessions,
            vocab: Vocab::identity(2),
        };
        let (train, test) = split_train_test(&c, 2 * day).unwrap();
        assert_eq!(train.len(), 8);
        let ids: Vec<&str> = test.sessions.iter().map(|s| s.session_id.as_str()).collect();
        assert_eq!(ids, ["d9", "d10"]);
    }

    #[test]
    fn split_degenerate_cases() {
        let c = SessionCorpus::from_index_sessions(2, vec![vec![1, 2], vec![2, 1]]).unwrap();
        let mut same = c.clone();
        same.sessions.iter_mut().for_each(|s| s.timestamp = 5);
        assert!(matches!(split_train_test(&same, 10), Err(Error::Split(_))));
        assert!(split_train_test(&c, 0).is_err());
    }

    #[test]
    fn split_drops_unseen_test_items() {
        // item 3 only appears in the test session
        let c = SessionCorpus::from_index_sessions(3, vec![vec![1, 2], vec![2, 1], vec![3, 1]]).unwrap();
        let err = split_train_test(&c, 1).unwrap_err();
        assert!(matches!(err, Error::Split(_)));

        let c = SessionCorpus::from_index_sessions(3, vec![vec![1, 2], vec![3, 1, 2], vec![2, 3, 1]]).unwrap();
        let (train, test) = split_train_test(&c, 1).unwrap();
        assert_eq!(train.n_items(), 3);
        assert_eq!(test.sessions[0].items, vec![2, 3, 1]);
    }

    #[test]
    fn augment_counts_and_order() {
        let c = SessionCorpus::from_index_sessions(5, vec![vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 4, 5]]).unwrap();
        let ex = augment_sequences(&c);
        assert_eq!(ex.len(), 1 + 2 + 4);
        assert_eq!(
            ex[0],
            LabeledExample {
                prefix: vec![1],
                target: 2
            }
        );
        assert_eq!(
            ex[6],
            LabeledExample {
                prefix: vec![1, 2, 3, 4],
                target: 5
            }
        );
        assert_eq!(full_session_examples(&c).len(), 3);
    }

    #[test]
    fn truncation_keeps_recent_items() {
        let e = LabeledExample {
            prefix: vec![1, 2, 3, 4],
            target: 5,
        };
        assert_eq!(e.truncated(2).prefix, vec![3, 4]);
        assert_eq!(e.truncated(10).prefix, vec![1, 2, 3, 4]);
    }

    #[test]
    fn vocab_json_round_trip() {
        let mut v = Vocab::new();
        for raw in ["b", "a\"q", "7"] {
            v.intern(raw);
        }
        assert_eq!(v.to_json(), r#"{"b":1,"a\"q":2,"7":3}"#);
        assert_eq!(Vocab::from_json(&v.to_json()).unwrap(), v);
        assert!(Vocab::from_json(r#"{"a":1,"b":1}"#).is_err());
    }
}
