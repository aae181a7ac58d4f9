//! Note records, JSONL ingestion, tokenization and dataset splits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Present,
    Absent,
}

impl Label {
    pub const BOTH: [Label; 2] = [Label::Present, Label::Absent];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Present => "present",
            Label::Absent => "absent",
        }
    }

    /// 1.0 for present, 0.0 for absent.
    pub fn as_target(self) -> f64 {
        match self {
            Label::Present => 1.0,
            Label::Absent => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "present" => Ok(Label::Present),
            "absent" => Ok(Label::Absent),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// How an augmentation note was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Diversity,
    Random,
    Zeroshot,
    Realworld,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Diversity,
        Method::Random,
        Method::Zeroshot,
        Method::Realworld,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Diversity => "diversity",
            Method::Random => "random",
            Method::Zeroshot => "zeroshot",
            Method::Realworld => "realworld",
        }
    }

    /// Whether the method prompts with real exemplar notes.
    pub fn is_few_shot(self) -> bool {
        matches!(self, Method::Diversity | Method::Random)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// A single clinical-text record.
///
/// Fields not known to this type are kept in `extra` and written back in
/// their original order, so a load/save cycle is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Note {
    pub id: String,
    pub text: String,
    pub entity: String,
    #[serde(default)]
    pub label: Option<Label>,
    pub source: Source,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(skip)]
    pub token_count: usize,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Note {
    pub fn real(id: impl Into<String>, text: impl Into<String>, entity: impl Into<String>) -> Self {
        Note {
            id: id.into(),
            text: text.into(),
            entity: entity.into(),
            label: None,
            source: Source::Real,
            method: None,
            token_count: 0,
            extra: Map::new(),
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match (self.source, self.method) {
            (Source::Synthetic, None) => Err(format!("synthetic note {:?} has no method", self.id)),
            (Source::Real, Some(m)) if m != Method::Realworld => Err(format!(
                "real note {:?} carries generation method {m}",
                self.id
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TokenizerMode {
    /// Maximal runs of non-whitespace characters.
    #[default]
    Whitespace,
    /// A shell command that reads one text on stdin and prints its token count.
    Custom(String),
}

pub fn count_tokens(text: &str, mode: &TokenizerMode) -> Result<usize> {
    match mode {
        TokenizerMode::Whitespace => Ok(text.split_whitespace().count()),
        TokenizerMode::Custom(cmd) => count_tokens_external(text, cmd),
    }
}

fn count_tokens_external(text: &str, cmd: &str) -> Result<usize> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Tokenizer(format!("spawn {cmd:?}: {e}")))?;
    if let Some(mut stdin) = child.stdin.take() {
        stdin
            .write_all(text.as_bytes())
            .map_err(|e| Error::Tokenizer(format!("write to {cmd:?}: {e}")))?;
    }
    let out = child
        .wait_with_output()
        .map_err(|e| Error::Tokenizer(format!("wait on {cmd:?}: {e}")))?;
    if !out.status.success() {
        return Err(Error::Tokenizer(format!(
            "{cmd:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    stdout
        .trim()
        .parse()
        .map_err(|_| Error::Tokenizer(format!("{cmd:?} printed {:?}, not an integer", stdout.trim())))
}

/// An ordered collection of notes with unique ids.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    notes: Vec<Note>,
    index: HashMap<String, usize>,
    tokenizer: TokenizerMode,
}

impl Corpus {
    pub fn new(tokenizer: TokenizerMode) -> Self {
        Corpus {
            notes: Vec::new(),
            index: HashMap::new(),
            tokenizer,
        }
    }

    /// Builds a corpus, computing token counts and rejecting duplicate ids or
    /// empty texts.
    pub fn from_notes(notes: Vec<Note>, tokenizer: TokenizerMode) -> Result<Self> {
        let mut corpus = Corpus::new(tokenizer);
        for note in notes {
            corpus.push(note)?;
        }
        Ok(corpus)
    }

    pub fn push(&mut self, mut note: Note) -> Result<()> {
        if note.text.trim().is_empty() {
            return Err(Error::EmptyText(note.id));
        }
        if self.index.contains_key(&note.id) {
            return Err(Error::DuplicateId(note.id));
        }
        note.token_count = count_tokens(&note.text, &self.tokenizer)?;
        self.index.insert(note.id.clone(), self.notes.len());
        self.notes.push(note);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, tokenizer: TokenizerMode) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file), tokenizer).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read_jsonl<R: BufRead>(reader: R, tokenizer: TokenizerMode) -> Result<Self> {
        let mut corpus = Corpus::new(tokenizer);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let note: Note = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
            note.validate()
                .map_err(|message| Error::MalformedRecord {
                    line: line_no,
                    message,
                })?;
            corpus.push(note)?;
        }
        Ok(corpus)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_notes(path, &self.notes)
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn into_notes(self) -> Vec<Note> {
        self.notes
    }

    pub fn tokenizer(&self) -> &TokenizerMode {
        &self.tokenizer
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Note> {
        self.index.get(id).map(|&i| &self.notes[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Note> {
        self.notes.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.notes.iter().map(|n| n.id.as_str())
    }

    /// Notes at the given positions, in corpus order.
    fn select(&self, mut positions: Vec<usize>) -> Corpus {
        positions.sort_unstable();
        let notes = positions.into_iter().map(|i| self.notes[i].clone());
        self.rebuilt(notes)
    }

    fn rebuilt(&self, notes: impl Iterator<Item = Note>) -> Corpus {
        let mut out = Corpus::new(self.tokenizer.clone());
        for note in notes {
            out.index.insert(note.id.clone(), out.notes.len());
            out.notes.push(note);
        }
        out
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Note;
    type IntoIter = std::slice::Iter<'a, Note>;

    fn into_iter(self) -> Self::IntoIter {
        self.notes.iter()
    }
}

pub fn load_corpus(path: impl AsRef<Path>, tokenizer: TokenizerMode) -> Result<Corpus> {
    Corpus::load(path, tokenizer)
}

/// Writes notes as JSONL, one object per line.
pub fn write_notes<'a>(path: impl AsRef<Path>, notes: impl IntoIterator<Item = &'a Note>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for note in notes {
        serde_json::to_writer(&mut w, note)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inclusive token-count range injected into generation prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenWindow {
    pub low: usize,
    pub high: usize,
}

impl TokenWindow {
    pub fn new(low: usize, high: usize) -> Result<Self> {
        if low == 0 || low > high {
            return Err(Error::invalid(format!("invalid token window {low}:{high}")));
        }
        Ok(TokenWindow { low, high })
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.low..=self.high).contains(&n)
    }
}

impl fmt::Display for TokenWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.low, self.high)
    }
}

impl FromStr for TokenWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("token window {s:?} is not LOW:HIGH")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("token window {s:?} is not LOW:HIGH")))
        };
        TokenWindow::new(parse(lo)?, parse(hi)?)
    }
}

/// Linear-interpolation percentile at rank `(n-1)·p/100` of sorted values.
pub fn percentile(sorted: &[usize], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// The `p_low`..`p_high` percentile range of token counts in the corpus.
pub fn token_window(corpus: &Corpus, p_low: f64, p_high: f64) -> Result<TokenWindow> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(0.0..=100.0).contains(&p_low) || !(p_low..=100.0).contains(&p_high) {
        return Err(Error::invalid(format!("percentiles {p_low}, {p_high} out of order or range")));
    }
    let mut counts: Vec<usize> = corpus.iter().map(|n| n.token_count).collect();
    counts.sort_unstable();
    Ok(TokenWindow {
        low: round_half_up(percentile(&counts, p_low)),
        high: round_half_up(percentile(&counts, p_high)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub entity: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub working_n: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(entity: impl Into<String>, seed: u64) -> Self {
        SplitSpec {
            entity: entity.into(),
            n_pos: 100,
            n_neg: 100,
            working_n: 5000,
            seed,
        }
    }
}

/// Draws a held-out test set of `n_pos` present and `n_neg` absent notes for
/// the spec's entity. Returns `(test, remainder)`; together they partition the
/// input corpus and both keep corpus order.
pub fn split_test_set(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    let mut chosen = Vec::with_capacity(spec.n_pos + spec.n_neg);
    for (label, wanted) in [(Label::Present, spec.n_pos), (Label::Absent, spec.n_neg)] {
        let candidates: Vec<usize> = corpus
            .iter()
            .enumerate()
            .filter(|(_, n)| n.entity == spec.entity && n.label == Some(label))
            .map(|(i, _)| i)
            .collect();
        if candidates.len() < wanted {
            return Err(Error::Insufficient {
                what: format!("{} {label} test notes", spec.entity),
                needed: wanted,
                available: candidates.len(),
            });
        }
        let mut r = rng::child(spec.seed, label.as_str());
        chosen.extend(
            index::sample(&mut r, candidates.len(), wanted)
                .into_iter()
                .map(|k| candidates[k]),
        );
    }
    let taken: HashSet<usize> = chosen.iter().copied().collect();
    let rest = (0..corpus.len()).filter(|i| !taken.contains(i)).collect();
    Ok((corpus.select(chosen), corpus.select(rest)))
}

/// Uniform sample of `n` notes without replacement, in corpus order.
pub fn sample_working_set(remainder: &Corpus, n: usize, seed: u64) -> Result<Corpus> {
    if n > remainder.len() {
        return Err(Error::Insufficient {
            what: "working set".into(),
            needed: n,
            available: remainder.len(),
        });
    }
    let mut r = rng::child(seed, "working");
    let picked = index::sample(&mut r, remainder.len(), n).into_vec();
    Ok(remainder.select(picked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ws(text: &str) -> usize {
        count_tokens(text, &TokenizerMode::Whitespace).unwrap()
    }

    fn corpus_with_counts(counts: &[usize]) -> Corpus {
        let notes = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| Note::real(format!("n{i}"), vec!["w"; c.max(1)].join(" "), "e"))
            .collect();
        let mut c = Corpus::from_notes(notes, TokenizerMode::Whitespace).unwrap();
        for (note, &count) in c.notes.iter_mut().zip(counts) {
            note.token_count = count;
        }
        c
    }

    fn labeled(n_pos: usize, n_neg: usize) -> Corpus {
        let mut notes = Vec::new();
        for i in 0..n_pos {
            notes.push(Note::real(format!("p{i}"), "effusion seen", "effusion").with_label(Label::Present));
        }
        for i in 0..n_neg {
            notes.push(Note::real(format!("a{i}"), "no effusion", "effusion").with_label(Label::Absent));
        }
        Corpus::from_notes(notes, TokenizerMode::Whitespace).unwrap()
    }

    #[test]
    fn whitespace_token_counts() {
        assert_eq!(ws(""), 0);
        assert_eq!(ws("heart size is normal"), 4);
        assert_eq!(ws("  a  b "), 2);
        assert_eq!(ws("no pleural effusion ."), 4);
    }

    #[test]
    fn custom_tokenizer_command() {
        let mode = TokenizerMode::Custom("wc -c".into());
        assert_eq!(count_tokens("abcd", &mode).unwrap(), 4);
        let broken = TokenizerMode::Custom("exit 3".into());
        assert!(matches!(count_tokens("x", &broken), Err(Error::Tokenizer(_))));
        let garbage = TokenizerMode::Custom("echo many".into());
        assert!(matches!(count_tokens("x", &garbage), Err(Error::Tokenizer(_))));
    }

    #[test]
    fn load_preserves_order_and_counts() {
        let data = r#"{"id":"b","text":"no pleural effusion .","entity":"effusion","label":"absent","source":"real","method":null}
{"id":"a","text":"heart size is normal","entity":"effusion","label":null,"source":"real","method":null}
{"id":"c","text":"x","entity":"effusion","label":"present","source":"synthetic","method":"random"}
"#;
        let c = Corpus::read_jsonl(Cursor::new(data), TokenizerMode::Whitespace).unwrap();
        assert_eq!(c.ids().collect::<Vec<_>>(), ["b", "a", "c"]);
        assert_eq!(c.get("b").unwrap().token_count, 4);
        assert_eq!(c.get("c").unwrap().method, Some(Method::Random));
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let data = r#"{"id":"n1","text":"a","entity":"e","source":"real"}
{"id":"n1","text":"b","entity":"e","source":"real"}"#;
        let err = Corpus::read_jsonl(Cursor::new(data), TokenizerMode::Whitespace).unwrap_err();
        assert!(matches!(&err, Error::DuplicateId(id) if id == "n1"));
        assert!(err.to_string().contains("n1"));
    }

    #[test]
    fn load_reports_malformed_line_number() {
        let data = "{\"id\":\"a\",\"text\":\"t\",\"entity\":\"e\",\"source\":\"real\"}\n\n{not json}\n";
        match Corpus::read_jsonl(Cursor::new(data), TokenizerMode::Whitespace) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_rejects_empty_text_and_methodless_synthetic() {
        let empty = r#"{"id":"a","text":"  ","entity":"e","source":"real"}"#;
        assert!(matches!(
            Corpus::read_jsonl(Cursor::new(empty), TokenizerMode::Whitespace),
            Err(Error::EmptyText(_))
        ));
        let synth = r#"{"id":"a","text":"t","entity":"e","source":"synthetic"}"#;
        assert!(matches!(
            Corpus::read_jsonl(Cursor::new(synth), TokenizerMode::Whitespace),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip_is_byte_exact_with_unknown_fields() {
        let data = concat!(
            r#"{"id":"a","text":"x y","entity":"e","label":"present","source":"synthetic","method":"diversity","prompt_id":"p-1","score":0.25,"nested":{"z":1,"a":[1,2]}}"#,
            "\n",
            r#"{"id":"b","text":"ünïcode ✓","entity":"e","label":null,"source":"real","method":null}"#,
            "\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.jsonl");
        std::fs::write(&path, data).unwrap();
        let c = Corpus::load(&path, TokenizerMode::Whitespace).unwrap();
        let out = dir.path().join("out.jsonl");
        c.save(&out).unwrap();
        assert_eq!(std::fs::read_to_string(&out).unwrap(), data);
    }

    #[test]
    fn token_window_interpolates() {
        let w = token_window(&corpus_with_counts(&[10, 20, 30, 40, 50]), 25.0, 75.0).unwrap();
        assert_eq!(w, TokenWindow { low: 20, high: 40 });
        let w = token_window(&corpus_with_counts(&[7]), 10.0, 90.0).unwrap();
        assert_eq!(w, TokenWindow { low: 7, high: 7 });
        let w = token_window(&corpus_with_counts(&[0, 100]), 25.0, 75.0).unwrap();
        assert_eq!(w, TokenWindow { low: 25, high: 75 });
        // rank 0.5 between 1 and 2 -> 1.5 rounds up
        let w = token_window(&corpus_with_counts(&[1, 2]), 50.0, 50.0).unwrap();
        assert_eq!(w, TokenWindow { low: 2, high: 2 });
    }

    #[test]
    fn token_window_errors() {
        assert!(matches!(
            token_window(&Corpus::default(), 25.0, 75.0),
            Err(Error::EmptyCorpus)
        ));
        assert!(token_window(&corpus_with_counts(&[1]), 80.0, 20.0).is_err());
    }

    #[test]
    fn window_parse() {
        assert_eq!("114:192".parse::<TokenWindow>().unwrap(), TokenWindow { low: 114, high: 192 });
        assert!("192:114".parse::<TokenWindow>().is_err());
        assert!("auto".parse::<TokenWindow>().is_err());
    }

    #[test]
    fn split_partitions_corpus() {
        let c = labeled(300, 300);
        let mut spec = SplitSpec::new("effusion", 11);
        let (test, rest) = split_test_set(&c, &spec).unwrap();
        assert_eq!(test.len(), 200);
        assert_eq!(rest.len(), 400);
        assert_eq!(test.iter().filter(|n| n.label == Some(Label::Present)).count(), 100);
        assert!(test.ids().all(|id| !rest.contains(id)));

        let (again, _) = split_test_set(&c, &spec).unwrap();
        assert_eq!(test.ids().collect::<Vec<_>>(), again.ids().collect::<Vec<_>>());

        spec.n_pos = 0;
        spec.n_neg = 0;
        let (empty, all) = split_test_set(&c, &spec).unwrap();
        assert!(empty.is_empty());
        assert_eq!(all.len(), c.len());
    }

    #[test]
    fn split_reports_insufficient_class() {
        let c = labeled(5, 300);
        let spec = SplitSpec::new("effusion", 1);
        assert!(matches!(split_test_set(&c, &spec), Err(Error::Insufficient { available: 5, .. })));
    }

    #[test]
    fn working_set_sampling() {
        let c = labeled(50, 50);
        let all = sample_working_set(&c, 100, 3).unwrap();
        assert_eq!(all.len(), 100);
        let a = sample_working_set(&c, 30, 3).unwrap();
        let b = sample_working_set(&c, 30, 3).unwrap();
        assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
        assert_eq!(a.ids().collect::<HashSet<_>>().len(), 30);
        assert!(sample_working_set(&c, 101, 3).is_err());
    }

    proptest::proptest! {
        #[test]
        fn equal_percentiles_give_point_window(counts in proptest::collection::vec(0usize..500, 1..60), p in 0.0f64..=100.0) {
            let w = token_window(&corpus_with_counts(&counts), p, p).unwrap();
            proptest::prop_assert_eq!(w.low, w.high);
        }

        #[test]
        fn test_and_working_sets_are_disjoint(n_pos in 0usize..20, n_neg in 0usize..20, working in 0usize..40, seed: u64) {
            let c = labeled(30, 30);
            let spec = SplitSpec { entity: "effusion".into(), n_pos, n_neg, working_n: working, seed };
            let (test, rest) = split_test_set(&c, &spec).unwrap();
            let work = sample_working_set(&rest, working.min(rest.len()), seed).unwrap();
            proptest::prop_assert!(work.ids().all(|id| !test.contains(id)));
        }
    }
}
