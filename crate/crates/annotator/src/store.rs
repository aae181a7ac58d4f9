//! Sessions, their append-only event logs and replay.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use divsynth_core::corpus::{Label, Note, Source};
use divsynth_core::label::{LabelOrigin, LabelResult};
use divsynth_core::metrics::{turing_report, TuringReport};
use divsynth_core::rng;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("session {0:?} is complete")]
    Closed(String),
    #[error("choice {choice:?} is not valid for a {kind} session")]
    BadChoice { kind: SessionKind, choice: Choice },
    #[error("{what}: requested {requested}, only {available} available")]
    Insufficient {
        what: String,
        requested: usize,
        available: usize,
    },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("event log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

pub type StoreResult<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionKind {
    Turing,
    Labeling,
}

impl std::fmt::Display for SessionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionKind::Turing => "turing",
            SessionKind::Labeling => "labeling",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Real,
    Synthetic,
    Present,
    Absent,
}

impl Choice {
    fn valid_for(self, kind: SessionKind) -> bool {
        match kind {
            SessionKind::Turing => matches!(self, Choice::Real | Choice::Synthetic),
            SessionKind::Labeling => matches!(self, Choice::Present | Choice::Absent),
        }
    }

    fn source(self) -> Option<Source> {
        match self {
            Choice::Real => Some(Source::Real),
            Choice::Synthetic => Some(Source::Synthetic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub note_id: String,
    pub text: String,
    /// Real or synthetic for Turing items; absent for labeling items.
    pub hidden_truth: Option<Choice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub choice: Choice,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Open,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub kind: SessionKind,
    pub entity: String,
    pub items: Vec<Item>,
    pub judgments: BTreeMap<String, Judgment>,
    pub created_at: u64,
    pub n_synth: usize,
    pub n_real: usize,
    pub seed: u64,
    /// Judgment events applied, resubmissions included.
    pub events: usize,
}

impl Session {
    pub fn status(&self) -> Status {
        if self.judgments.len() == self.items.len() {
            Status::Complete
        } else {
            Status::Open
        }
    }

    pub fn remaining(&self) -> usize {
        self.items.len() - self.judgments.len()
    }

    fn item(&self, item_id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.item_id == item_id)
    }
}

/// One line of `{id}.events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum Event {
    Created { session: Session },
    Judgment(JudgmentEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentEvent {
    pub session_id: String,
    pub item_id: String,
    pub choice: Choice,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub kind: SessionKind,
    pub entity: String,
    #[serde(default)]
    pub n_synth: Option<usize>,
    #[serde(default)]
    pub n_real: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

/// Notes available to sessions. Turing sessions draw from `synthetic` and
/// `real`; labeling sessions draw from `label_queue`. All are filtered by
/// entity.
#[derive(Debug, Clone, Default)]
pub struct NotePool {
    pub synthetic: Vec<Note>,
    pub real: Vec<Note>,
    pub label_queue: Vec<Note>,
}

/// What the client sees for the next unjudged item. No other fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NextItem {
    pub item_id: String,
    pub text: String,
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub kind: SessionKind,
    pub entity: String,
    pub status: Status,
    pub judged: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub entity: String,
    pub complete: bool,
    /// No real notes were mixed in, so the real-class figures are empty.
    pub all_synthetic: bool,
    pub report: TuringReport,
}

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

pub const DEFAULT_N_SYNTH: usize = 50;
pub const DEFAULT_N_REAL: usize = 50;

/// Session registry backed by `{dir}/{id}.events.jsonl`. Each session has
/// its own lock, so writes to one session serialize while distinct sessions
/// proceed independently.
pub struct Store {
    dir: PathBuf,
    pool: NotePool,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    clock: Clock,
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.events.jsonl"))
}

fn apply(session: &mut Session, ev: &JudgmentEvent) -> StoreResult<()> {
    if session.item(&ev.item_id).is_none() {
        return Err(StoreError::UnknownItem(ev.item_id.clone()));
    }
    session.judgments.insert(
        ev.item_id.clone(),
        Judgment { choice: ev.choice, timestamp: ev.timestamp },
    );
    session.events += 1;
    Ok(())
}

/// Rebuilds a session from its log. A torn final line (a crash mid-write)
/// is ignored; corruption anywhere else is an error. Also returns the byte
/// length of the intact prefix.
pub fn replay(path: &Path) -> StoreResult<(Session, u64)> {
    let err = |message: String| StoreError::Log { path: path.to_path_buf(), message };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut session: Option<Session> = None;
    let mut intact = 0u64;
    for (i, line) in lines.iter().enumerate() {
        let is_last = i + 1 == lines.len();
        if line.trim().is_empty() {
            intact += line.len() as u64;
            continue;
        }
        let event: Event = match serde_json::from_str(line) {
            Ok(e) if line.ends_with('\n') || !is_last => e,
            Ok(_) | Err(_) if is_last => {
                log::warn!("{}: ignoring torn final line", path.display());
                break;
            }
            Err(e) => return Err(err(format!("line {}: {e}", i + 1))),
            Ok(_) => unreachable!(),
        };
        match (event, session.as_mut()) {
            (Event::Created { session: s }, None) => session = Some(s),
            (Event::Judgment(ev), Some(s)) => apply(s, &ev).map_err(|e| err(format!("line {}: {e}", i + 1)))?,
            (Event::Created { .. }, Some(_)) => return Err(err(format!("line {}: second created event", i + 1))),
            (Event::Judgment(_), None) => return Err(err("judgment before created event".into())),
        }
        intact += line.len() as u64;
    }
    session.map(|s| (s, intact)).ok_or_else(|| err("no created event".into()))
}

impl Store {
    /// Opens `dir`, replaying every event log found there.
    pub fn open(dir: impl Into<PathBuf>, pool: NotePool, clock: Clock) -> StoreResult<Self> {
        let dir = dir.into();
        let io = |e: std::io::Error| StoreError::Log { path: dir.clone(), message: e.to_string() };
        std::fs::create_dir_all(&dir).map_err(io)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".events.jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            let (s, intact) = replay(&p)?;
            let len = std::fs::metadata(&p).map_err(io)?.len();
            if intact < len {
                // drop the torn tail so later appends start on a fresh line
                OpenOptions::new().write(true).open(&p).and_then(|f| f.set_len(intact)).map_err(io)?;
            }
            sessions.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
        }
        Ok(Store { dir, pool, sessions: RwLock::new(sessions), clock })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(&self, id: &str, event: &Event) -> StoreResult<()> {
        let path = log_path(&self.dir, id);
        let err = |e: std::io::Error| StoreError::Log { path: path.clone(), message: e.to_string() };
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        f.write_all(line.as_bytes()).map_err(err)?;
        f.sync_data().map_err(err)
    }

    fn get(&self, id: &str) -> StoreResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))
    }

    pub fn session(&self, id: &str) -> StoreResult<Session> {
        Ok(self.get(id)?.lock().unwrap().clone())
    }

    fn draw(notes: &[Note], entity: &str, n: usize, seed: u64, label: &str, what: &str) -> StoreResult<Vec<Note>> {
        let eligible: Vec<&Note> = notes.iter().filter(|n| n.entity == entity).collect();
        if n > eligible.len() {
            return Err(StoreError::Insufficient {
                what: what.to_string(),
                requested: n,
                available: eligible.len(),
            });
        }
        let mut r = rng::child(seed, label);
        let mut picked: Vec<usize> = index::sample(&mut r, eligible.len(), n).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| eligible[i].clone()).collect())
    }

    /// Samples, shuffles and persists a new session. Item ids are opaque and
    /// assigned after shuffling, so neither id nor position reveals the truth.
    pub fn create(&self, req: &CreateRequest) -> StoreResult<Session> {
        if req.entity.trim().is_empty() {
            return Err(StoreError::Invalid("entity is empty".into()));
        }
        let (mut notes, n_synth, n_real): (Vec<(Note, Option<Choice>)>, usize, usize) = match req.kind {
            SessionKind::Turing => {
                let n_synth = req.n_synth.unwrap_or(DEFAULT_N_SYNTH);
                let n_real = req.n_real.unwrap_or(DEFAULT_N_REAL);
                if n_synth + n_real == 0 {
                    return Err(StoreError::Invalid("a session needs at least one item".into()));
                }
                let s = Self::draw(&self.pool.synthetic, &req.entity, n_synth, req.seed, "turing-synthetic", "synthetic notes")?;
                let r = Self::draw(&self.pool.real, &req.entity, n_real, req.seed, "turing-real", "real notes")?;
                let notes = s
                    .into_iter()
                    .map(|n| (n, Some(Choice::Synthetic)))
                    .chain(r.into_iter().map(|n| (n, Some(Choice::Real))))
                    .collect();
                (notes, n_synth, n_real)
            }
            SessionKind::Labeling => {
                let available = self.pool.label_queue.iter().filter(|n| n.entity == req.entity).count();
                let n = req.n_real.unwrap_or(available);
                if n == 0 {
                    return Err(StoreError::Insufficient {
                        what: "notes to label".into(),
                        requested: 1,
                        available: 0,
                    });
                }
                let notes = Self::draw(&self.pool.label_queue, &req.entity, n, req.seed, "labeling", "notes to label")?;
                (notes.into_iter().map(|n| (n, None)).collect(), 0, n)
            }
        };
        notes.shuffle(&mut rng::child(req.seed, "session-order"));

        let mut sessions = self.sessions.write().unwrap();
        let mut nonce = sessions.len() as u64;
        let session_id = loop {
            let key = format!("{}|{}|{}|{}|{}|{}", req.kind, req.entity, req.seed, n_synth, n_real, nonce);
            let id = format!("s{:016x}", rng::child_seed(req.seed, &key));
            if !sessions.contains_key(&id) && !log_path(&self.dir, &id).exists() {
                break id;
            }
            nonce += 1;
        };
        let items = notes
            .into_iter()
            .enumerate()
            .map(|(i, (note, truth))| Item {
                item_id: format!("{session_id}-{:03}", i + 1),
                note_id: note.id,
                text: note.text,
                hidden_truth: truth,
            })
            .collect();
        let session = Session {
            session_id: session_id.clone(),
            kind: req.kind,
            entity: req.entity.clone(),
            items,
            judgments: BTreeMap::new(),
            created_at: (self.clock)(),
            n_synth,
            n_real,
            seed: req.seed,
            events: 0,
        };
        self.append(&session_id, &Event::Created { session: session.clone() })?;
        sessions.insert(session_id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    /// The first unjudged item in presentation order, or `None` when every
    /// item has a judgment.
    pub fn next_item(&self, id: &str) -> StoreResult<Option<NextItem>> {
        let s = self.get(id)?;
        let s = s.lock().unwrap();
        Ok(s.items
            .iter()
            .enumerate()
            .find(|(_, it)| !s.judgments.contains_key(&it.item_id))
            .map(|(i, it)| NextItem {
                item_id: it.item_id.clone(),
                text: it.text.clone(),
                position: i + 1,
                total: s.items.len(),
            }))
    }

    /// Persists the judgment, then applies it. Returns the remaining count.
    pub fn submit(&self, id: &str, item_id: &str, choice: Choice) -> StoreResult<usize> {
        let s = self.get(id)?;
        let mut s = s.lock().unwrap();
        if s.status() == Status::Complete {
            return Err(StoreError::Closed(id.to_string()));
        }
        if s.item(item_id).is_none() {
            return Err(StoreError::UnknownItem(item_id.to_string()));
        }
        if !choice.valid_for(s.kind) {
            return Err(StoreError::BadChoice { kind: s.kind, choice });
        }
        let ev = JudgmentEvent {
            session_id: id.to_string(),
            item_id: item_id.to_string(),
            choice,
            timestamp: (self.clock)(),
        };
        self.append(id, &Event::Judgment(ev.clone()))?;
        apply(&mut s, &ev)?;
        Ok(s.remaining())
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let sessions = self.sessions.read().unwrap();
        let mut out: Vec<SessionSummary> = sessions
            .values()
            .map(|s| {
                let s = s.lock().unwrap();
                SessionSummary {
                    session_id: s.session_id.clone(),
                    kind: s.kind,
                    entity: s.entity.clone(),
                    status: s.status(),
                    judged: s.judgments.len(),
                    total: s.items.len(),
                }
            })
            .collect();
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    /// Turing report over the items judged so far; `complete` is false for a
    /// partial session.
    pub fn turing_report(&self, id: &str) -> StoreResult<SessionReport> {
        let s = self.session(id)?;
        if s.kind != SessionKind::Turing {
            return Err(StoreError::Invalid(format!("session {id:?} is a labeling session")));
        }
        let pairs: Vec<(Source, Source)> = s
            .items
            .iter()
            .filter_map(|it| {
                let j = s.judgments.get(&it.item_id)?;
                Some((it.hidden_truth?.source()?, j.choice.source()?))
            })
            .collect();
        let report = turing_report(&pairs);
        Ok(SessionReport {
            session_id: s.session_id.clone(),
            entity: s.entity.clone(),
            complete: s.status() == Status::Complete,
            all_synthetic: s.n_real == 0,
            report,
        })
    }

    pub fn labeling_export(&self, id: &str) -> StoreResult<Vec<LabelResult>> {
        let s = self.session(id)?;
        if s.kind != SessionKind::Labeling {
            return Err(StoreError::Invalid(format!("session {id:?} is a turing session")));
        }
        Ok(s.items
            .iter()
            .filter_map(|it| {
                let label = match s.judgments.get(&it.item_id)?.choice {
                    Choice::Present => Label::Present,
                    Choice::Absent => Label::Absent,
                    _ => return None,
                };
                Some(LabelResult {
                    note_id: it.note_id.clone(),
                    entity: s.entity.clone(),
                    label,
                    origin: LabelOrigin::Human,
                    raw_response: None,
                })
            })
            .collect())
    }
}
