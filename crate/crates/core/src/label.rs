//! Present/absent labels for exemplar notes from an LLM, a file, or a human.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatModel, Sampling};
use crate::corpus::{Label, Note};
use crate::error::{Error, Result};
use crate::par::parallel_map;
use crate::templates::TemplateStore;

/// Where a label came from. Later variants take precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelOrigin {
    Llm,
    File,
    Human,
}

impl fmt::Display for LabelOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelOrigin::Llm => "llm",
            LabelOrigin::File => "file",
            LabelOrigin::Human => "human",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelResult {
    pub note_id: String,
    pub entity: String,
    pub label: Label,
    pub origin: LabelOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

/// Reads a one-word PRESENT/ABSENT answer, ignoring case and any surrounding
/// whitespace or punctuation.
pub fn parse_label_response(response: &str) -> Option<Label> {
    let word = response.trim().trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    word.to_ascii_lowercase().parse().ok()
}

#[derive(Clone)]
pub struct LlmLabeler<'a> {
    pub chat: &'a dyn ChatModel,
    pub templates: &'a TemplateStore,
    pub template_id: String,
    /// Re-asks after the first unparseable answer.
    pub retries: u32,
    pub sampling: Sampling,
}

impl<'a> LlmLabeler<'a> {
    pub fn new(chat: &'a dyn ChatModel, templates: &'a TemplateStore) -> Self {
        LlmLabeler {
            chat,
            templates,
            template_id: crate::templates::LABEL_DEFAULT.into(),
            retries: 2,
            sampling: Sampling { temperature: 0.0, max_tokens: 5 },
        }
    }

    pub fn label(&self, note: &Note, entity: &str) -> Result<LabelResult> {
        let template = self.templates.get(&self.template_id)?;
        let messages = template.render(&[("entity", entity), ("text", &note.text)])?;
        let attempts = self.retries as usize + 1;
        for attempt in 1..=attempts {
            let completion = self.chat.complete(&messages, &self.sampling)?;
            if let Some(label) = parse_label_response(&completion.content) {
                return Ok(LabelResult {
                    note_id: note.id.clone(),
                    entity: entity.to_string(),
                    label,
                    origin: LabelOrigin::Llm,
                    raw_response: Some(completion.content),
                });
            }
            log::debug!("note {}: unparseable label answer on attempt {attempt}", note.id);
        }
        Err(Error::Unparseable {
            id: note.id.clone(),
            attempts,
        })
    }

    /// Labels every note with up to `concurrency` requests in flight. Results
    /// are in input order; a failure for one note does not stop the others.
    pub fn label_all(&self, notes: &[Note], entity: &str, concurrency: usize) -> Vec<Result<LabelResult>> {
        parallel_map(notes, concurrency, |n| self.label(n, entity))
    }
}

#[derive(Deserialize)]
struct LabelRow {
    note_id: String,
    entity: String,
    label: String,
}

/// Label file rows with a count of overridden duplicates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedLabels {
    pub results: Vec<LabelResult>,
    /// `(note_id, entity)` keys that appeared more than once.
    pub duplicates: Vec<(String, String)>,
}

pub fn read_labels<R: BufRead>(reader: R, origin: LabelOrigin) -> Result<LoadedLabels> {
    let mut out = LoadedLabels::default();
    let mut position: HashMap<(String, String), usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LabelRow = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        let label: Label = row.label.parse().map_err(|_| Error::MalformedRecord {
            line: line_no,
            message: format!("unknown label {:?}", row.label),
        })?;
        let result = LabelResult {
            note_id: row.note_id,
            entity: row.entity,
            label,
            origin,
            raw_response: None,
        };
        let key = (result.note_id.clone(), result.entity.clone());
        match position.get(&key) {
            Some(&p) => {
                log::warn!("line {line_no}: duplicate label for {:?}/{:?}; later row wins", key.0, key.1);
                out.results[p] = result;
                out.duplicates.push(key);
            }
            None => {
                position.insert(key, out.results.len());
                out.results.push(result);
            }
        }
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabelResult>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_labels(BufReader::new(file), LabelOrigin::File)?.results)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[LabelResult]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in labels {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One label per `(note_id, entity)`: the highest-precedence origin wins
/// (human over file over llm); within an origin, the later result wins.
pub fn effective_labels(results: impl IntoIterator<Item = LabelResult>) -> BTreeMap<(String, String), LabelResult> {
    let mut out: BTreeMap<(String, String), LabelResult> = BTreeMap::new();
    for r in results {
        let key = (r.note_id.clone(), r.entity.clone());
        match out.get(&key) {
            Some(existing) if existing.origin > r.origin => {}
            _ => {
                out.insert(key, r);
            }
        }
    }
    out
}

/// Copies of `notes` carrying their effective label for `entity`; notes
/// without one are returned separately by id.
pub fn apply_labels(
    notes: &[Note],
    entity: &str,
    labels: &BTreeMap<(String, String), LabelResult>,
) -> (Vec<Note>, Vec<String>) {
    let mut labeled = Vec::new();
    let mut missing = Vec::new();
    for n in notes {
        match labels.get(&(n.id.clone(), entity.to_string())) {
            Some(l) => {
                let mut copy = n.clone();
                copy.label = Some(l.label);
                labeled.push(copy);
            }
            None => missing.push(n.id.clone()),
        }
    }
    (labeled, missing)
}
