//! Synthetic notes from prompt batches, via a chat model or a deterministic
//! mock, with resumable checkpointing.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;

use crate::chat::{ChatModel, Sampling};
use crate::corpus::{count_tokens, Method, Note, Source, TokenWindow, TokenizerMode};
use crate::error::{Error, Result};
use crate::par::parallel_map;
use crate::promptgen::{render, resolve_shots, NoteLookup, PromptBatch, PromptSpec};
use crate::rng;
use crate::templates::TemplateStore;

pub const CHECKPOINT_EVERY: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNote {
    pub note: Note,
    pub prompt_id: String,
    pub model: String,
    pub finish_reason: String,
    /// Content-level re-asks needed before a usable completion.
    pub retries: u32,
    pub warnings: Vec<String>,
}

impl SyntheticNote {
    /// Corpus-format note with the generation fields stored alongside.
    pub fn to_note(&self) -> Note {
        let mut n = self.note.clone();
        n.extra.insert("prompt_id".into(), Value::from(self.prompt_id.clone()));
        n.extra.insert("model".into(), Value::from(self.model.clone()));
        n.extra.insert("finish_reason".into(), Value::from(self.finish_reason.clone()));
        n.extra.insert("retries".into(), Value::from(self.retries));
        n
    }

    pub fn from_note(mut note: Note) -> Result<Self> {
        let mut take = |key: &str| match note.extra.remove(key) {
            Some(Value::String(s)) => Ok(s),
            _ => Err(Error::invalid(format!("synthetic note {:?} lacks {key}", note.id))),
        };
        let prompt_id = take("prompt_id")?;
        let model = take("model")?;
        let finish_reason = take("finish_reason")?;
        let retries = note.extra.remove("retries").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if note.source != Source::Synthetic || note.method.is_none() {
            return Err(Error::invalid(format!("note {:?} is not a synthetic note", note.id)));
        }
        Ok(SyntheticNote {
            note,
            prompt_id,
            model,
            finish_reason,
            retries,
            warnings: Vec::new(),
        })
    }
}

pub fn synthetic_id(prompt_id: &str) -> String {
    format!("syn-{prompt_id}")
}

pub fn build_note(
    p: &PromptSpec,
    method: Method,
    text: String,
    model: &str,
    finish_reason: String,
    retries: u32,
    tokenizer: &TokenizerMode,
) -> Result<SyntheticNote> {
    let token_count = count_tokens(&text, tokenizer)?;
    let mut warnings = Vec::new();
    let w = p.token_window;
    if token_count * 2 < w.low || token_count > 2 * w.high {
        let msg = format!(
            "{}: {token_count} tokens is outside [{}, {}]",
            p.prompt_id,
            w.low / 2,
            2 * w.high
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let mut note = Note::real(synthetic_id(&p.prompt_id), text, p.entity.clone()).with_label(p.target_label);
    note.source = Source::Synthetic;
    note.method = Some(method);
    note.token_count = token_count;
    Ok(SyntheticNote {
        note,
        prompt_id: p.prompt_id.clone(),
        model: model.to_string(),
        finish_reason,
        retries,
        warnings,
    })
}

pub trait Generator: Send + Sync {
    fn model(&self) -> &str;

    fn generate(&self, p: &PromptSpec, method: Method, notes: &dyn NoteLookup) -> Result<SyntheticNote>;
}

/// Generation through a chat-completions model.
pub struct ChatGenerator<'a> {
    pub chat: &'a dyn ChatModel,
    pub templates: &'a TemplateStore,
    pub temperature: f64,
    /// Defaults to twice the prompt's window ceiling.
    pub max_tokens: Option<usize>,
    /// Re-asks after an empty completion.
    pub empty_retries: u32,
    pub tokenizer: TokenizerMode,
}

impl<'a> ChatGenerator<'a> {
    pub fn new(chat: &'a dyn ChatModel, templates: &'a TemplateStore) -> Self {
        ChatGenerator {
            chat,
            templates,
            temperature: 0.8,
            max_tokens: None,
            empty_retries: 3,
            tokenizer: TokenizerMode::Whitespace,
        }
    }
}

impl Generator for ChatGenerator<'_> {
    fn model(&self) -> &str {
        self.chat.model()
    }

    fn generate(&self, p: &PromptSpec, method: Method, notes: &dyn NoteLookup) -> Result<SyntheticNote> {
        let messages = render(p, notes, self.templates)?;
        let sampling = Sampling {
            temperature: self.temperature,
            max_tokens: self.max_tokens.unwrap_or(2 * p.token_window.high),
        };
        let attempts = self.empty_retries + 1;
        for attempt in 0..attempts {
            let c = self.chat.complete(&messages, &sampling)?;
            let text = c.content.trim();
            if !text.is_empty() {
                return build_note(p, method, text.to_string(), self.chat.model(), c.finish_reason, attempt, &self.tokenizer);
            }
            log::debug!("{}: empty completion on attempt {}", p.prompt_id, attempt + 1);
        }
        Err(Error::EmptyCompletion {
            id: p.prompt_id.clone(),
            attempts: attempts as usize,
        })
    }
}

/// Token-count-preserving single-word substitutions applied by the mock.
const SYNONYMS: [(&str, &str); 12] = [
    ("normal", "unremarkable"),
    ("seen", "noted"),
    ("mild", "slight"),
    ("small", "minor"),
    ("stable", "unchanged"),
    ("evidence", "signs"),
    ("views", "projections"),
    ("demonstrates", "shows"),
    ("identified", "observed"),
    ("appears", "looks"),
    ("again", "still"),
    ("visualized", "depicted"),
];

fn synonym(word: &str) -> Option<&'static str> {
    SYNONYMS.iter().find_map(|&(a, b)| {
        if word == a {
            Some(b)
        } else if word == b {
            Some(a)
        } else {
            None
        }
    })
}

/// Replaces the alphabetic core of `token`, keeping surrounding punctuation
/// and a leading capital.
fn swap_token(token: &str) -> Option<String> {
    let start = token.find(|c: char| c.is_alphanumeric())?;
    let end = token.rfind(|c: char| c.is_alphanumeric())? + 1;
    let core = &token[start..end];
    let replacement = synonym(&core.to_lowercase())?;
    let replacement = if core.chars().next().is_some_and(char::is_uppercase) {
        let mut c = replacement.chars();
        c.next().unwrap().to_uppercase().chain(c).collect()
    } else {
        replacement.to_string()
    };
    Some(format!("{}{replacement}{}", &token[..start], &token[end..]))
}

fn sentences(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for t in text.split_whitespace() {
        current.push(t);
        if t.ends_with(['.', '!', '?']) {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Deterministic stand-in for a generation model.
///
/// Few-shot prompts are answered by recombining the shots' sentences in a
/// seeded order until a drawn target length inside the window is reached,
/// then swapping a few words for synonyms. Zero-shot prompts are answered
/// from a per-(entity, label) bank of pseudo-words that share no vocabulary
/// with real text.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    pub seed: u64,
    pub swap_rate: f64,
    model: String,
}

impl MockGenerator {
    pub fn new(seed: u64) -> Self {
        MockGenerator {
            seed,
            swap_rate: 0.15,
            model: format!("mock-gen-{seed}"),
        }
    }

    fn fewshot_text(&self, p: &PromptSpec, shots: &[&Note]) -> String {
        let mut r = rng::seeded(rng::mix64(self.seed ^ p.seed));
        let w = p.token_window;
        let pool: Vec<Vec<&str>> = shots.iter().flat_map(|n| sentences(&n.text)).collect();
        let target = r.random_range(w.low..=w.high);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut r);
        let mut cursor = 0;
        let mut next = |r: &mut rng::SeededRng| {
            if cursor == order.len() {
                order.shuffle(r);
                cursor = 0;
            }
            cursor += 1;
            &pool[order[cursor - 1]]
        };
        let mut out: Vec<&str> = Vec::with_capacity(w.high);
        let mut misses = 0;
        while out.len() < target && misses < 2 * pool.len() + 4 {
            let s = next(&mut r);
            if out.len() + s.len() <= w.high {
                out.extend_from_slice(s);
                misses = 0;
            } else {
                misses += 1;
            }
        }
        // every sentence left is too long for the remaining room
        while out.len() < w.low {
            let s = next(&mut r);
            let room = w.low - out.len();
            out.extend_from_slice(&s[..room.min(s.len())]);
        }
        let mut tokens: Vec<String> = out
            .into_iter()
            .map(|t| match swap_token(t) {
                Some(s) if r.random_bool(self.swap_rate) => s,
                _ => t.to_string(),
            })
            .collect();
        let text = tokens.join(" ");
        if shots.iter().any(|n| n.text.split_whitespace().collect::<Vec<_>>().join(" ") == text) {
            match tokens.iter().position(|t| swap_token(t).is_some()) {
                Some(i) => tokens[i] = swap_token(&tokens[i]).unwrap(),
                None => tokens[0] = if tokens[0] == "Also" { "Too".into() } else { "Also".into() },
            }
        }
        tokens.join(" ")
    }

    fn zeroshot_text(&self, p: &PromptSpec) -> String {
        let mut r = rng::seeded(rng::mix64(self.seed ^ p.seed));
        let bank = zeroshot_bank(&p.entity, p.target_label.as_str());
        let target = r.random_range(p.token_window.low..=p.token_window.high);
        let mut words: Vec<String> = Vec::with_capacity(target);
        let mut until_stop = r.random_range(6..=12);
        while words.len() < target {
            let mut w = bank[r.random_range(0..bank.len())].clone();
            until_stop -= 1;
            if until_stop == 0 || words.len() + 1 == target {
                w.push('.');
                until_stop = r.random_range(6..=12);
            }
            words.push(w);
        }
        words.join(" ")
    }
}

/// Pseudo-words for zero-shot mock output. They all start with `zs` followed
/// by letters only, a shape that never occurs in clinical prose.
pub fn zeroshot_bank(entity: &str, label: &str) -> Vec<String> {
    (0..48)
        .map(|i| {
            let mut h = rng::child_seed(i as u64, &format!("zs-bank/{entity}/{label}"));
            let mut w = String::from("zs");
            for _ in 0..6 {
                w.push((b'a' + (h % 26) as u8) as char);
                h /= 26;
            }
            w
        })
        .collect()
}

impl Generator for MockGenerator {
    fn model(&self) -> &str {
        &self.model
    }

    fn generate(&self, p: &PromptSpec, method: Method, notes: &dyn NoteLookup) -> Result<SyntheticNote> {
        let shots = resolve_shots(p, notes)?;
        let text = if shots.is_empty() {
            self.zeroshot_text(p)
        } else {
            self.fewshot_text(p, &shots)
        };
        build_note(p, method, text, &self.model, "stop".into(), 0, &TokenizerMode::Whitespace)
    }
}

pub fn window_of(notes: &[SyntheticNote]) -> Option<TokenWindow> {
    let lo = notes.iter().map(|n| n.note.token_count).min()?;
    let hi = notes.iter().map(|n| n.note.token_count).max()?;
    TokenWindow::new(lo.max(1), hi.max(1)).ok()
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    pub concurrency: usize,
    /// JSONL file of finished notes; existing entries are reused.
    pub checkpoint: Option<PathBuf>,
}

fn read_checkpoint(path: &Path) -> Result<HashMap<String, SyntheticNote>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from an interrupted write is skipped
        let Ok(note) = serde_json::from_str::<Note>(&line) else {
            log::warn!("{}: skipping unreadable checkpoint line", path.display());
            continue;
        };
        let mut s = SyntheticNote::from_note(note)?;
        s.note.token_count = count_tokens(&s.note.text, &TokenizerMode::Whitespace)?;
        done.insert(s.prompt_id.clone(), s);
    }
    Ok(done)
}

fn append_checkpoint(path: &Path, notes: &[SyntheticNote]) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for n in notes {
        serde_json::to_writer(&mut buf, &n.to_note())?;
        buf.push(b'\n');
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    file.sync_data().map_err(|e| Error::io(path, e))
}

/// One synthetic note per prompt, in batch order. Prompts already present in
/// the checkpoint are not regenerated; new results are appended to it after
/// every [`CHECKPOINT_EVERY`] completions.
pub fn generate_batch(
    batch: &PromptBatch,
    generator: &dyn Generator,
    notes: &dyn NoteLookup,
    opts: &BatchOptions,
) -> Result<Vec<SyntheticNote>> {
    let mut done = match &opts.checkpoint {
        Some(path) => read_checkpoint(path)?,
        None => HashMap::new(),
    };
    let pending: Vec<&PromptSpec> = batch
        .prompts
        .iter()
        .filter(|p| !done.contains_key(&p.prompt_id))
        .collect();
    if !done.is_empty() {
        log::info!("resuming: {} of {} prompts already generated", batch.len() - pending.len(), batch.len());
    }
    for chunk in pending.chunks(CHECKPOINT_EVERY) {
        let results = parallel_map(chunk, opts.concurrency, |p| generator.generate(p, batch.method, notes));
        let mut finished = Vec::new();
        let mut failure = None;
        for r in results {
            match r {
                Ok(n) => finished.push(n),
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(path) = &opts.checkpoint {
            append_checkpoint(path, &finished)?;
        }
        for n in finished {
            done.insert(n.prompt_id.clone(), n);
        }
        if let Some(e) = failure {
            return Err(e);
        }
    }
    Ok(batch
        .prompts
        .iter()
        .map(|p| done.remove(&p.prompt_id).expect("every prompt generated"))
        .collect())
}
