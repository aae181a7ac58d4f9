//! Few-shot and zero-shot prompt batches and their rendering.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chat::ChatMessage;
use crate::corpus::{Corpus, Label, Method, Note, TokenWindow};
use crate::error::{Error, Result};
use crate::rng;
use crate::templates::{TemplateStore, FEWSHOT_DEFAULT, ZEROSHOT_DEFAULT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub entity: String,
    pub target_label: Label,
    pub shot_ids: Vec<String>,
    pub token_window: TokenWindow,
    pub template_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBatch {
    pub method: Method,
    pub prompts: Vec<PromptSpec>,
    pub warnings: Vec<String>,
}

impl PromptBatch {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.prompts.iter().filter(|p| p.target_label == label).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &self.prompts {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, method: Method) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut prompts = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            prompts.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(PromptBatch {
            method,
            prompts,
            warnings: Vec::new(),
        })
    }
}

pub fn prompt_id(entity: &str, method: Method, label: Label, idx: usize) -> String {
    format!("{entity}-{method}-{label}-{idx:04}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotConfig {
    pub per_class: usize,
    pub shots: usize,
    pub window: TokenWindow,
    pub template_id: String,
    pub seed: u64,
}

impl FewShotConfig {
    pub fn new(window: TokenWindow, seed: u64) -> Self {
        FewShotConfig {
            per_class: 325,
            shots: 5,
            window,
            template_id: FEWSHOT_DEFAULT.into(),
            seed,
        }
    }
}

/// `per_class` prompts for each label, each holding `shots` same-class
/// exemplars drawn independently from `reps`. Draws are without replacement
/// inside a prompt unless a class has fewer than `shots` exemplars, in which
/// case they fall back to drawing with replacement and a warning is recorded.
pub fn build_fewshot_prompts(reps: &[Note], entity: &str, method: Method, cfg: &FewShotConfig) -> Result<PromptBatch> {
    if !method.is_few_shot() {
        return Err(Error::invalid(format!("{method} is not a few-shot method")));
    }
    if cfg.shots == 0 {
        return Err(Error::invalid("shots must be at least 1"));
    }
    let mut prompts = Vec::with_capacity(2 * cfg.per_class);
    let mut warnings = Vec::new();
    for label in Label::BOTH {
        let pool: Vec<&Note> = reps
            .iter()
            .filter(|n| n.label == Some(label) && n.entity == entity)
            .collect();
        if pool.is_empty() {
            return Err(Error::Insufficient {
                what: format!("{label} exemplars for {entity}"),
                needed: 1,
                available: 0,
            });
        }
        let with_replacement = pool.len() < cfg.shots;
        if with_replacement && cfg.per_class > 0 {
            let msg = format!(
                "only {} {label} exemplars for {entity}; sampling {} shots with replacement",
                pool.len(),
                cfg.shots
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let mut r = rng::child(cfg.seed, &format!("fewshot-{entity}-{label}"));
        for idx in 0..cfg.per_class {
            let picks: Vec<usize> = if with_replacement {
                (0..cfg.shots).map(|_| r.random_range(0..pool.len())).collect()
            } else {
                index::sample(&mut r, pool.len(), cfg.shots).into_vec()
            };
            let id = prompt_id(entity, method, label, idx);
            prompts.push(PromptSpec {
                seed: rng::child_seed(cfg.seed, &id),
                prompt_id: id,
                entity: entity.to_string(),
                target_label: label,
                shot_ids: picks.into_iter().map(|i| pool[i].id.clone()).collect(),
                token_window: cfg.window,
                template_id: cfg.template_id.clone(),
            });
        }
    }
    Ok(PromptBatch { method, prompts, warnings })
}

pub fn build_zeroshot_prompts(entity: &str, per_class: usize, window: TokenWindow, template_id: &str, seed: u64) -> PromptBatch {
    let mut prompts = Vec::with_capacity(2 * per_class);
    for label in Label::BOTH {
        for idx in 0..per_class {
            let id = prompt_id(entity, Method::Zeroshot, label, idx);
            prompts.push(PromptSpec {
                seed: rng::child_seed(seed, &id),
                prompt_id: id,
                entity: entity.to_string(),
                target_label: label,
                shot_ids: Vec::new(),
                token_window: window,
                template_id: template_id.to_string(),
            });
        }
    }
    PromptBatch {
        method: Method::Zeroshot,
        prompts,
        warnings: Vec::new(),
    }
}

pub fn default_template(method: Method) -> &'static str {
    if method.is_few_shot() {
        FEWSHOT_DEFAULT
    } else {
        ZEROSHOT_DEFAULT
    }
}

/// Id-keyed access to the notes a prompt refers to.
pub trait NoteLookup: Sync {
    fn note(&self, id: &str) -> Option<&Note>;
}

impl NoteLookup for Corpus {
    fn note(&self, id: &str) -> Option<&Note> {
        self.get(id)
    }
}

impl NoteLookup for HashMap<String, Note> {
    fn note(&self, id: &str) -> Option<&Note> {
        self.get(id)
    }
}

pub fn resolve_shots<'a>(p: &PromptSpec, notes: &'a dyn NoteLookup) -> Result<Vec<&'a Note>> {
    p.shot_ids
        .iter()
        .map(|id| notes.note(id).ok_or_else(|| Error::MissingNote(id.clone())))
        .collect()
}

fn examples_block(shots: &[&Note]) -> String {
    shots
        .iter()
        .enumerate()
        .map(|(i, n)| format!("Example {}:\n{}", i + 1, n.text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// System and user messages for one prompt. Shot texts appear verbatim and in
/// order; a prompt without shots must use a template without `{{examples}}`.
pub fn render(p: &PromptSpec, notes: &dyn NoteLookup, templates: &TemplateStore) -> Result<Vec<ChatMessage>> {
    let template = templates.get(&p.template_id)?;
    let shots = resolve_shots(p, notes)?;
    if shots.is_empty() && template.uses("examples") {
        return Err(Error::Template {
            template: p.template_id.clone(),
            message: format!("prompt {} has no shots for the examples section", p.prompt_id),
        });
    }
    let examples = examples_block(&shots);
    let low = p.token_window.low.to_string();
    let high = p.token_window.high.to_string();
    template.render(&[
        ("examples", &examples),
        ("low", &low),
        ("high", &high),
        ("entity", &p.entity),
        ("label", p.target_label.as_str()),
    ])
}
