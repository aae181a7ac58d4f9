//! Constructed corpora for offline runs and tests.
//!
//! Every (entity, label) pair owns `styles` writing styles. A style is a
//! private vocabulary of pseudo-words; a note is written in exactly one
//! style, mixing its words with a shared filler lexicon and, sometimes, an
//! explicit finding sentence common to all styles of that label. Style
//! frequencies fall off as `(s + 1)^-skew`, so a uniform sample of notes
//! tends to miss the rarer styles. The style is recorded on each note under
//! the `style` field.

use std::collections::{HashMap, HashSet};

use divsynth_core::corpus::{Label, Method, Note, TokenizerMode};
use divsynth_core::generate::{build_note, Generator, MockGenerator, SyntheticNote};
use divsynth_core::promptgen::{resolve_shots, NoteLookup, PromptSpec};
use divsynth_core::rng::{self, SeededRng};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockCorpusConfig {
    pub entities: Vec<String>,
    pub notes_per_entity: usize,
    pub present_rate: f64,
    pub styles: usize,
    pub style_skew: f64,
    pub style_vocab: usize,
    /// Words in the header line that opens every note of a style, shared by
    /// both labels.
    pub header_words: usize,
    /// Inclusive range of words per note.
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of style words (the rest are shared filler).
    pub style_word_rate: f64,
    /// Probability that a note states its finding in shared words.
    pub cue_rate: f64,
    pub seed: u64,
}

impl Default for MockCorpusConfig {
    fn default() -> Self {
        MockCorpusConfig {
            entities: vec!["effusion".into()],
            notes_per_entity: 2200,
            present_rate: 0.5,
            styles: 10,
            style_skew: 1.0,
            style_vocab: 160,
            header_words: 3,
            min_words: 20,
            max_words: 48,
            style_word_rate: 0.75,
            cue_rate: 0.1,
            seed: 0,
        }
    }
}

const FILLER: [&str; 24] = [
    "the", "is", "of", "and", "with", "in", "seen", "noted", "there", "a", "to", "on", "at", "for", "are", "as", "from",
    "right", "left", "lung", "chest", "view", "study", "image",
];

const SYLLABLES: [&str; 24] = [
    "ba", "ce", "di", "fo", "gu", "ha", "ke", "li", "mo", "nu", "pa", "re", "si", "to", "vu", "za", "lo", "mi", "ne",
    "ro", "te", "da", "ki", "so",
];

fn cue_sentences(entity: &str, label: Label) -> [String; 3] {
    match label {
        Label::Present => [
            format!("{entity} is present."),
            format!("findings consistent with {entity}."),
            format!("there is {entity}."),
        ],
        Label::Absent => [
            format!("no {entity}."),
            format!("no evidence of {entity}."),
            format!("{entity} is absent."),
        ],
    }
}

/// One sentence of 5 to 9 words (fewer if `room` is smaller) mixing
/// `words` with filler.
fn sentence(r: &mut SeededRng, words: &[String], style_word_rate: f64, room: usize) -> Vec<String> {
    let len = r.random_range(5..=9).min(room);
    let mut out: Vec<String> = (0..len)
        .map(|_| {
            if r.random_bool(style_word_rate) {
                words[r.random_range(0..words.len())].clone()
            } else {
                FILLER[r.random_range(0..FILLER.len())].to_string()
            }
        })
        .collect();
    if let Some(last) = out.last_mut() {
        last.push('.');
    }
    out
}

pub fn style_name(entity: &str, label: Label, style: usize) -> String {
    format!("{entity}/{label}/s{style:02}")
}

/// Word lists for one entity: `words[label_index][style]` plus one header
/// per style shared by both labels. All words are distinct.
struct Lexicon {
    words: Vec<Vec<Vec<String>>>,
    headers: Vec<Vec<String>>,
}

fn lexicon(cfg: &MockCorpusConfig, entity: &str) -> Lexicon {
    let mut r = rng::child(cfg.seed, &format!("mock-vocab/{entity}"));
    let mut used: HashSet<String> = HashSet::new();
    let mut fresh = |r: &mut SeededRng, syllables: std::ops::RangeInclusive<usize>| loop {
        let n = r.random_range(syllables.clone());
        let w: String = (0..n).map(|_| SYLLABLES[r.random_range(0..SYLLABLES.len())]).collect();
        if used.insert(w.clone()) {
            return w;
        }
    };
    let words = Label::BOTH
        .iter()
        .map(|_| {
            (0..cfg.styles)
                .map(|_| (0..cfg.style_vocab).map(|_| fresh(&mut r, 2..=3)).collect())
                .collect()
        })
        .collect();
    let headers = (0..cfg.styles)
        .map(|_| (0..cfg.header_words).map(|_| fresh(&mut r, 4..=4)).collect())
        .collect();
    Lexicon { words, headers }
}

fn header_sentence(header: &[String]) -> Vec<String> {
    let mut h = header.to_vec();
    if let Some(last) = h.last_mut() {
        last.push('.');
    }
    h
}

/// A labeled corpus of real-source notes; ids are `{entity}-{index:05}`.
pub fn mock_corpus(cfg: &MockCorpusConfig) -> Vec<Note> {
    assert!(cfg.styles > 0 && cfg.style_vocab > 0 && cfg.min_words > 0 && cfg.min_words <= cfg.max_words);
    let weights: Vec<f64> = (0..cfg.styles).map(|s| ((s + 1) as f64).powf(-cfg.style_skew)).collect();
    let style_dist = WeightedIndex::new(&weights).expect("positive style weights");
    let mut notes = Vec::new();
    for entity in &cfg.entities {
        let lex = lexicon(cfg, entity);
        let mut r = rng::child(cfg.seed, &format!("mock-notes/{entity}"));
        for i in 0..cfg.notes_per_entity {
            let label = if r.random_bool(cfg.present_rate) { Label::Present } else { Label::Absent };
            let li = if label == Label::Present { 0 } else { 1 };
            let style = style_dist.sample(&mut r);
            let words = &lex.words[li][style];
            let target = r.random_range(cfg.min_words..=cfg.max_words);
            let mut tokens: Vec<String> = header_sentence(&lex.headers[style]);
            if r.random_bool(cfg.cue_rate) {
                let cues = cue_sentences(entity, label);
                tokens.extend(cues[r.random_range(0..cues.len())].split_whitespace().map(String::from));
            }
            while tokens.len() < target {
                let room = target - tokens.len();
                tokens.extend(sentence(&mut r, words, cfg.style_word_rate, room));
            }
            let mut note = Note::real(format!("{entity}-{i:05}"), tokens.join(" "), entity.clone()).with_label(label);
            note.extra.insert("style".into(), style_name(entity, label, style).into());
            notes.push(note);
        }
    }
    notes
}

pub fn style_of(note: &Note) -> Option<&str> {
    note.extra.get("style").and_then(|v| v.as_str())
}

/// Distinct styles present in `notes`, averaged over the two labels.
pub fn style_coverage(notes: &[Note], entity: &str) -> f64 {
    let mut total = 0.0;
    for label in Label::BOTH {
        let prefix = format!("{entity}/{label}/");
        let seen: HashSet<&str> = notes.iter().filter_map(style_of).filter(|s| s.starts_with(&prefix)).collect();
        total += seen.len() as f64;
    }
    total / Label::BOTH.len() as f64
}

/// A stand-in for a language model that knows the constructed corpus's
/// lexicons. Each shot's style is recognised from its words; the output then
/// interleaves sentences copied from the shots with new sentences written in
/// the shots' styles, so it can use style words no shot contains. Prompts
/// without shots, or for entities outside the corpus, go to
/// [`MockGenerator`].
pub struct LexiconGenerator {
    cfg: MockCorpusConfig,
    lexicons: HashMap<String, Lexicon>,
    word_style: HashMap<String, (String, usize, usize)>,
    fallback: MockGenerator,
    /// Chance that a sentence is copied from a shot rather than written anew.
    pub copy_rate: f64,
    model: String,
}

impl LexiconGenerator {
    pub fn new(cfg: &MockCorpusConfig, seed: u64) -> Self {
        let mut lexicons = HashMap::new();
        let mut word_style = HashMap::new();
        for entity in &cfg.entities {
            let v = lexicon(cfg, entity);
            for (li, styles) in v.words.iter().enumerate() {
                for (s, words) in styles.iter().enumerate() {
                    for w in words {
                        word_style.insert(w.clone(), (entity.clone(), li, s));
                    }
                }
            }
            lexicons.insert(entity.clone(), v);
        }
        LexiconGenerator {
            cfg: cfg.clone(),
            lexicons,
            word_style,
            fallback: MockGenerator::new(seed),
            copy_rate: 0.5,
            model: format!("mock-lexicon-{seed}"),
        }
    }

    /// The (label index, style) most of `text`'s lexicon words belong to.
    fn recognise(&self, entity: &str, text: &str) -> Option<(usize, usize)> {
        let mut votes: HashMap<(usize, usize), usize> = HashMap::new();
        for t in text.split_whitespace() {
            if let Some((e, li, s)) = self.word_style.get(t.trim_end_matches('.')) {
                if e == entity {
                    *votes.entry((*li, *s)).or_default() += 1;
                }
            }
        }
        votes.into_iter().max_by_key(|&(k, n)| (n, std::cmp::Reverse(k))).map(|(k, _)| k)
    }

    fn write(&self, p: &PromptSpec, shots: &[&Note], lexicon: &Lexicon) -> String {
        let mut r = rng::seeded(rng::mix64(self.fallback.seed ^ p.seed));
        let w = p.token_window;
        let target = r.random_range(w.low..=w.high);
        let styles: Vec<Option<(usize, usize)>> = shots.iter().map(|n| self.recognise(&p.entity, &n.text)).collect();
        let shot_sentences: Vec<Vec<String>> = shots
            .iter()
            .flat_map(|n| split_sentences(&n.text))
            .collect();
        let mut tokens: Vec<String> = Vec::with_capacity(w.high);
        if let Some((_, s)) = styles[r.random_range(0..shots.len())] {
            tokens.extend(header_sentence(&lexicon.headers[s]));
        }
        if r.random_bool(self.cfg.cue_rate) {
            let cues = cue_sentences(&p.entity, p.target_label);
            tokens.extend(cues[r.random_range(0..cues.len())].split_whitespace().map(String::from));
        }
        while tokens.len() < target {
            let room = target - tokens.len();
            let shot = r.random_range(0..shots.len());
            let fresh = match styles[shot] {
                Some((li, s)) if !r.random_bool(self.copy_rate) => Some(&lexicon.words[li][s]),
                _ => None,
            };
            match fresh {
                Some(words) => tokens.extend(sentence(&mut r, words, self.cfg.style_word_rate, room)),
                None => {
                    let s = &shot_sentences[r.random_range(0..shot_sentences.len())];
                    tokens.extend(s.iter().take(room).cloned());
                }
            }
        }
        if let Some(last) = tokens.last_mut() {
            if !last.ends_with('.') {
                last.push('.');
            }
        }
        tokens.join(" ")
    }
}

fn split_sentences(text: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for t in text.split_whitespace() {
        current.push(t.to_string());
        if t.ends_with('.') {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

impl Generator for LexiconGenerator {
    fn model(&self) -> &str {
        &self.model
    }

    fn generate(&self, p: &PromptSpec, method: Method, notes: &dyn NoteLookup) -> divsynth_core::Result<SyntheticNote> {
        let shots = resolve_shots(p, notes)?;
        match self.lexicons.get(&p.entity) {
            Some(lexicon) if !shots.is_empty() => {
                let text = self.write(p, &shots, lexicon);
                build_note(p, method, text, &self.model, "stop".into(), 0, &TokenizerMode::Whitespace)
            }
            _ => self.fallback.generate(p, method, notes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labeled() {
        let cfg = MockCorpusConfig { notes_per_entity: 300, ..Default::default() };
        let a = mock_corpus(&cfg);
        assert_eq!(a, mock_corpus(&cfg));
        assert_eq!(a.len(), 300);
        assert!(a.iter().all(|n| n.label.is_some() && style_of(n).is_some()));
        let lens: Vec<usize> = a.iter().map(|n| n.text.split_whitespace().count()).collect();
        assert!(lens.iter().all(|&l| (20..=52).contains(&l)));
        let other = mock_corpus(&MockCorpusConfig { seed: 1, ..cfg });
        assert_ne!(a, other);
    }

    #[test]
    fn styles_are_skewed_and_disjoint() {
        let cfg = MockCorpusConfig::default();
        let notes = mock_corpus(&cfg);
        let count = |s: usize| notes.iter().filter(|n| style_of(n).unwrap().ends_with(&format!("s{s:02}"))).count();
        assert!(count(0) > 4 * count(9));
        assert_eq!(style_coverage(&notes, "effusion"), 10.0);
        let lex = lexicon(&cfg, "effusion");
        let all: Vec<&String> = lex.words.iter().flatten().flatten().chain(lex.headers.iter().flatten()).collect();
        let distinct: HashSet<&String> = all.iter().copied().collect();
        assert_eq!(all.len(), distinct.len());
    }
}
