//! Experiment configuration. Every count and constant the experiment uses
//! lives here as a default; a TOML file overrides any subset.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use divsynth_core::corpus::{TokenWindow, TokenizerMode};
use divsynth_core::embed::EndpointConfig;
use divsynth_core::metrics::LogisticParams;
use divsynth_core::reduce::UmapParams;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};
use crate::mockdata::MockCorpusConfig;

/// `auto` derives the window from the working set's token-count
/// percentiles; `LOW:HIGH` fixes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowSetting {
    #[default]
    Auto,
    Fixed(TokenWindow),
}

impl fmt::Display for WindowSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowSetting::Auto => f.write_str("auto"),
            WindowSetting::Fixed(w) => write!(f, "{w}"),
        }
    }
}

impl FromStr for WindowSetting {
    type Err = divsynth_core::Error;

    fn from_str(s: &str) -> divsynth_core::Result<Self> {
        match s {
            "auto" => Ok(WindowSetting::Auto),
            _ => s.parse().map(WindowSetting::Fixed),
        }
    }
}

impl Serialize for WindowSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WindowSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reducer {
    #[default]
    Umap,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatProvider {
    /// Recombines exemplar sentences.
    #[default]
    Mock,
    /// Writes fresh text in the exemplars' styles using the lexicons of the
    /// constructed corpus described by `mock_corpus`.
    Lexicon,
    Http,
}

/// Where representative labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// The label already stored on each corpus note.
    #[default]
    Corpus,
    /// `label_files`, later files overriding earlier ones.
    File,
    /// The chat model, with `label_files` taking precedence where present.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    pub provider: Provider,
    /// Hashing dimension for the mock embedder.
    pub mock_dim: usize,
    pub mock_seed: u64,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            provider: Provider::Mock,
            mock_dim: 512,
            mock_seed: 0,
            endpoint: EndpointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatSection {
    pub provider: ChatProvider,
    pub temperature: f64,
    /// Generation length cap; twice the window ceiling when unset.
    pub max_tokens: Option<usize>,
    #[serde(flatten)]
    pub endpoint: EndpointConfig,
}

impl Default for ChatSection {
    fn default() -> Self {
        ChatSection {
            provider: ChatProvider::Mock,
            temperature: 0.8,
            max_tokens: None,
            endpoint: EndpointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub entities: Vec<String>,
    pub k: usize,
    pub shots: usize,
    pub per_class: usize,
    pub increment: usize,
    pub iterations: usize,
    pub repeats: usize,
    pub baseline_n: usize,
    pub working_n: usize,
    pub test_pos: usize,
    pub test_neg: usize,
    pub threshold: f64,
    pub turing_n_synth: usize,
    pub turing_n_real: usize,
    pub token_window: WindowSetting,
    pub window_percentiles: [f64; 2],
    /// Whitespace splitting when unset; otherwise a shell command that
    /// prints the token count of the text on its stdin.
    pub tokenizer_command: Option<String>,
    pub reducer: Reducer,
    pub umap: UmapParams,
    pub logistic: LogisticParams,
    pub label_source: LabelSource,
    pub label_files: Vec<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub fewshot_template: String,
    pub zeroshot_template: String,
    pub concurrency: usize,
    pub master_seed: u64,
    pub embedding: EmbeddingSection,
    pub chat: ChatSection,
    /// Shape of the constructed corpus written by `corpus mock` and known to
    /// the lexicon generator.
    pub mock_corpus: MockCorpusConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: PathBuf::from("notes.jsonl"),
            out_dir: PathBuf::from("runs"),
            entities: vec!["effusion".into()],
            k: 50,
            shots: 5,
            per_class: 325,
            increment: 25,
            iterations: 15,
            repeats: 5,
            baseline_n: 50,
            working_n: 5000,
            test_pos: 100,
            test_neg: 100,
            threshold: 0.85,
            turing_n_synth: 50,
            turing_n_real: 50,
            token_window: WindowSetting::Auto,
            window_percentiles: [25.0, 75.0],
            tokenizer_command: None,
            reducer: Reducer::Umap,
            umap: UmapParams::default(),
            logistic: LogisticParams::default(),
            label_source: LabelSource::Corpus,
            label_files: Vec::new(),
            templates_dir: None,
            fewshot_template: divsynth_core::templates::FEWSHOT_DEFAULT.into(),
            zeroshot_template: divsynth_core::templates::ZEROSHOT_DEFAULT.into(),
            concurrency: 4,
            master_seed: 0,
            embedding: EmbeddingSection::default(),
            chat: ChatSection::default(),
            mock_corpus: MockCorpusConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        // relative paths in the file are relative to the file
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        cfg.validate().map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out_dir);
        self.label_files.iter_mut().for_each(fix);
        if let Some(t) = self.templates_dir.as_mut() {
            fix(t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k),
            ("shots", self.shots),
            ("per_class", self.per_class),
            ("increment", self.increment),
            ("repeats", self.repeats),
            ("baseline_n", self.baseline_n),
            ("working_n", self.working_n),
            ("test_pos", self.test_pos),
            ("test_neg", self.test_neg),
            ("concurrency", self.concurrency),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(PipelineError::usage(format!("{name} must be positive")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PipelineError::usage(format!("threshold {} is not in (0, 1)", self.threshold)));
        }
        let [lo, hi] = self.window_percentiles;
        if !(0.0..=100.0).contains(&lo) || !(lo..=100.0).contains(&hi) {
            return Err(PipelineError::usage("window_percentiles must satisfy 0 <= low <= high <= 100"));
        }
        if self.entities.is_empty() {
            return Err(PipelineError::usage("no entities configured"));
        }
        if self.increment * self.iterations > 2 * self.per_class {
            return Err(PipelineError::usage(format!(
                "increment x iterations = {} exceeds the {} notes generated per method",
                self.increment * self.iterations,
                2 * self.per_class
            )));
        }
        if self.label_source == LabelSource::File && self.label_files.is_empty() {
            return Err(PipelineError::usage("label_source = \"file\" needs label_files"));
        }
        Ok(())
    }

    pub fn tokenizer(&self) -> TokenizerMode {
        match &self.tokenizer_command {
            Some(cmd) => TokenizerMode::Custom(cmd.clone()),
            None => TokenizerMode::Whitespace,
        }
    }

    /// SHA-256 of the configuration's canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    /// Augmentation notes generated per method: one budget per class.
    pub fn generation_budget(&self) -> usize {
        2 * self.per_class
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
