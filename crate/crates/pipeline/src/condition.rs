//! The four-condition experiment driver.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use divsynth_core::chat::ChatModel;
use divsynth_core::cluster::{kmeans, random_sample_control, select_representatives, RepresentativeSet};
use divsynth_core::corpus::{load_corpus, sample_working_set, split_test_set, write_notes, Corpus, Label, Method, Note, SplitSpec, TokenWindow};
use divsynth_core::embed::{embed_batch, set_similarity, Embedder, EmbeddingCache, MockEmbedder};
use divsynth_core::generate::{generate_batch, BatchOptions, ChatGenerator, Generator, MockGenerator};
use divsynth_core::label::{apply_labels, effective_labels, load_labels, write_labels, LabelOrigin, LabelResult, LlmLabeler};
use divsynth_core::metrics::{gap_report, run_learning_curve_notes, threshold_report, ConditionSummary, CurveConfig, LearningCurve};
use divsynth_core::promptgen::{build_fewshot_prompts, build_zeroshot_prompts, FewShotConfig, PromptBatch};
use divsynth_core::reduce::{read_layout, reduce_pca, umap, write_layout, Layout, UmapParams};
use divsynth_core::templates::TemplateStore;
use divsynth_remote::{HttpChat, HttpEmbedder};
use rand::seq::index;
use serde::Serialize;

use crate::config::{ChatProvider, LabelSource, PipelineConfig, Provider, Reducer, WindowSetting};
use crate::error::{PipelineError, Result};
use crate::mockdata::LexiconGenerator;
use crate::report::{write_comparison, write_condition_reports, ComparisonRow, Manifest};
use crate::seeds::{derive_seed, stage};
use crate::stages::{file_digest, ids_digest, produce, StageFile};

/// Embedding and chat backends plus templates, built once per process.
pub struct Services {
    pub embedder: Box<dyn Embedder>,
    pub chat: Option<Box<dyn ChatModel>>,
    pub templates: TemplateStore,
}

impl Services {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let embedder: Box<dyn Embedder> = match cfg.embedding.provider {
            Provider::Mock => Box::new(MockEmbedder::new(cfg.embedding.mock_dim, cfg.embedding.mock_seed)),
            Provider::Http => Box::new(HttpEmbedder::new(cfg.embedding.endpoint.clone())?),
        };
        let chat: Option<Box<dyn ChatModel>> = match cfg.chat.provider {
            ChatProvider::Mock | ChatProvider::Lexicon => None,
            ChatProvider::Http => Some(Box::new(HttpChat::new(cfg.chat.endpoint.clone())?)),
        };
        let templates = match &cfg.templates_dir {
            Some(dir) => TemplateStore::from_dir(dir)?,
            None => TemplateStore::builtin(),
        };
        Ok(Services { embedder, chat, templates })
    }

    /// The generation backend: the chat model when configured, otherwise one
    /// of the deterministic mocks seeded for this condition.
    pub fn generator<'a>(&'a self, cfg: &PipelineConfig, seed: u64) -> Box<dyn Generator + 'a> {
        match &self.chat {
            Some(chat) => {
                let mut g = ChatGenerator::new(chat.as_ref(), &self.templates);
                g.temperature = cfg.chat.temperature;
                g.max_tokens = cfg.chat.max_tokens;
                g.tokenizer = cfg.tokenizer();
                Box::new(g)
            }
            None if cfg.chat.provider == ChatProvider::Lexicon => Box::new(LexiconGenerator::new(&cfg.mock_corpus, seed)),
            None => Box::new(MockGenerator::new(seed)),
        }
    }
}

/// Held-out test set, working set and token window for one entity; shared
/// by every condition so comparisons are paired.
#[derive(Debug, Clone)]
pub struct EntityData {
    pub entity: String,
    pub test: Vec<Note>,
    pub working: Corpus,
    pub window: TokenWindow,
    pub corpus_digest: String,
    pub split_seed: u64,
    pub working_seed: u64,
}

pub fn entity_dir(cfg: &PipelineConfig, entity: &str) -> PathBuf {
    cfg.out_dir.join(entity)
}

pub fn condition_dir(cfg: &PipelineConfig, entity: &str, method: Method) -> PathBuf {
    entity_dir(cfg, entity).join(method.as_str())
}

pub fn prepare_entity(cfg: &PipelineConfig, entity: &str) -> Result<EntityData> {
    let corpus = load_corpus(&cfg.corpus, cfg.tokenizer())?;
    let corpus_digest = file_digest(&cfg.corpus)?;
    let split_seed = derive_seed(cfg.master_seed, stage::SPLIT, entity, None);
    let working_seed = derive_seed(cfg.master_seed, stage::WORKING, entity, None);
    let spec = SplitSpec {
        entity: entity.to_string(),
        n_pos: cfg.test_pos,
        n_neg: cfg.test_neg,
        working_n: cfg.working_n,
        seed: split_seed,
    };
    let (test, remainder) = split_test_set(&corpus, &spec)?;
    let same_entity: Vec<Note> = remainder.iter().filter(|n| n.entity == entity).cloned().collect();
    let remainder = Corpus::from_notes(same_entity, cfg.tokenizer())?;
    let working = sample_working_set(&remainder, cfg.working_n, working_seed)?;
    let window = match cfg.token_window {
        WindowSetting::Fixed(w) => w,
        WindowSetting::Auto => {
            let [lo, hi] = cfg.window_percentiles;
            divsynth_core::corpus::token_window(&working, lo, hi)?
        }
    };
    let dir = entity_dir(cfg, entity);
    produce(&dir.join("test.jsonl"), |p| Ok(write_notes(p, test.iter())?))?;
    produce(&dir.join("working.jsonl"), |p| Ok(write_notes(p, working.iter())?))?;
    Ok(EntityData {
        entity: entity.to_string(),
        test: test.into_notes(),
        working,
        window,
        corpus_digest,
        split_seed,
        working_seed,
    })
}

/// Everything one condition produced.
#[derive(Debug, Clone)]
pub struct ConditionRun {
    pub method: Method,
    pub entity: String,
    pub dir: PathBuf,
    pub representatives: Option<RepresentativeSet>,
    pub baseline: Vec<Note>,
    pub pool: Vec<Note>,
    pub curve: LearningCurve,
    pub summary: ConditionSummary,
    pub window: TokenWindow,
    pub manifest: Manifest,
}

fn texts(notes: &[Note]) -> Vec<(String, String)> {
    notes.iter().map(|n| (n.id.clone(), n.text.clone())).collect()
}

fn vectors(notes: &[Note], embedder: &dyn Embedder, cache: &mut EmbeddingCache) -> Result<Vec<Vec<f64>>> {
    Ok(embed_batch(&texts(notes), embedder, cache)?.into_iter().map(|v| v.values).collect())
}

fn open_cache(cfg: &PipelineConfig) -> Result<EmbeddingCache> {
    let dir = cfg.out_dir.join("cache");
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::file(&dir, e))?;
    Ok(EmbeddingCache::open(dir.join("embeddings.jsonl"))?)
}

fn labeled_only(notes: impl IntoIterator<Item = Note>) -> Vec<Note> {
    notes.into_iter().filter(|n| n.label.is_some()).collect()
}

/// `n` labeled working notes drawn uniformly, excluding `exclude`.
fn sample_labeled(working: &Corpus, n: usize, seed: u64, exclude: &HashSet<&str>, what: &str) -> Result<Vec<Note>> {
    let eligible: Vec<&Note> = working
        .iter()
        .filter(|n| n.label.is_some() && !exclude.contains(n.id.as_str()))
        .collect();
    if eligible.len() < n {
        return Err(divsynth_core::Error::Insufficient {
            what: what.to_string(),
            needed: n,
            available: eligible.len(),
        }
        .into());
    }
    let mut r = divsynth_core::rng::seeded(seed);
    let mut picked = index::sample(&mut r, eligible.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| eligible[i].clone()).collect())
}

/// Layout of the working set, reusing a stored one with the same inputs.
fn layout_stage(cfg: &PipelineConfig, services: &Services, data: &EntityData, cache: &mut EmbeddingCache, dir: &Path, seed: u64) -> Result<(Vec<String>, Layout, StageFile)> {
    let ids: Vec<String> = data.working.ids().map(String::from).collect();
    let params = UmapParams { seed, ..cfg.umap.clone() };
    #[derive(Serialize)]
    struct Inputs<'a> {
        model: &'a str,
        reducer: Reducer,
        umap: &'a UmapParams,
        working: String,
    }
    let file = StageFile::new(
        dir,
        "layout",
        &Inputs {
            model: services.embedder.model(),
            reducer: cfg.reducer,
            umap: &params,
            working: ids_digest(ids.iter().map(String::as_str)),
        },
    );
    if file.exists() {
        let (stored, layout) = read_layout(&file.path)?;
        if stored == ids {
            return Ok((ids, layout, file));
        }
        log::warn!("{}: ids differ from the working set; recomputing", file.path.display());
    }
    let notes: Vec<Note> = data.working.notes().to_vec();
    let vecs = vectors(&notes, services.embedder.as_ref(), cache)?;
    let layout = match cfg.reducer {
        Reducer::Umap => umap(&vecs, &params)?,
        Reducer::Pca => reduce_pca(&vecs)?,
    };
    produce(&file.path, |p| Ok(write_layout(p, &ids, &layout)?))?;
    Ok((ids, layout, file))
}

/// Labels for the representatives according to the configured source.
fn label_stage(cfg: &PipelineConfig, services: &Services, reps: &[Note], entity: &str, dir: &Path) -> Result<(Vec<Note>, StageFile)> {
    let file_labels: Vec<LabelResult> = cfg
        .label_files
        .iter()
        .map(load_labels)
        .collect::<divsynth_core::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let file_digests: Vec<String> = cfg.label_files.iter().map(|p| file_digest(p)).collect::<Result<_>>()?;
    #[derive(Serialize)]
    struct Inputs<'a> {
        source: LabelSource,
        reps: String,
        files: &'a [String],
        model: Option<&'a str>,
    }
    let file = StageFile::new(
        dir,
        "labels",
        &Inputs {
            source: cfg.label_source,
            reps: ids_digest(reps.iter().map(|n| n.id.as_str())),
            files: &file_digests,
            model: services.chat.as_ref().map(|c| c.model()),
        },
    );
    let results: Vec<LabelResult> = if file.exists() {
        load_labels(&file.path)?
    } else {
        let produced: Vec<LabelResult> = match cfg.label_source {
            LabelSource::Corpus => reps
                .iter()
                .filter_map(|n| {
                    Some(LabelResult {
                        note_id: n.id.clone(),
                        entity: entity.to_string(),
                        label: n.label?,
                        origin: LabelOrigin::File,
                        raw_response: None,
                    })
                })
                .collect(),
            LabelSource::File => file_labels.clone(),
            LabelSource::Llm => {
                let chat = services
                    .chat
                    .as_ref()
                    .ok_or_else(|| PipelineError::usage("label_source = \"llm\" needs chat.provider = \"http\""))?;
                let labeler = LlmLabeler::new(chat.as_ref(), &services.templates);
                let mut out = Vec::new();
                for r in labeler.label_all(reps, entity, cfg.concurrency) {
                    match r {
                        Ok(l) => out.push(l),
                        Err(e) if e.is_endpoint() => return Err(e.into()),
                        Err(e) => log::warn!("{e}; note left unlabeled"),
                    }
                }
                out.extend(file_labels.iter().cloned());
                out
            }
        };
        produce(&file.path, |p| Ok(write_labels(p, &produced)?))?;
        produced
    };
    let map = effective_labels(results);
    let (labeled, missing) = apply_labels(reps, entity, &map);
    if !missing.is_empty() {
        log::warn!("{} representatives have no label and are dropped: {}", missing.len(), missing.join(", "));
    }
    Ok((labeled, file))
}

fn prompts_stage(batch_fn: impl FnOnce() -> Result<PromptBatch>, dir: &Path, inputs: &impl Serialize, method: Method) -> Result<(PromptBatch, StageFile)> {
    let file = StageFile::new(dir, "prompts", inputs);
    if file.exists() {
        return Ok((PromptBatch::load(&file.path, method)?, file));
    }
    let batch = batch_fn()?;
    for w in &batch.warnings {
        log::warn!("{w}");
    }
    produce(&file.path, |p| Ok(batch.save(p)?))?;
    Ok((batch, file))
}

fn generate_stage(cfg: &PipelineConfig, services: &Services, batch: &PromptBatch, lookup: &HashMap<String, Note>, dir: &Path, seed: u64) -> Result<(Vec<Note>, StageFile)> {
    let generator = services.generator(cfg, seed);
    #[derive(Serialize)]
    struct Inputs<'a> {
        prompts: String,
        model: &'a str,
        temperature: f64,
        max_tokens: Option<usize>,
    }
    let prompt_json: Vec<String> = batch.prompts.iter().map(|p| serde_json::to_string(p).expect("prompt serializes")).collect();
    let file = StageFile::new(
        dir,
        "generated",
        &Inputs {
            prompts: ids_digest(prompt_json.iter().map(String::as_str)),
            model: generator.model(),
            temperature: cfg.chat.temperature,
            max_tokens: cfg.chat.max_tokens,
        },
    );
    let opts = BatchOptions {
        concurrency: cfg.concurrency,
        checkpoint: Some(file.path.clone()),
    };
    let notes = generate_batch(batch, generator.as_ref(), lookup, &opts)?;
    Ok((notes.into_iter().map(|s| s.to_note()).collect(), file))
}

/// Runs one condition end to end and writes its reports under
/// `{out_dir}/{entity}/{method}/`. With the real-world curve at hand the
/// summary also carries the data ratio and final-point gap against it.
pub fn run_condition(cfg: &PipelineConfig, services: &Services, data: &EntityData, method: Method, real: Option<&LearningCurve>) -> Result<ConditionRun> {
    let entity = data.entity.as_str();
    let dir = condition_dir(cfg, entity, method);
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::file(&dir, e))?;
    let mut cache = open_cache(cfg)?;
    let seed = |name: &str, m: Option<Method>| derive_seed(cfg.master_seed, name, entity, m);
    let mut seeds: BTreeMap<String, u64> = BTreeMap::new();
    let mut stage_files: BTreeMap<String, String> = BTreeMap::new();
    log::info!("{entity}/{method}: starting");

    let mut representatives = None;
    let (baseline, pool): (Vec<Note>, Vec<Note>) = match method {
        Method::Diversity | Method::Random => {
            let reps = if method == Method::Diversity {
                let reduce_seed = seed(stage::REDUCE, Some(method));
                let cluster_seed = seed(stage::CLUSTER, Some(method));
                seeds.insert(stage::REDUCE.into(), reduce_seed);
                seeds.insert(stage::CLUSTER.into(), cluster_seed);
                let (ids, layout, layout_file) = layout_stage(cfg, services, data, &mut cache, &dir, reduce_seed)?;
                stage_files.insert("layout".into(), layout_file.file_name());
                let clustering = kmeans(&layout.coords, cfg.k, cluster_seed)?;
                select_representatives(&clustering, &layout.coords, &ids)?
            } else {
                let s = seed(stage::RANDOM_REPS, Some(method));
                seeds.insert(stage::RANDOM_REPS.into(), s);
                let ids: Vec<String> = data.working.ids().map(String::from).collect();
                random_sample_control(&ids, cfg.k, s)?
            };
            produce(&dir.join("representatives.jsonl"), |p| Ok(reps.save(p)?))?;
            let rep_notes: Vec<Note> = reps
                .entries
                .iter()
                .map(|r| data.working.get(&r.id).cloned().ok_or_else(|| divsynth_core::Error::MissingNote(r.id.clone())))
                .collect::<divsynth_core::Result<_>>()?;
            representatives = Some(reps);
            let (labeled, label_file) = label_stage(cfg, services, &rep_notes, entity, &dir)?;
            stage_files.insert("labels".into(), label_file.file_name());

            let prompt_seed = seed(stage::PROMPTS, Some(method));
            seeds.insert(stage::PROMPTS.into(), prompt_seed);
            let fs = FewShotConfig {
                per_class: cfg.per_class,
                shots: cfg.shots,
                window: data.window,
                template_id: cfg.fewshot_template.clone(),
                seed: prompt_seed,
            };
            let labeled_ref = &labeled;
            let inputs = (
                ids_digest(labeled.iter().map(|n| n.id.as_str())),
                labeled.iter().map(|n| n.label.map(Label::as_str)).collect::<Vec<_>>(),
                cfg.per_class,
                cfg.shots,
                data.window,
                &cfg.fewshot_template,
                prompt_seed,
            );
            let (batch, prompt_file) = prompts_stage(|| Ok(build_fewshot_prompts(labeled_ref, entity, method, &fs)?), &dir, &inputs, method)?;
            stage_files.insert("prompts".into(), prompt_file.file_name());

            let gen_seed = seed(stage::GENERATE, Some(method));
            seeds.insert(stage::GENERATE.into(), gen_seed);
            let lookup: HashMap<String, Note> = labeled.iter().map(|n| (n.id.clone(), n.clone())).collect();
            let (pool, gen_file) = generate_stage(cfg, services, &batch, &lookup, &dir, gen_seed)?;
            stage_files.insert("generated".into(), gen_file.file_name());
            (labeled, pool)
        }
        Method::Zeroshot | Method::Realworld => {
            let base_seed = seed(stage::BASELINE, None);
            seeds.insert(stage::BASELINE.into(), base_seed);
            let baseline = sample_labeled(&data.working, cfg.baseline_n, base_seed, &HashSet::new(), "baseline notes")?;
            let pool = if method == Method::Zeroshot {
                let prompt_seed = seed(stage::PROMPTS, Some(method));
                seeds.insert(stage::PROMPTS.into(), prompt_seed);
                let inputs = (cfg.per_class, data.window, &cfg.zeroshot_template, prompt_seed);
                let (batch, prompt_file) = prompts_stage(
                    || Ok(build_zeroshot_prompts(entity, cfg.per_class, data.window, &cfg.zeroshot_template, prompt_seed)),
                    &dir,
                    &inputs,
                    method,
                )?;
                stage_files.insert("prompts".into(), prompt_file.file_name());
                let gen_seed = seed(stage::GENERATE, Some(method));
                seeds.insert(stage::GENERATE.into(), gen_seed);
                let (pool, gen_file) = generate_stage(cfg, services, &batch, &HashMap::new(), &dir, gen_seed)?;
                stage_files.insert("generated".into(), gen_file.file_name());
                pool
            } else {
                let pool_seed = seed(stage::REALWORLD_POOL, Some(method));
                seeds.insert(stage::REALWORLD_POOL.into(), pool_seed);
                let exclude: HashSet<&str> = baseline.iter().map(|n| n.id.as_str()).collect();
                let mut pool = sample_labeled(&data.working, cfg.generation_budget(), pool_seed, &exclude, "real-world pool")?;
                for n in &mut pool {
                    n.method = Some(Method::Realworld);
                }
                pool
            };
            (baseline, pool)
        }
    };
    let baseline = labeled_only(baseline);
    produce(&dir.join("baseline.jsonl"), |p| Ok(write_notes(p, baseline.iter())?))?;
    produce(&dir.join("augmentation.jsonl"), |p| Ok(write_notes(p, pool.iter())?))?;

    let curve_seed = seed(stage::CURVE, Some(method));
    seeds.insert(stage::CURVE.into(), curve_seed);
    let curve_cfg = CurveConfig {
        increment: cfg.increment,
        iterations: cfg.iterations,
        repeats: cfg.repeats,
        seed: curve_seed,
        logistic: cfg.logistic,
        concurrency: cfg.concurrency,
    };
    let curve = run_learning_curve_notes(&baseline, &pool, &data.test, services.embedder.as_ref(), &mut cache, &curve_cfg)?;

    let pool_vecs = vectors(&pool, services.embedder.as_ref(), &mut cache)?;
    let test_vecs = vectors(&data.test, services.embedder.as_ref(), &mut cache)?;
    let pv: Vec<&[f64]> = pool_vecs.iter().map(Vec::as_slice).collect();
    let tv: Vec<&[f64]> = test_vecs.iter().map(Vec::as_slice).collect();
    let similarity = set_similarity(&pv, &tv)?;

    let summary = ConditionSummary {
        method,
        entity: entity.to_string(),
        thresholds: threshold_report(&curve, real, cfg.threshold),
        gap_vs_real: real.map(|r| gap_report(r, &curve)).transpose()?,
        set_similarity_vs_real: Some(similarity),
    };
    let manifest = Manifest::new(cfg, data, method, seeds, stage_files);
    let manifest = write_condition_reports(&dir, &curve, &summary, manifest)?;
    log::info!("{entity}/{method}: done");
    Ok(ConditionRun {
        method,
        entity: entity.to_string(),
        dir,
        representatives,
        baseline,
        pool,
        curve,
        summary,
        window: data.window,
        manifest,
    })
}

/// Runs `methods` for one entity, real-world first so every other summary
/// can be compared against it, and writes the comparison table into the
/// entity directory. Results come back in the order requested.
pub fn run_methods(cfg: &PipelineConfig, services: &Services, entity: &str, methods: &[Method]) -> Result<Vec<ConditionRun>> {
    let data = prepare_entity(cfg, entity)?;
    let mut order: Vec<Method> = methods.to_vec();
    order.sort_by_key(|&m| m != Method::Realworld);
    let mut runs: Vec<ConditionRun> = Vec::new();
    let mut real: Option<LearningCurve> = None;
    for m in order {
        let run = run_condition(cfg, services, &data, m, real.as_ref())?;
        if m == Method::Realworld {
            real = Some(run.curve.clone());
        }
        runs.push(run);
    }
    runs.sort_by_key(|r| methods.iter().position(|&m| m == r.method));
    if runs.len() > 1 {
        let rows: Vec<ComparisonRow> = runs
            .iter()
            .map(|r| {
                let last = r.curve.points.last().expect("curve has a baseline point");
                ComparisonRow {
                    final_auroc: last.auroc.mean,
                    final_auprc: last.auprc.mean,
                    summary: r.summary.clone(),
                }
            })
            .collect();
        write_comparison(&entity_dir(cfg, entity), &rows)?;
    }
    Ok(runs)
}
