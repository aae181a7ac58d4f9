use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use divsynth::config::{PipelineConfig, WindowSetting};
use divsynth::error::{PipelineError, Result, EXIT_OK, EXIT_USAGE};
use divsynth::mockdata::mock_corpus;
use divsynth::report::{curve_csv, CURVE_CSV, SUMMARY_JSON};
use divsynth::stages::write_atomic;
use divsynth::{run_methods, Services};
use divsynth_annotator::{router, serve, AppState, CreateRequest, NotePool, SessionKind, Store};
use divsynth_core::cluster::{kmeans, random_sample_control, select_representatives, RepresentativeSet};
use divsynth_core::corpus::{load_corpus, sample_working_set, split_test_set, token_window, write_notes, Corpus, Method, Note, SplitSpec};
use divsynth_core::embed::{embed_batch, EmbeddingCache};
use divsynth_core::generate::{generate_batch, BatchOptions};
use divsynth_core::label::{apply_labels, effective_labels, load_labels, write_labels, LabelOrigin, LabelResult, LlmLabeler};
use divsynth_core::metrics::{run_learning_curve_notes, threshold_report, ConditionSummary, CurveConfig};
use divsynth_core::promptgen::{build_fewshot_prompts, build_zeroshot_prompts, FewShotConfig, PromptBatch};
use divsynth_core::reduce::{read_layout, reduce_pca, umap, write_layout, UmapParams};

#[derive(Parser)]
#[command(name = "divsynth", version, about = "Diversity-sampled synthetic note augmentation")]
struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    master_seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split or construct corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Embed notes into a cache file.
    Embed(EmbedArgs),
    /// Project cached embeddings to a 2-D layout.
    Reduce(ReduceArgs),
    /// Pick representatives by k-means on a layout, or uniformly at random.
    Cluster(ClusterArgs),
    /// Label representatives.
    Label(LabelArgs),
    /// Build a prompt batch.
    Promptgen(PromptgenArgs),
    /// Run a prompt batch through the generator.
    Generate(GenerateArgs),
    /// Learning-curve evaluation.
    #[command(subcommand)]
    Evaluate(EvaluateCmd),
    /// Blinded human-judgment sessions.
    #[command(subcommand)]
    Turing(TuringCmd),
    /// Serve the annotator API.
    Serve(ServeArgs),
    /// Run whole conditions end to end.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    Split(SplitArgs),
    /// Write a constructed corpus described by the `mock_corpus` section.
    Mock(MockArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    entity: String,
    #[arg(long, default_value_t = 100)]
    n_pos: usize,
    #[arg(long, default_value_t = 100)]
    n_neg: usize,
    #[arg(long, default_value_t = 5000)]
    working: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
    #[arg(long)]
    out_working: PathBuf,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    notes_per_entity: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    cache: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReduceMethod {
    Umap,
    Pca,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long, value_enum, default_value = "umap")]
    method: ReduceMethod,
    #[arg(long, default_value_t = 15)]
    n_neighbors: usize,
    #[arg(long, default_value_t = 0.1)]
    min_dist: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding cache written by `embed`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Notes whose vectors to project, in this order.
    #[arg(long)]
    notes: PathBuf,
    /// Embedding model to read; the cache's only model when omitted.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct ClusterArgs {
    #[command(subcommand)]
    random: Option<ClusterCmd>,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    notes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ClusterCmd {
    /// Uniform sample of working-set notes, the random control.
    Random {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        notes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelFrom {
    Corpus,
    Llm,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    reps: PathBuf,
    #[arg(long)]
    notes: PathBuf,
    #[arg(long)]
    entity: String,
    #[arg(long, value_enum, default_value = "corpus")]
    source: LabelFrom,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PromptgenArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    entity: String,
    #[arg(long, default_value_t = 325)]
    per_class: usize,
    #[arg(long, default_value_t = 5)]
    shots: usize,
    #[arg(long, default_value = "auto")]
    window: WindowSetting,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Working set; the source of shot texts and of the `auto` window.
    #[arg(long)]
    notes: PathBuf,
    /// Representatives (few-shot methods).
    #[arg(long)]
    reps: Option<PathBuf>,
    /// Label files overriding the labels stored on the notes.
    #[arg(long)]
    labels: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long)]
    method: Method,
    /// Notes the prompts' shot ids refer to.
    #[arg(long)]
    notes: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvaluateCmd {
    Curve(CurveArgs),
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 25)]
    increment: usize,
    #[arg(long, default_value_t = 15)]
    iterations: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0.85)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Method recorded in the report; read from the pool notes when omitted.
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TuringCmd {
    /// Create a Turing-test session in an annotator data directory.
    Export(TuringExportArgs),
}

#[derive(Args)]
struct TuringExportArgs {
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    entity: String,
    #[arg(long)]
    n_synth: Option<usize>,
    #[arg(long)]
    n_real: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    data_dir: PathBuf,
    /// Also write the blinded items (id and text only) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    synthetic: Option<PathBuf>,
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long)]
    label_queue: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Environment variable holding a bearer token clients must present.
    #[arg(long)]
    token_env: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    /// A method or `all`.
    #[arg(long, default_value = "all")]
    method: String,
    /// An entity or `all` (every configured entity).
    #[arg(long, default_value = "all")]
    entity: String,
}

fn load_notes(path: &Path, cfg: &PipelineConfig) -> Result<Corpus> {
    Ok(load_corpus(path, cfg.tokenizer())?)
}

fn write_json_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut bytes, r).map_err(|e| PipelineError::file(path, e))?;
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}

fn corpus(cmd: CorpusCmd, cfg: &PipelineConfig) -> Result<()> {
    match cmd {
        CorpusCmd::Split(a) => {
            let c = load_notes(&a.input, cfg)?;
            let spec = SplitSpec {
                entity: a.entity,
                n_pos: a.n_pos,
                n_neg: a.n_neg,
                working_n: a.working,
                seed: a.seed,
            };
            let (test, remainder) = split_test_set(&c, &spec)?;
            let working = sample_working_set(&remainder, a.working, a.seed)?;
            test.save(&a.out_test)?;
            working.save(&a.out_working)?;
            println!("test {} notes, working {} notes", test.len(), working.len());
        }
        CorpusCmd::Mock(a) => {
            let mut m = cfg.mock_corpus.clone();
            m.entities = cfg.entities.clone();
            if let Some(n) = a.notes_per_entity {
                m.notes_per_entity = n;
            }
            if let Some(s) = a.seed {
                m.seed = s;
            }
            let notes = mock_corpus(&m);
            write_notes(&a.out, notes.iter())?;
            println!("wrote {} notes", notes.len());
        }
    }
    Ok(())
}

fn embed(a: EmbedArgs, services: &Services, cfg: &PipelineConfig) -> Result<()> {
    let notes = load_notes(&a.input, cfg)?;
    let texts: Vec<(String, String)> = notes.iter().map(|n| (n.id.clone(), n.text.clone())).collect();
    let mut cache = EmbeddingCache::open(&a.cache)?;
    let vectors = embed_batch(&texts, services.embedder.as_ref(), &mut cache)?;
    println!("{} vectors of dimension {} in {}", vectors.len(), vectors.first().map_or(0, |v| v.dim()), a.cache.display());
    Ok(())
}

fn reduce(a: ReduceArgs, cfg: &PipelineConfig) -> Result<()> {
    let cache = EmbeddingCache::open(&a.input)?;
    let model = match a.model {
        Some(m) => m,
        None => match cache.models().as_slice() {
            [only] => only.clone(),
            [] => return Err(PipelineError::file(&a.input, "cache holds no vectors")),
            many => return Err(PipelineError::usage(format!("cache holds several models ({}); pass --model", many.join(", ")))),
        },
    };
    let notes = load_notes(&a.notes, cfg)?;
    let ids: Vec<String> = notes.ids().map(String::from).collect();
    let vectors: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            cache
                .get(id, &model)
                .map(|v| v.values)
                .ok_or_else(|| PipelineError::file(&a.input, format!("no {model} vector for note {id:?}")))
        })
        .collect::<Result<_>>()?;
    let layout = match a.method {
        ReduceMethod::Umap => umap(
            &vectors,
            &UmapParams {
                n_neighbors: a.n_neighbors,
                min_dist: a.min_dist,
                n_epochs: a.epochs,
                seed: a.seed,
                ..cfg.umap.clone()
            },
        )?,
        ReduceMethod::Pca => reduce_pca(&vectors)?,
    };
    write_layout(&a.out, &ids, &layout)?;
    Ok(())
}

fn cluster(a: ClusterArgs, cfg: &PipelineConfig) -> Result<()> {
    let reps = match a.random {
        Some(ClusterCmd::Random { n, seed, notes, out }) => {
            let notes = load_notes(&notes, cfg)?;
            let ids: Vec<String> = notes.ids().map(String::from).collect();
            let reps = random_sample_control(&ids, n, seed)?;
            reps.save(&out)?;
            reps
        }
        None => {
            let need = |v: Option<PathBuf>, flag: &str| v.ok_or_else(|| PipelineError::usage(format!("cluster needs --{flag}")));
            let layout_path = need(a.layout, "layout")?;
            let out = need(a.out, "out")?;
            let (ids, layout) = read_layout(&layout_path)?;
            if let Some(notes) = a.notes {
                let notes = load_notes(&notes, cfg)?;
                if let Some(id) = ids.iter().find(|id| !notes.contains(id)) {
                    return Err(PipelineError::file(&layout_path, format!("layout id {id:?} is not in the notes file")));
                }
            }
            let c = kmeans(&layout.coords, a.k, a.seed)?;
            let reps = select_representatives(&c, &layout.coords, &ids)?;
            reps.save(&out)?;
            reps
        }
    };
    println!("{} representatives", reps.len());
    Ok(())
}

fn rep_notes(reps: &RepresentativeSet, notes: &Corpus) -> Result<Vec<Note>> {
    reps.entries
        .iter()
        .map(|r| notes.get(&r.id).cloned().ok_or_else(|| divsynth_core::Error::MissingNote(r.id.clone()).into()))
        .collect()
}

fn label(a: LabelArgs, services: &Services, cfg: &PipelineConfig) -> Result<()> {
    let notes = load_notes(&a.notes, cfg)?;
    let reps = rep_notes(&RepresentativeSet::load(&a.reps)?, &notes)?;
    let results: Vec<LabelResult> = match a.source {
        LabelFrom::Corpus => reps
            .iter()
            .filter_map(|n| {
                Some(LabelResult {
                    note_id: n.id.clone(),
                    entity: a.entity.clone(),
                    label: n.label?,
                    origin: LabelOrigin::File,
                    raw_response: None,
                })
            })
            .collect(),
        LabelFrom::Llm => {
            let chat = services
                .chat
                .as_ref()
                .ok_or_else(|| PipelineError::usage("--source llm needs chat.provider = \"http\""))?;
            let mut out = Vec::new();
            for r in LlmLabeler::new(chat.as_ref(), &services.templates).label_all(&reps, &a.entity, cfg.concurrency) {
                match r {
                    Ok(l) => out.push(l),
                    Err(e) if e.is_endpoint() => return Err(e.into()),
                    Err(e) => eprintln!("warning: {e}"),
                }
            }
            out
        }
    };
    write_labels(&a.out, &results)?;
    println!("{} of {} representatives labeled", results.len(), reps.len());
    Ok(())
}

fn promptgen(a: PromptgenArgs, cfg: &PipelineConfig) -> Result<()> {
    let notes = load_notes(&a.notes, cfg)?;
    let window = match a.window {
        WindowSetting::Fixed(w) => w,
        WindowSetting::Auto => {
            let [lo, hi] = cfg.window_percentiles;
            token_window(&notes, lo, hi)?
        }
    };
    let batch = match a.method {
        Method::Diversity | Method::Random => {
            let reps_path = a.reps.ok_or_else(|| PipelineError::usage("few-shot methods need --reps"))?;
            let reps = rep_notes(&RepresentativeSet::load(&reps_path)?, &notes)?;
            let mut results: Vec<LabelResult> = reps
                .iter()
                .filter_map(|n| {
                    Some(LabelResult {
                        note_id: n.id.clone(),
                        entity: a.entity.clone(),
                        label: n.label?,
                        origin: LabelOrigin::Llm,
                        raw_response: None,
                    })
                })
                .collect();
            for f in &a.labels {
                results.extend(load_labels(f)?);
            }
            let (labeled, missing) = apply_labels(&reps, &a.entity, &effective_labels(results));
            if !missing.is_empty() {
                eprintln!("warning: {} representatives have no label: {}", missing.len(), missing.join(", "));
            }
            let fs = FewShotConfig {
                per_class: a.per_class,
                shots: a.shots,
                window,
                template_id: cfg.fewshot_template.clone(),
                seed: a.seed,
            };
            build_fewshot_prompts(&labeled, &a.entity, a.method, &fs)?
        }
        Method::Zeroshot => build_zeroshot_prompts(&a.entity, a.per_class, window, &cfg.zeroshot_template, a.seed),
        Method::Realworld => return Err(PipelineError::usage("realworld uses real notes and has no prompts")),
    };
    for w in &batch.warnings {
        eprintln!("warning: {w}");
    }
    batch.save(&a.out)?;
    println!("{} prompts, window {window}", batch.len());
    Ok(())
}

fn generate(a: GenerateArgs, services: &Services, cfg: &PipelineConfig) -> Result<()> {
    let batch = PromptBatch::load(&a.prompts, a.method)?;
    let lookup = match &a.notes {
        Some(p) => load_notes(p, cfg)?,
        None => Corpus::new(cfg.tokenizer()),
    };
    let generator = services.generator(cfg, a.seed);
    let mut checkpoint = a.out.clone().into_os_string();
    checkpoint.push(".checkpoint");
    let checkpoint = PathBuf::from(checkpoint);
    let opts = BatchOptions {
        concurrency: cfg.concurrency,
        checkpoint: Some(checkpoint.clone()),
    };
    let notes: Vec<Note> = generate_batch(&batch, generator.as_ref(), &lookup, &opts)?.into_iter().map(|s| s.to_note()).collect();
    write_notes(&a.out, notes.iter())?;
    std::fs::remove_file(&checkpoint).map_err(|e| PipelineError::file(&checkpoint, e))?;
    println!("{} notes", notes.len());
    Ok(())
}

fn evaluate(cmd: EvaluateCmd, services: &Services, cfg: &PipelineConfig) -> Result<()> {
    let EvaluateCmd::Curve(a) = cmd;
    let baseline = load_notes(&a.baseline, cfg)?.into_notes();
    let pool = load_notes(&a.pool, cfg)?.into_notes();
    let test = load_notes(&a.test, cfg)?.into_notes();
    let method = match a.method.or_else(|| pool.first().and_then(|n| n.method)) {
        Some(m) => m,
        None => return Err(PipelineError::usage("pool notes carry no method; pass --method")),
    };
    let entity = test.first().map(|n| n.entity.clone()).unwrap_or_default();
    let curve_cfg = CurveConfig {
        increment: a.increment,
        iterations: a.iterations,
        repeats: a.repeats,
        seed: a.seed,
        logistic: cfg.logistic,
        concurrency: cfg.concurrency,
    };
    let mut cache = EmbeddingCache::open(a.out.join("embeddings.jsonl"))?;
    let curve = run_learning_curve_notes(&baseline, &pool, &test, services.embedder.as_ref(), &mut cache, &curve_cfg)?;
    let summary = ConditionSummary {
        method,
        entity: entity.clone(),
        thresholds: threshold_report(&curve, None, a.threshold),
        gap_vs_real: None,
        set_similarity_vs_real: None,
    };
    write_atomic(&a.out.join(CURVE_CSV), &curve_csv(&curve, method, &entity)?)?;
    let mut json = serde_json::to_vec_pretty(&summary).map_err(|e| PipelineError::file(&a.out, e))?;
    json.push(b'\n');
    write_atomic(&a.out.join(SUMMARY_JSON), &json)?;
    let last = curve.points.last().expect("curve has a baseline point");
    println!("{} points; final auroc {:.4}, auprc {:.4}", curve.points.len(), last.auroc.mean, last.auprc.mean);
    Ok(())
}

fn turing(cmd: TuringCmd, cfg: &PipelineConfig) -> Result<()> {
    let TuringCmd::Export(a) = cmd;
    let pool = NotePool {
        synthetic: load_notes(&a.synthetic, cfg)?.into_notes(),
        real: load_notes(&a.real, cfg)?.into_notes(),
        label_queue: Vec::new(),
    };
    let store = Store::open(&a.data_dir, pool, divsynth_annotator::store::system_clock())?;
    let session = store.create(&CreateRequest {
        kind: SessionKind::Turing,
        entity: a.entity,
        n_synth: a.n_synth.or(Some(cfg.turing_n_synth)),
        n_real: a.n_real.or(Some(cfg.turing_n_real)),
        seed: a.seed,
    })?;
    if let Some(out) = &a.out {
        #[derive(serde::Serialize)]
        struct Blinded<'a> {
            item_id: &'a str,
            text: &'a str,
        }
        let rows: Vec<Blinded> = session.items.iter().map(|i| Blinded { item_id: &i.item_id, text: &i.text }).collect();
        write_json_lines(out, &rows)?;
    }
    println!("{}", session.session_id);
    Ok(())
}

fn serve_cmd(a: ServeArgs, cfg: &PipelineConfig) -> Result<()> {
    let read = |p: &Option<PathBuf>| -> Result<Vec<Note>> {
        match p {
            Some(p) => Ok(load_notes(p, cfg)?.into_notes()),
            None => Ok(Vec::new()),
        }
    };
    let pool = NotePool {
        synthetic: read(&a.synthetic)?,
        real: read(&a.real)?,
        label_queue: read(&a.label_queue)?,
    };
    let token = match &a.token_env {
        Some(var) => Some(std::env::var(var).map_err(|_| PipelineError::usage(format!("{var} is not set")))?),
        None => None,
    };
    let store = Store::open(&a.data_dir, pool, divsynth_annotator::store::system_clock())?;
    let app = router(AppState { store: Arc::new(store), token }, a.static_dir);
    let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::file(&a.data_dir, e))?;
    rt.block_on(serve(a.addr, app)).map_err(|e| PipelineError::file(&a.data_dir, format!("server: {e}")))
}

fn run(a: RunArgs, cfg: &PipelineConfig) -> Result<()> {
    let methods: Vec<Method> = if a.method == "all" {
        Method::ALL.to_vec()
    } else {
        vec![a.method.parse().map_err(|e: divsynth_core::Error| PipelineError::usage(e.to_string()))?]
    };
    let entities: Vec<String> = if a.entity == "all" { cfg.entities.clone() } else { vec![a.entity] };
    let services = Services::from_config(cfg)?;
    for entity in &entities {
        let runs = run_methods(cfg, &services, entity, &methods)?;
        for r in &runs {
            let t = &r.summary.thresholds;
            let last = r.curve.points.last().expect("curve has a baseline point");
            println!(
                "{entity}\t{}\tfinal auroc {:.4}\tauprc {:.4}\tdata to {}: {}",
                r.method,
                last.auroc.mean,
                last.auprc.mean,
                cfg.threshold,
                t.data_to_auroc.map_or_else(|| "not reached".into(), |d| format!("{d:.1}"))
            );
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.master_seed {
        cfg.master_seed = seed;
    }
    match cli.command {
        Command::Corpus(c) => corpus(c, &cfg),
        Command::Reduce(a) => reduce(a, &cfg),
        Command::Cluster(a) => cluster(a, &cfg),
        Command::Turing(c) => turing(c, &cfg),
        Command::Serve(a) => serve_cmd(a, &cfg),
        Command::Run(a) => run(a, &cfg),
        Command::Embed(a) => embed(a, &Services::from_config(&cfg)?, &cfg),
        Command::Label(a) => label(a, &Services::from_config(&cfg)?, &cfg),
        Command::Promptgen(a) => promptgen(a, &cfg),
        Command::Generate(a) => generate(a, &Services::from_config(&cfg)?, &cfg),
        Command::Evaluate(c) => evaluate(c, &Services::from_config(&cfg)?, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
