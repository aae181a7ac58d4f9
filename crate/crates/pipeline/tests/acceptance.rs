//! Acceptance gate. Each test is one criterion; it prints a single
//! `ACCEPTANCE PASS|FAIL` line with its measurements and wall time, and
//! fails when a check fails or the time limit is exceeded. Tests take a
//! shared lock so that timings are not inflated by each other.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use divsynth::config::{ChatProvider, PipelineConfig};
use divsynth::mockdata::{mock_corpus, style_coverage, MockCorpusConfig};
use divsynth::{run_methods, Services};
use divsynth_annotator::store::Clock;
use divsynth_annotator::{router, AppState, Choice, NotePool, Store};
use divsynth_core::cluster::{adjusted_rand_index, inertia, kmeans, kmeans_pp_init, lloyd, select_representatives, Point};
use divsynth_core::corpus::{write_notes, Corpus, Label, Method, Note, Source, TokenizerMode};
use divsynth_core::embed::{EmbeddingCache, MockEmbedder};
use divsynth_core::metrics::{auprc, auroc, binomial_test, data_to_threshold, run_learning_curve_notes, steps_to_threshold, CurveConfig, LearningCurve, LogisticParams, Metric};
use divsynth_core::promptgen::{build_fewshot_prompts, render, FewShotConfig};
use divsynth_core::reduce::{build_fuzzy_graph, knn_exact, smooth_knn, trustworthiness, umap, UmapParams};
use divsynth_core::rng;
use divsynth_core::templates::TemplateStore;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};
use tower::ServiceExt;

static SERIAL: Mutex<()> = Mutex::new(());

/// Writes past the test harness's output capture so verdicts show without
/// `--nocapture`.
fn verdict(line: String) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

/// Runs one criterion body, prints its verdict line and re-raises failures.
fn criterion(name: &str, limit: Duration, body: impl FnOnce() -> String) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    match outcome {
        Ok(detail) if elapsed <= limit => {
            verdict(format!("ACCEPTANCE PASS {name}: {detail} ({:.1} s, limit {} s)", elapsed.as_secs_f64(), limit.as_secs()));
        }
        Ok(detail) => {
            verdict(format!("ACCEPTANCE FAIL {name}: {detail} ({:.1} s exceeds {} s)", elapsed.as_secs_f64(), limit.as_secs()));
            panic!("{name} exceeded its time limit");
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(format!("ACCEPTANCE FAIL {name}: {msg} ({:.1} s)", elapsed.as_secs_f64()));
            std::panic::resume_unwind(panic);
        }
    }
}

// ---------------------------------------------------------------- metrics

/// All positive-negative pairs, ties counting one half.
fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut sum = 0.0;
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                if scores[i] > scores[j] {
                    sum += 1.0;
                } else if scores[i] == scores[j] {
                    sum += 0.5;
                }
            }
        }
    }
    sum / (p * n) as f64
}

/// Walks the ranking one item at a time, picking the next item by a linear
/// scan (highest score, lowest index first) and recounting hits at each step.
fn auprc_stepwise(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let positives = labels.iter().filter(|&&l| l).count();
    let mut taken = vec![false; n];
    let mut ranked = Vec::with_capacity(n);
    let mut sum = 0.0;
    for k in 1..=n {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        ranked.push(b);
        if labels[b] {
            let hits = ranked.iter().filter(|&&i| labels[i]).count();
            sum += hits as f64 / k as f64;
        }
    }
    sum / positives as f64
}

/// `P(X >= k)`, `X ~ Binomial(n, a/b)`, as an exact integer fraction over `b^n`.
fn binomial_tail_exact(k: u64, n: u64, a: u128, b: u128) -> f64 {
    let mut c: u128 = 1;
    let mut total: u128 = 0;
    for i in 0..=n {
        if i >= k {
            total += c * a.pow(i as u32) * (b - a).pow((n - i) as u32);
        }
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    total as f64 / b.pow(n as u32) as f64
}

#[test]
fn metric_oracles() {
    criterion("metric oracles", Duration::from_secs(30), || {
        let mut r = rng::seeded(20240501);
        for instance in 0..500 {
            let n = r.random_range(2..=200);
            // coarse score grids force ties on many instances
            let levels = if instance % 3 == 0 { r.random_range(2..=6) } else { 1_000_000 };
            let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let a = auroc(&scores, &labels).unwrap();
            assert_eq!(a, auroc_pairs(&scores, &labels), "auroc mismatch on instance {instance}");
            assert_eq!(auprc(&scores, &labels).unwrap(), auprc_stepwise(&scores, &labels), "auprc mismatch on instance {instance}");
        }
        let mut max_err: f64 = 0.0;
        let mut cases = 0;
        for (a, b) in [(1u128, 2u128), (1, 4), (3, 4)] {
            let p0 = a as f64 / b as f64;
            for n in 0..=60u64 {
                for k in 0..=n {
                    max_err = max_err.max((binomial_test(k, n, p0) - binomial_tail_exact(k, n, a, b)).abs());
                    cases += 1;
                }
            }
        }
        assert!(max_err <= 1e-12, "binomial tail error {max_err}");
        format!("AUROC and AUPRC exact on 500 instances; binomial max error {max_err:.1e} over {cases} cases")
    });
}

// ---------------------------------------------------------------- k-means

fn sq(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

#[test]
fn kmeans_properties() {
    criterion("k-means", Duration::from_secs(30), || {
        let mut r = rng::seeded(99);
        let mut steps = 0;
        for instance in 0..100u64 {
            let n = r.random_range(10..=300);
            let k = r.random_range(1..=10.min(n));
            let pts: Vec<Point> = (0..n).map(|_| [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]).collect();
            let init = kmeans_pp_init(&pts, k, instance).unwrap();
            let c = lloyd(&pts, &init, 0.0, 100).unwrap();
            for w in c.inertia_history.windows(2) {
                assert!(w[1] <= w[0], "inertia rose from {} to {} on instance {instance}", w[0], w[1]);
            }
            steps += c.inertia_history.len();
            assert_eq!(c.inertia, inertia(&pts, &c.assignments, &c.centroids));
            let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
            let reps = select_representatives(&c, &pts, &ids).unwrap();
            for e in &reps.entries {
                let centroid = c.centroids[e.cluster];
                let mut best = usize::MAX;
                for i in 0..n {
                    if c.assignments[i] == e.cluster && (best == usize::MAX || sq(&pts[i], &centroid) < sq(&pts[best], &centroid)) {
                        best = i;
                    }
                }
                assert_eq!(e.id, ids[best], "medoid of cluster {} on instance {instance}", e.cluster);
            }
        }
        let mut r = rng::seeded(3);
        let centers = [[0.0, 0.0], [25.0, 0.0], [0.0, 25.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in centers.iter().enumerate() {
            for _ in 0..100 {
                let dx: f64 = StandardNormal.sample(&mut r);
                let dy: f64 = StandardNormal.sample(&mut r);
                pts.push([c[0] + dx, c[1] + dy]);
                truth.push(b);
            }
        }
        let ari = adjusted_rand_index(&kmeans(&pts, 3, 1).unwrap().assignments, &truth);
        assert_eq!(ari, 1.0);
        format!("100 instances, {steps} Lloyd steps non-increasing, medoids = brute force; 3-blob ARI {ari}")
    });
}

// ---------------------------------------------------------------- UMAP

fn gaussian_blobs(n_per: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| r.random_range(-10.0..10.0)).collect()).collect();
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..n_per {
            pts.push(
                c.iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        x + z
                    })
                    .collect(),
            );
            truth.push(b);
        }
    }
    (pts, truth)
}

#[test]
fn umap_quality() {
    criterion("UMAP quality", Duration::from_secs(120), || {
        let (pts, truth) = gaussian_blobs(100, 50, 42);
        let params = UmapParams { n_epochs: 500, seed: 7, ..UmapParams::default() };
        let layout = umap(&pts, &params).unwrap();
        let t = trustworthiness(&pts, &layout, 10);
        let ari = adjusted_rand_index(&kmeans(&layout.coords, 3, 0).unwrap().assignments, &truth);
        assert!(t >= 0.90, "trustworthiness {t}");
        assert!(ari >= 0.9, "ari {ari}");

        let unit: Vec<Vec<f64>> = pts
            .iter()
            .map(|v| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect();
        let knn = knn_exact(&unit, params.n_neighbors).unwrap();
        let target = (params.n_neighbors as f64).log2();
        let mut worst: f64 = 0.0;
        let mut interior = 0;
        for row in &knn.distances {
            let s = smooth_knn(row, params.n_neighbors);
            if s.interior {
                interior += 1;
                let sum: f64 = row.iter().map(|d| (-(d - s.rho).max(0.0) / s.sigma).exp()).sum();
                worst = worst.max((sum - target).abs());
            }
        }
        assert!(interior > 0 && worst < 1e-4, "smooth-kNN residual {worst} over {interior} rows");
        let g = build_fuzzy_graph(&knn);
        for &(i, j, w) in g.edges() {
            assert_eq!(g.weight(j, i), w, "asymmetric edge {i}-{j}");
        }
        let again = umap(&pts, &params).unwrap();
        let identical = layout.coords.iter().zip(&again.coords).all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
        assert!(identical, "same-seed layouts differ");
        format!("trustworthiness {t:.4}, ARI {ari:.4}, residual {worst:.1e} ({interior} rows), {} symmetric edges, bit-identical rerun", g.edges().len())
    });
}

// ---------------------------------------------------------------- prompts

#[test]
fn prompt_batch_contract() {
    criterion("prompt batch", Duration::from_secs(60), || {
        let notes = mock_corpus(&MockCorpusConfig { notes_per_entity: 2000, ..Default::default() });
        let corpus = Corpus::from_notes(notes, TokenizerMode::Whitespace).unwrap();
        let window = divsynth_core::corpus::token_window(&corpus, 25.0, 75.0).unwrap();
        let mut r = rng::seeded(5);
        let mut reps: Vec<Note> = corpus.notes().to_vec();
        reps.shuffle(&mut r);
        reps.truncate(50);
        let cfg = FewShotConfig::new(window, 11);
        let batch = build_fewshot_prompts(&reps, "effusion", Method::Diversity, &cfg).unwrap();
        assert_eq!(batch.len(), 650);
        assert_eq!(batch.count(Label::Present), 325);
        assert_eq!(batch.count(Label::Absent), 325);
        let by_id: HashMap<&str, &Note> = reps.iter().map(|n| (n.id.as_str(), n)).collect();
        let ids: BTreeSet<&str> = batch.prompts.iter().map(|p| p.prompt_id.as_str()).collect();
        assert_eq!(ids.len(), 650);
        let templates = TemplateStore::builtin();
        let phrase = format!("between {} and {} tokens", window.low, window.high);
        for p in &batch.prompts {
            assert_eq!(p.shot_ids.len(), 5, "{}", p.prompt_id);
            for id in &p.shot_ids {
                assert_eq!(by_id[id.as_str()].label, Some(p.target_label), "{}: shot {id} has the other label", p.prompt_id);
            }
            assert_eq!(p.token_window, window);
            let messages = render(p, &corpus, &templates).unwrap();
            let text: String = messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
            assert!(text.contains(&phrase), "{} lacks the window instruction", p.prompt_id);
        }
        format!("650 prompts, 325 per class, 5 same-class shots each, window {window} rendered")
    });
}

// ---------------------------------------------------------------- learning curve

#[test]
fn learning_curve_harness() {
    criterion("learning-curve harness", Duration::from_secs(120), || {
        let notes = mock_corpus(&MockCorpusConfig { notes_per_entity: 700, seed: 4, ..Default::default() });
        let (test, rest) = notes.split_at(200);
        let (baseline, pool) = rest.split_at(50);
        let embedder = MockEmbedder::new(256, 0);
        let mut cache = EmbeddingCache::in_memory();
        let cfg = CurveConfig {
            increment: 25,
            iterations: 15,
            repeats: 2,
            seed: 8,
            logistic: LogisticParams { epochs: 150, ..Default::default() },
            concurrency: 1,
        };
        let curve = run_learning_curve_notes(baseline, pool, test, &embedder, &mut cache, &cfg).unwrap();
        assert_eq!(curve.points.len(), 16);
        assert_eq!(curve.points.last().unwrap().train_size, 425);
        assert_eq!(curve.points.last().unwrap().n_augment, 375);

        let mut leaked = pool.to_vec();
        leaked[200] = test[3].clone();
        let err = run_learning_curve_notes(baseline, &leaked, test, &embedder, &mut cache, &cfg).unwrap_err();
        assert!(matches!(err, divsynth_core::Error::IdOverlap(ref id) if *id == test[3].id), "{err}");
        let mut leaked_base = baseline.to_vec();
        leaked_base[0] = test[0].clone();
        assert!(matches!(run_learning_curve_notes(&leaked_base, pool, test, &embedder, &mut cache, &cfg), Err(divsynth_core::Error::IdOverlap(_))));

        let mut auroc = vec![0.5; 16];
        auroc[4] = 0.84;
        auroc[5] = 0.86;
        for v in auroc.iter_mut().skip(6) {
            *v = 0.9;
        }
        let synthetic = LearningCurve::from_means(25, &auroc, &auroc);
        assert_eq!(steps_to_threshold(&synthetic, Metric::Auroc, 0.85), Some(5.0));
        let d = data_to_threshold(&synthetic, Metric::Auroc, 0.85).unwrap();
        assert!((d - 112.5).abs() < 1e-9, "{d}");
        let flat = LearningCurve::from_means(25, &[0.6; 16], &[0.6; 16]);
        assert_eq!(data_to_threshold(&flat, Metric::Auroc, 0.85), None);
        let at_start = LearningCurve::from_means(25, &[0.9; 16], &[0.9; 16]);
        assert_eq!(steps_to_threshold(&at_start, Metric::Auroc, 0.85), Some(0.0));
        assert_eq!(data_to_threshold(&at_start, Metric::Auroc, 0.85), Some(0.0));
        let last = curve.points.last().unwrap();
        format!(
            "16 points, final size 425, final AUROC {:.3}; 112.5 interpolation; overlap rejected in pool and baseline",
            last.auroc.mean
        )
    });
}

// ---------------------------------------------------------------- directional

struct Tally {
    coverage: f64,
    data: f64,
    similarity: f64,
}

#[test]
fn directional_ordering() {
    criterion("directional ordering", Duration::from_secs(600), || {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("notes.jsonl");
        let mock = MockCorpusConfig::default();
        let notes = mock_corpus(&mock);
        write_notes(&corpus_path, notes.iter()).unwrap();
        const SEEDS: u64 = 20;
        let mut tally: HashMap<Method, Tally> = Method::ALL
            .iter()
            .map(|&m| (m, Tally { coverage: 0.0, data: 0.0, similarity: 0.0 }))
            .collect();
        for seed in 0..SEEDS {
            let mut cfg = PipelineConfig {
                corpus: corpus_path.clone(),
                out_dir: dir.path().join(format!("seed-{seed}")),
                master_seed: seed,
                working_n: 2000,
                repeats: 3,
                concurrency: 1,
                mock_corpus: mock.clone(),
                ..Default::default()
            };
            cfg.logistic.epochs = 200;
            cfg.chat.provider = ChatProvider::Lexicon;
            let services = Services::from_config(&cfg).unwrap();
            let runs = run_methods(&cfg, &services, "effusion", &Method::ALL).unwrap();
            let censored = (cfg.iterations + 1) as f64 * cfg.increment as f64;
            for r in runs {
                let t = tally.get_mut(&r.method).unwrap();
                if r.method.is_few_shot() {
                    assert_eq!(r.baseline.len(), 50);
                    t.coverage += style_coverage(&r.baseline, "effusion");
                }
                t.data += r.summary.thresholds.data_to_auroc.unwrap_or(censored);
                t.similarity += r.summary.set_similarity_vs_real.unwrap();
            }
        }
        let mean = |m: Method, f: fn(&Tally) -> f64| f(&tally[&m]) / SEEDS as f64;
        let cov = |m| mean(m, |t| t.coverage);
        let data = |m| mean(m, |t| t.data);
        let sim = |m| mean(m, |t| t.similarity);
        use Method::*;
        let detail = format!(
            "coverage diversity {:.2} random {:.2}; data to 0.85 realworld {:.1} diversity {:.1} random {:.1} zeroshot {:.1}; similarity diversity {:.4} zeroshot {:.4}",
            cov(Diversity),
            cov(Random),
            data(Realworld),
            data(Diversity),
            data(Random),
            data(Zeroshot),
            sim(Diversity),
            sim(Zeroshot)
        );
        assert!(cov(Diversity) >= 8.0 && cov(Random) < cov(Diversity), "(a) fails: {detail}");
        assert!(data(Realworld) <= data(Diversity), "(b) real before diversity fails: {detail}");
        assert!(data(Diversity) <= data(Random) && data(Diversity) <= data(Zeroshot), "(b) diversity before controls fails: {detail}");
        assert!(sim(Diversity) > sim(Zeroshot), "(c) fails: {detail}");
        detail
    });
}

// ---------------------------------------------------------------- determinism

fn read_reports(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["curve.csv", "summary.json", "manifest.json"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}

#[test]
fn end_to_end_determinism() {
    criterion("end-to-end determinism", Duration::from_secs(120), || {
        let dir = tempfile::tempdir().unwrap();
        let bin = env!("CARGO_BIN_EXE_divsynth");
        let run = |args: &[&str]| {
            let out = Command::new(bin).args(args).current_dir(dir.path()).output().unwrap();
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        };
        std::fs::write(
            dir.path().join("a.toml"),
            "corpus = \"notes.jsonl\"\nout_dir = \"a\"\nworking_n = 2000\nrepeats = 2\nmaster_seed = 17\n[logistic]\nepochs = 150\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("b.toml"), std::fs::read_to_string(dir.path().join("a.toml")).unwrap().replace("\"a\"", "\"b\"")).unwrap();
        run(&["--config", "a.toml", "corpus", "mock", "--out", "notes.jsonl"]);
        run(&["--config", "a.toml", "run", "--method", "diversity", "--entity", "effusion"]);
        let first = read_reports(&dir.path().join("a/effusion/diversity"));
        run(&["--config", "a.toml", "run", "--method", "diversity", "--entity", "effusion"]);
        let second = read_reports(&dir.path().join("a/effusion/diversity"));
        run(&["--config", "b.toml", "run", "--method", "diversity", "--entity", "effusion"]);
        let fresh = read_reports(&dir.path().join("b/effusion/diversity"));
        for ((name, a), ((_, b), (_, c))) in first.iter().zip(second.iter().zip(&fresh)) {
            assert!(a == b, "{name} differs between consecutive runs");
            assert!(a == c, "{name} differs from a run in a fresh directory");
        }
        let bytes: usize = first.iter().map(|(_, b)| b.len()).sum();
        format!("curve.csv, summary.json, manifest.json ({bytes} bytes) identical across consecutive and fresh runs")
    });
}

// ---------------------------------------------------------------- annotator

fn fixed_clock() -> Clock {
    let t = Arc::new(std::sync::atomic::AtomicU64::new(1));
    Arc::new(move || t.fetch_add(1, std::sync::atomic::Ordering::SeqCst))
}

fn annotator_pool() -> NotePool {
    let synthetic = (0..80)
        .map(|i| {
            let mut n = Note::real(format!("syn-{i:03}"), format!("generated note {i} pleural fluid"), "effusion").with_label(Label::Present);
            n.source = Source::Synthetic;
            n.method = Some(Method::Diversity);
            n
        })
        .collect();
    let real = (0..80)
        .map(|i| Note::real(format!("chart-{i:03}"), format!("chart note {i} lungs clear"), "effusion").with_label(Label::Absent))
        .collect();
    NotePool { synthetic, real, label_queue: Vec::new() }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

/// Strings that would reveal an item's origin if they appeared in a response.
fn secrets(pool: &NotePool) -> Vec<String> {
    let mut s: Vec<String> = vec!["hidden_truth".into(), "\"synthetic\"".into(), "\"real\"".into(), "source".into(), "method".into(), "diversity".into(), "label".into()];
    s.extend(pool.synthetic.iter().chain(&pool.real).map(|n| format!("\"{}\"", n.id)));
    s
}

#[test]
fn annotator_service() {
    criterion("annotator service", Duration::from_secs(60), || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async {
            let dir = tempfile::tempdir().unwrap();
            let pool = annotator_pool();
            let store = Arc::new(Store::open(dir.path(), pool.clone(), fixed_clock()).unwrap());
            let app = router(AppState { store: store.clone(), token: None }, None);
            let forbidden = secrets(&pool);
            let check_blind = |bytes: &[u8]| {
                let text = String::from_utf8_lossy(bytes);
                for s in &forbidden {
                    assert!(!text.contains(s.as_str()), "open-session response leaks {s}: {text}");
                }
            };

            let (status, body) = call(&app, "POST", "/api/sessions", Some(json!({"kind": "turing", "entity": "effusion", "n_synth": 50, "n_real": 50, "seed": 9}))).await;
            assert_eq!(status, StatusCode::CREATED);
            check_blind(&body);
            let id = serde_json::from_slice::<Value>(&body).unwrap()["session_id"].as_str().unwrap().to_string();
            let truth: HashMap<String, Choice> = store.session(&id).unwrap().items.iter().map(|i| (i.item_id.clone(), i.hidden_truth.unwrap())).collect();
            assert_eq!(truth.len(), 100);

            let mut judged = 0;
            loop {
                let (status, body) = call(&app, "GET", &format!("/api/sessions/{id}/next"), None).await;
                assert_eq!(status, StatusCode::OK);
                let v: Value = serde_json::from_slice(&body).unwrap();
                if v.get("done").is_some() {
                    break;
                }
                check_blind(&body);
                let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
                assert_eq!(keys, BTreeSet::from(["item_id", "text", "position", "total"]));
                let (_, listing) = call(&app, "GET", "/api/sessions", None).await;
                check_blind(&listing);
                let item = v["item_id"].as_str().unwrap();
                let choice = truth[item];
                let (status, ack) = call(&app, "POST", &format!("/api/sessions/{id}/judgments"), Some(json!({"item_id": item, "choice": choice}))).await;
                assert_eq!(status, StatusCode::OK);
                if judged < 99 {
                    check_blind(&ack);
                }
                judged += 1;
            }
            assert_eq!(judged, 100);

            let (_, body) = call(&app, "GET", &format!("/api/sessions/{id}/report"), None).await;
            let report: Value = serde_json::from_slice(&body).unwrap();
            let exact = binomial_tail_exact(50, 50, 1, 2);
            assert_eq!(exact, 2f64.powi(-50));
            for class in ["synth", "real"] {
                let p = report["report"][format!("p_value_{class}")].as_f64().unwrap();
                assert!((p - exact).abs() <= 1e-12 * exact, "{class}: {p} vs {exact}");
                assert_eq!(report["report"][format!("accuracy_{class}")].as_f64(), Some(1.0));
            }

            // replaying every prefix of the event log equals the state at that point
            let log = dir.path().join(format!("{id}.events.jsonl"));
            let text = std::fs::read_to_string(&log).unwrap();
            let lines: Vec<&str> = text.split_inclusive('\n').collect();
            let full = store.session(&id).unwrap();
            for cut in 1..=lines.len() {
                let d = tempfile::tempdir().unwrap();
                std::fs::write(d.path().join(format!("{id}.events.jsonl")), lines[..cut].concat()).unwrap();
                let reopened = Store::open(d.path(), pool.clone(), fixed_clock()).unwrap();
                let s = reopened.session(&id).unwrap();
                assert_eq!(s.items, full.items);
                assert_eq!(s.judgments.len(), cut - 1);
                for (item, j) in &s.judgments {
                    assert_eq!(full.judgments[item], *j);
                }
                if cut < lines.len() {
                    // a crash in the middle of the next append
                    let next = lines[cut];
                    std::fs::write(d.path().join(format!("{id}.events.jsonl")), lines[..cut].concat() + &next[..next.len() / 2]).unwrap();
                    let torn = Store::open(d.path(), pool.clone(), fixed_clock()).unwrap();
                    assert_eq!(torn.session(&id).unwrap(), s, "torn line after prefix {cut}");
                }
                if cut == lines.len() {
                    assert_eq!(s, full);
                    assert_eq!(reopened.turing_report(&id).unwrap(), store.turing_report(&id).unwrap());
                }
            }
            format!("100 blinded items over HTTP, {} log prefixes replayed with and without a torn tail, p = {:e} per class", lines.len(), exact)
        })
    });
}
