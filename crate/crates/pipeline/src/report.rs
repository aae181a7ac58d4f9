//! Report files: per-condition curve, summary and manifest, plus the
//! cross-method comparison.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use divsynth_core::corpus::{Method, TokenWindow};
use divsynth_core::metrics::{ConditionSummary, LearningCurve, Metric};
use serde::{Deserialize, Serialize};

use crate::condition::EntityData;
use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::seeds::stage;
use crate::stages::{ids_digest, sha256_hex, write_atomic};

pub const CURVE_CSV: &str = "curve.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_CSV: &str = "comparison.csv";

/// Everything needed to tell whether two runs used the same inputs. Holds no
/// absolute paths or clock readings, so identical inputs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub method: Method,
    pub entity: String,
    /// Digest of the configuration with its filesystem paths cleared.
    pub config_digest: String,
    pub corpus_digest: String,
    pub test_ids_digest: String,
    pub working_ids_digest: String,
    pub master_seed: u64,
    pub window: TokenWindow,
    pub seeds: BTreeMap<String, u64>,
    pub stage_files: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(cfg: &PipelineConfig, data: &EntityData, method: Method, mut seeds: BTreeMap<String, u64>, stage_files: BTreeMap<String, String>) -> Self {
        seeds.insert(stage::SPLIT.into(), data.split_seed);
        seeds.insert(stage::WORKING.into(), data.working_seed);
        Manifest {
            method,
            entity: data.entity.clone(),
            config_digest: location_free_digest(cfg),
            corpus_digest: data.corpus_digest.clone(),
            test_ids_digest: ids_digest(data.test.iter().map(|n| n.id.as_str())),
            working_ids_digest: ids_digest(data.working.ids()),
            master_seed: cfg.master_seed,
            window: data.window,
            seeds,
            stage_files,
            outputs: BTreeMap::new(),
        }
    }
}

pub fn location_free_digest(cfg: &PipelineConfig) -> String {
    let mut c = cfg.clone();
    c.corpus = PathBuf::new();
    c.out_dir = PathBuf::new();
    c.digest()
}

fn to_json(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn curve_csv(curve: &LearningCurve, method: Method, entity: &str) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PipelineError::file(CURVE_CSV, e);
    w.write_record([
        "method", "entity", "step", "n_augment", "auroc_mean", "auroc_lo", "auroc_hi", "auprc_mean", "auprc_lo", "auprc_hi",
    ])
    .map_err(err)?;
    for p in &curve.points {
        let a = p.metric(Metric::Auroc);
        let b = p.metric(Metric::Auprc);
        w.write_record([
            method.as_str().to_string(),
            entity.to_string(),
            p.step.to_string(),
            p.n_augment.to_string(),
            a.mean.to_string(),
            a.lo.to_string(),
            a.hi.to_string(),
            b.mean.to_string(),
            b.lo.to_string(),
            b.hi.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| PipelineError::file(CURVE_CSV, e))
}

/// Writes `curve.csv`, `summary.json` and `manifest.json` into `dir`; the
/// returned manifest lists the digests of the first two.
pub fn write_condition_reports(dir: &Path, curve: &LearningCurve, summary: &ConditionSummary, mut manifest: Manifest) -> Result<Manifest> {
    let csv = curve_csv(curve, summary.method, &summary.entity)?;
    let json = to_json(summary);
    write_atomic(&dir.join(CURVE_CSV), &csv)?;
    write_atomic(&dir.join(SUMMARY_JSON), &json)?;
    manifest.outputs.insert(CURVE_CSV.into(), sha256_hex(&csv));
    manifest.outputs.insert(SUMMARY_JSON.into(), sha256_hex(&json));
    write_atomic(&dir.join(MANIFEST_JSON), &to_json(&manifest))?;
    Ok(manifest)
}

/// One row per method of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub final_auroc: f64,
    pub final_auprc: f64,
    #[serde(flatten)]
    pub summary: ConditionSummary,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| PipelineError::file(COMPARISON_CSV, e);
    w.write_record([
        "method",
        "entity",
        "final_auroc",
        "final_auprc",
        "steps_to_auroc",
        "data_to_auroc",
        "steps_to_auprc",
        "data_to_auprc",
        "ratio_vs_real",
        "gap_auroc_pct",
        "gap_auprc_pct",
        "set_similarity",
    ])
    .map_err(err)?;
    for r in rows {
        let t = &r.summary.thresholds;
        let gap = r.summary.gap_vs_real;
        w.write_record([
            r.summary.method.as_str().to_string(),
            r.summary.entity.clone(),
            r.final_auroc.to_string(),
            r.final_auprc.to_string(),
            opt(t.steps_to_auroc),
            opt(t.data_to_auroc),
            opt(t.steps_to_auprc),
            opt(t.data_to_auprc),
            opt(t.ratio_vs_real),
            opt(gap.map(|g| g.auroc.gap_pct)),
            opt(gap.map(|g| g.auprc.gap_pct)),
            opt(r.summary.set_similarity_vs_real),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| PipelineError::file(COMPARISON_CSV, e))
}

pub fn write_comparison(dir: &Path, rows: &[ComparisonRow]) -> Result<()> {
    write_atomic(&dir.join(COMPARISON_JSON), &to_json(&rows))?;
    write_atomic(&dir.join(COMPARISON_CSV), &comparison_csv(rows)?)
}
