//! Ranking metrics, the logistic classifier head, learning curves and the
//! threshold, ratio, gap and Turing-test reports built on them.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Label, Method, Note, Source};
use crate::embed::{embed_batch, Embedder, EmbeddingCache};
use crate::error::{Error, Result};
use crate::par::parallel_map;
use crate::rng;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// positive–negative pairs in which the positive scores higher, ties counting
/// one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the U statistic, accumulated over groups of tied scores
    let mut u2: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let (p, n) = order[i..j].iter().fold((0u64, 0u64), |(p, n), &k| {
            if labels[k] {
                (p + 1, n)
            } else {
                (p, n + 1)
            }
        });
        u2 += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Average precision: precision at every positive in the score-descending
/// order (ties by original index), averaged over positives.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / pos as f64)
}

/// One-sided exact binomial tail `P(X >= k)` for `X ~ Binomial(n, p0)`.
pub fn binomial_test(k: u64, n: u64, p0: f64) -> f64 {
    assert!(k <= n, "binomial_test needs k <= n");
    assert!((0.0..=1.0).contains(&p0), "p0 must be a probability");
    if k == 0 {
        return 1.0;
    }
    if p0 == 0.0 {
        return 0.0;
    }
    if p0 == 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
    let ln_n = ln_gamma(n as f64 + 1.0);
    let tail: f64 = (k..=n)
        .rev()
        .map(|i| {
            let ln_c = ln_n - ln_gamma(i as f64 + 1.0) - ln_gamma((n - i) as f64 + 1.0);
            (ln_c + i as f64 * lp + (n - i) as f64 * lq).exp()
        })
        .sum();
    tail.min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-3,
            epochs: 500,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

const MIN_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub params: LogisticParams,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean logistic loss plus `l2/2·|w|²` on standardized rows.
fn loss(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let data: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &t)| {
            let z = dot(row, w) + b;
            softplus(z) - t * z
        })
        .sum::<f64>()
        / x.len() as f64;
    data + 0.5 * l2 * dot(w, w)
}

/// L2-regularized logistic regression by full-batch gradient descent on
/// standardized features, starting from zero weights. An epoch whose step
/// would not lower the loss is rejected and the learning rate halved, so the
/// loss never increases.
pub fn train_logistic(features: &[Vec<f64>], labels: &[bool], params: &LogisticParams) -> Result<LogisticModel> {
    let n = features.len();
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} rows for {} labels", labels.len())));
    }
    if n < 2 {
        return Err(Error::invalid("logistic regression needs at least 2 rows"));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
    }
    let mut mean = vec![0.0; d];
    for row in features {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for row in features {
        for ((s, x), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    scale.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt().max(MIN_SCALE));
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|row| row.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut lr = params.learning_rate;
    let initial_loss = loss(&x, &y, &w, b, params.l2);
    let mut current = initial_loss;
    let mut grad_w = vec![0.0; d];
    let mut trial_w = vec![0.0; d];
    for _ in 0..params.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &t) in x.iter().zip(&y) {
            let r = sigmoid(dot(row, &w) + b) - t;
            grad_b += r;
            for (g, v) in grad_w.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        let inv = 1.0 / n as f64;
        for ((tw, &wi), &g) in trial_w.iter_mut().zip(&w).zip(&grad_w) {
            *tw = wi - lr * (g * inv + params.l2 * wi);
        }
        let trial_b = b - lr * grad_b * inv;
        let trial = loss(&x, &y, &trial_w, trial_b, params.l2);
        if trial < current {
            std::mem::swap(&mut w, &mut trial_w);
            b = trial_b;
            current = trial;
        } else {
            lr *= 0.5;
        }
    }
    Ok(LogisticModel {
        weights: w,
        bias: b,
        feature_mean: mean,
        feature_scale: scale,
        params: *params,
        initial_loss,
        final_loss: current,
    })
}

/// Largest magnitude allowed for the affine score before the sigmoid.
const SCORE_CLAMP: f64 = 30.0;

impl LogisticModel {
    pub fn score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: row.len(),
            });
        }
        let z: f64 = row
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .zip(&self.weights)
            .map(|(((x, m), s), w)| (x - m) / s * w)
            .sum::<f64>()
            + self.bias;
        Ok(if z.is_nan() { 0.0 } else { z.clamp(-SCORE_CLAMP, SCORE_CLAMP) })
    }

    /// Probabilities strictly inside (0, 1).
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.score(r).map(sigmoid)).collect()
    }
}

/// One embedded, labeled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auroc,
    Auprc,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Auroc => "auroc",
            Metric::Auprc => "auprc",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auroc" => Ok(Metric::Auroc),
            "auprc" => Ok(Metric::Auprc),
            _ => Err(Error::invalid(format!("unknown metric {s:?}"))),
        }
    }
}

/// Mean with a two-sided 95% t interval over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Estimate {
        let n = values.len();
        assert!(n > 0, "estimate over no values");
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate { mean, lo: mean, hi: mean };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let half = t * (var / n as f64).sqrt();
        Estimate { mean, lo: mean - half, hi: mean + half }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub n_augment: usize,
    pub train_size: usize,
    pub auroc: Estimate,
    pub auprc: Estimate,
}

impl CurvePoint {
    pub fn metric(&self, m: Metric) -> Estimate {
        match m {
            Metric::Auroc => self.auroc,
            Metric::Auprc => self.auprc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    pub repeats: usize,
    pub increment: usize,
}

impl LearningCurve {
    /// A curve with point estimates only (zero-width intervals), e.g. for
    /// report arithmetic on known values.
    pub fn from_means(increment: usize, auroc: &[f64], auprc: &[f64]) -> Self {
        assert_eq!(auroc.len(), auprc.len());
        let point = |v: f64| Estimate { mean: v, lo: v, hi: v };
        LearningCurve {
            points: auroc
                .iter()
                .zip(auprc)
                .enumerate()
                .map(|(step, (&a, &p))| CurvePoint {
                    step,
                    n_augment: step * increment,
                    train_size: 0,
                    auroc: point(a),
                    auprc: point(p),
                })
                .collect(),
            repeats: 1,
            increment,
        }
    }

    pub fn means(&self, m: Metric) -> Vec<f64> {
        self.points.iter().map(|p| p.metric(m).mean).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub increment: usize,
    pub iterations: usize,
    pub repeats: usize,
    pub seed: u64,
    pub logistic: LogisticParams,
    /// Worker threads for independent repeats.
    pub concurrency: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            increment: 25,
            iterations: 15,
            repeats: 5,
            seed: 0,
            logistic: LogisticParams::default(),
            concurrency: 1,
        }
    }
}

fn check_disjoint(test: &[Sample], train: &[&Sample]) -> Result<()> {
    let test_ids: HashSet<&str> = test.iter().map(|s| s.id.as_str()).collect();
    match train.iter().find(|s| test_ids.contains(s.id.as_str())) {
        Some(s) => Err(Error::IdOverlap(s.id.clone())),
        None => Ok(()),
    }
}

fn evaluate(train: &[&Sample], test: &[Sample], params: &LogisticParams) -> Result<(f64, f64)> {
    let x: Vec<Vec<f64>> = train.iter().map(|s| s.features.clone()).collect();
    let y: Vec<bool> = train.iter().map(|s| s.label).collect();
    let model = train_logistic(&x, &y, params)?;
    let tx: Vec<Vec<f64>> = test.iter().map(|s| s.features.clone()).collect();
    let ty: Vec<bool> = test.iter().map(|s| s.label).collect();
    let scores = model.predict(&tx)?;
    Ok((auroc(&scores, &ty)?, auprc(&scores, &ty)?))
}

/// Augmentation learning curve: for each repeat the pool is shuffled with its
/// own seed, then the model is retrained from scratch on the baseline plus
/// the first `step·increment` pool items for `step = 0..=iterations` and
/// scored on the fixed test set.
pub fn run_learning_curve(baseline: &[Sample], pool: &[Sample], test: &[Sample], cfg: &CurveConfig) -> Result<LearningCurve> {
    let needed = cfg.increment * cfg.iterations;
    if pool.len() < needed {
        return Err(Error::Insufficient {
            what: "augmentation pool".into(),
            needed,
            available: pool.len(),
        });
    }
    if cfg.repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let all_train: Vec<&Sample> = baseline.iter().chain(pool).collect();
    check_disjoint(test, &all_train)?;

    let repeats: Vec<usize> = (0..cfg.repeats).collect();
    let runs = parallel_map(&repeats, cfg.concurrency, |&r| -> Result<Vec<(f64, f64)>> {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng::child(cfg.seed, &format!("curve-repeat-{r}")));
        let params = LogisticParams {
            seed: rng::child_seed(cfg.seed, &format!("logistic-{r}")),
            ..cfg.logistic
        };
        (0..=cfg.iterations)
            .map(|step| {
                let train: Vec<&Sample> = baseline
                    .iter()
                    .chain(order[..step * cfg.increment].iter().map(|&i| &pool[i]))
                    .collect();
                check_disjoint(test, &train)?;
                evaluate(&train, test, &params)
            })
            .collect()
    });
    let runs: Vec<Vec<(f64, f64)>> = runs.into_iter().collect::<Result<_>>()?;
    let points = (0..=cfg.iterations)
        .map(|step| {
            let a: Vec<f64> = runs.iter().map(|r| r[step].0).collect();
            let p: Vec<f64> = runs.iter().map(|r| r[step].1).collect();
            CurvePoint {
                step,
                n_augment: step * cfg.increment,
                train_size: baseline.len() + step * cfg.increment,
                auroc: Estimate::from_values(&a),
                auprc: Estimate::from_values(&p),
            }
        })
        .collect();
    Ok(LearningCurve {
        points,
        repeats: cfg.repeats,
        increment: cfg.increment,
    })
}

/// Embeds labeled notes into [`Sample`]s; every note must carry a label.
pub fn embed_samples(notes: &[Note], embedder: &dyn Embedder, cache: &mut EmbeddingCache) -> Result<Vec<Sample>> {
    let texts: Vec<(String, String)> = notes.iter().map(|n| (n.id.clone(), n.text.clone())).collect();
    let vectors = embed_batch(&texts, embedder, cache)?;
    notes
        .iter()
        .zip(vectors)
        .map(|(n, v)| {
            let label = n
                .label
                .ok_or_else(|| Error::invalid(format!("note {:?} has no label", n.id)))?;
            Ok(Sample {
                id: n.id.clone(),
                features: v.values,
                label: label == Label::Present,
            })
        })
        .collect()
}

/// [`run_learning_curve`] over notes, embedding them first.
pub fn run_learning_curve_notes(
    baseline: &[Note],
    pool: &[Note],
    test: &[Note],
    embedder: &dyn Embedder,
    cache: &mut EmbeddingCache,
    cfg: &CurveConfig,
) -> Result<LearningCurve> {
    let b = embed_samples(baseline, embedder, cache)?;
    let p = embed_samples(pool, embedder, cache)?;
    let t = embed_samples(test, embedder, cache)?;
    run_learning_curve(&b, &p, &t, cfg)
}

/// First step whose mean metric reaches `threshold`.
pub fn steps_to_threshold(curve: &LearningCurve, metric: Metric, threshold: f64) -> Option<f64> {
    curve
        .points
        .iter()
        .find(|p| p.metric(metric).mean >= threshold)
        .map(|p| p.step as f64)
}

/// Augmentation amount at which the mean metric reaches `threshold`, by
/// linear interpolation between the last point below it and the first point
/// at or above it.
pub fn data_to_threshold(curve: &LearningCurve, metric: Metric, threshold: f64) -> Option<f64> {
    let i = curve.points.iter().position(|p| p.metric(metric).mean >= threshold)?;
    let hit = &curve.points[i];
    let m1 = hit.metric(metric).mean;
    if i == 0 || m1 == threshold {
        return Some(hit.n_augment as f64);
    }
    let prev = &curve.points[i - 1];
    let m0 = prev.metric(metric).mean;
    let frac = (threshold - m0) / (m1 - m0);
    Some(prev.n_augment as f64 + frac * (hit.n_augment as f64 - prev.n_augment as f64))
}

pub fn real_to_synth_ratio(real_data: f64, method_data: f64) -> Result<f64> {
    if !(real_data > 0.0 && method_data > 0.0) {
        return Err(Error::invalid(format!(
            "ratio needs positive amounts, got {real_data} and {method_data}"
        )));
    }
    Ok(real_data / method_data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub steps_to_auroc: Option<f64>,
    pub steps_to_auprc: Option<f64>,
    pub data_to_auroc: Option<f64>,
    pub data_to_auprc: Option<f64>,
    /// Real-world data to threshold over this method's, by AUROC.
    pub ratio_vs_real: Option<f64>,
}

pub fn threshold_report(curve: &LearningCurve, real: Option<&LearningCurve>, threshold: f64) -> ThresholdReport {
    let data_to_auroc = data_to_threshold(curve, Metric::Auroc, threshold);
    let ratio_vs_real = real
        .and_then(|r| data_to_threshold(r, Metric::Auroc, threshold))
        .zip(data_to_auroc)
        .and_then(|(r, m)| real_to_synth_ratio(r, m).ok());
    ThresholdReport {
        threshold,
        steps_to_auroc: steps_to_threshold(curve, Metric::Auroc, threshold),
        steps_to_auprc: steps_to_threshold(curve, Metric::Auprc, threshold),
        data_to_auroc,
        data_to_auprc: data_to_threshold(curve, Metric::Auprc, threshold),
        ratio_vs_real,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub real_final: Estimate,
    pub method_final: Estimate,
    /// `(real − method) / real × 100` on the final means.
    pub gap_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub auroc: Gap,
    pub auprc: Gap,
}

pub fn gap_pct(real: f64, method: f64) -> Result<f64> {
    if real <= 0.0 {
        return Err(Error::invalid("gap needs a positive real-data metric"));
    }
    Ok((real - method) / real * 100.0)
}

pub fn gap_report(real: &LearningCurve, method: &LearningCurve) -> Result<GapReport> {
    if real.points.len() != method.points.len() || real.points.is_empty() {
        return Err(Error::invalid(format!(
            "curves have {} and {} points",
            real.points.len(),
            method.points.len()
        )));
    }
    let (r, m) = (real.points.last().unwrap(), method.points.last().unwrap());
    let gap = |metric| -> Result<Gap> {
        Ok(Gap {
            real_final: r.metric(metric),
            method_final: m.metric(metric),
            gap_pct: gap_pct(r.metric(metric).mean, m.metric(metric).mean)?,
        })
    };
    Ok(GapReport {
        auroc: gap(Metric::Auroc)?,
        auprc: gap(Metric::Auprc)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuringReport {
    pub n_synth: usize,
    pub n_real: usize,
    pub correct_synth: usize,
    pub correct_real: usize,
    pub accuracy_synth: Option<f64>,
    pub accuracy_real: Option<f64>,
    pub p_value_synth: f64,
    pub p_value_real: f64,
}

/// Per-class correct counts and one-sided binomial p-values against chance
/// for `(truth, judged)` pairs.
pub fn turing_report(judgments: &[(Source, Source)]) -> TuringReport {
    let count = |class: Source| {
        let n = judgments.iter().filter(|(t, _)| *t == class).count();
        let k = judgments.iter().filter(|(t, j)| *t == class && *j == class).count();
        (n, k)
    };
    let (n_synth, correct_synth) = count(Source::Synthetic);
    let (n_real, correct_real) = count(Source::Real);
    let acc = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
    TuringReport {
        n_synth,
        n_real,
        correct_synth,
        correct_real,
        accuracy_synth: acc(correct_synth, n_synth),
        accuracy_real: acc(correct_real, n_real),
        p_value_synth: binomial_test(correct_synth as u64, n_synth as u64, 0.5),
        p_value_real: binomial_test(correct_real as u64, n_real as u64, 0.5),
    }
}

/// Summary of one (method, entity) condition, mirroring the threshold,
/// ratio and gap tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub method: Method,
    pub entity: String,
    pub thresholds: ThresholdReport,
    pub gap_vs_real: Option<GapReport>,
    pub set_similarity_vs_real: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass)));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        let v = auprc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(auprc(&[0.3, 0.1, 0.2], &[true, true, true]).unwrap(), 1.0);
        assert!(matches!(auprc(&[0.3], &[false]), Err(Error::NoPositives)));
    }

    #[test]
    fn binomial_examples() {
        assert_eq!(binomial_test(0, 17, 0.5), 1.0);
        let exact = 1276.0 / 2f64.powi(50);
        assert!((binomial_test(48, 50, 0.5) - exact).abs() < 1e-24);
        assert!((binomial_test(48, 50, 0.5) / exact - 1.0).abs() < 1e-10);
        assert!((binomial_test(25, 50, 0.5) - 0.5561).abs() < 5e-5);
        assert!((binomial_test(50, 50, 0.5) - 2f64.powi(-50)).abs() < 1e-25);
    }

    #[test]
    fn logistic_separable_and_deterministic() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let m = train_logistic(&x, &y, &LogisticParams::default()).unwrap();
        let p = m.predict(&x).unwrap();
        assert_eq!(auroc(&p, &y).unwrap(), 1.0);
        let acc = p.iter().zip(&y).filter(|(p, &y)| (**p > 0.5) == y).count();
        assert!(acc >= 38, "{acc}");
        assert!(m.final_loss <= m.initial_loss);
        assert_eq!(m, train_logistic(&x, &y, &LogisticParams::default()).unwrap());
        assert!(matches!(train_logistic(&x, &[true; 40], &LogisticParams::default()), Err(Error::SingleClass)));
    }

    #[test]
    fn predict_edges() {
        let m = LogisticModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            feature_mean: vec![0.0, 0.0],
            feature_scale: vec![1.0, 1.0],
            params: LogisticParams::default(),
            initial_loss: 0.0,
            final_loss: 0.0,
        };
        assert_eq!(m.predict(&[vec![3.0, -1.0], vec![1e9, 2.0]]).unwrap(), vec![0.5, 0.5]);
        let m = LogisticModel { weights: vec![2.0, -1.0], ..m };
        let p = m.predict(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1e6, 0.0], vec![-1e6, 0.0]]).unwrap();
        assert!(p[1] > p[0]);
        assert!(p.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
        assert!(m.predict(&[vec![1.0]]).is_err());
    }

    #[test]
    fn null_features_give_chance_auroc() {
        for seed in 0..20u64 {
            let mut r = rng::seeded(seed);
            let mut draw = |n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
                let x = (0..n).map(|_| (0..5).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
                let y = (0..n).map(|i| i % 2 == 0).collect();
                (x, y)
            };
            let (x, y) = draw(200);
            let (tx, ty) = draw(200);
            let m = train_logistic(&x, &y, &LogisticParams::default()).unwrap();
            let a = auroc(&m.predict(&tx).unwrap(), &ty).unwrap();
            assert!((0.35..=0.65).contains(&a), "seed {seed}: {a}");
        }
    }

    #[test]
    fn threshold_examples() {
        let c = LearningCurve::from_means(25, &[0.70, 0.80, 0.86, 0.90], &[0.5, 0.6, 0.7, 0.8]);
        assert_eq!(steps_to_threshold(&c, Metric::Auroc, 0.85), Some(2.0));
        assert_eq!(steps_to_threshold(&c, Metric::Auprc, 0.85), None);
        let c0 = LearningCurve::from_means(25, &[0.9, 0.95], &[0.9, 0.95]);
        assert_eq!(steps_to_threshold(&c0, Metric::Auroc, 0.85), Some(0.0));
        assert_eq!(data_to_threshold(&c0, Metric::Auroc, 0.85), Some(0.0));

        let mut means = vec![0.5, 0.6, 0.7, 0.8, 0.84, 0.86];
        means.extend([0.9; 10]);
        let c = LearningCurve::from_means(25, &means, &means);
        let d = data_to_threshold(&c, Metric::Auroc, 0.85).unwrap();
        assert!((d - 112.5).abs() < 1e-9, "{d}");
        let exact = LearningCurve::from_means(25, &[0.5, 0.85], &[0.5, 0.85]);
        assert_eq!(data_to_threshold(&exact, Metric::Auroc, 0.85), Some(25.0));
    }

    #[test]
    fn ratios_and_gaps() {
        assert!((real_to_synth_ratio(100.0, 112.0).unwrap() - 0.8929).abs() < 5e-5);
        assert_eq!(real_to_synth_ratio(100.0, 100.0).unwrap(), 1.0);
        assert!((real_to_synth_ratio(100.0, 177.0).unwrap() - 0.565).abs() < 5e-4);
        assert!(real_to_synth_ratio(0.0, 10.0).is_err());

        let a = LearningCurve::from_means(25, &[0.8, 0.98], &[0.8, 0.98]);
        let b = LearningCurve::from_means(25, &[0.8, 0.94], &[0.8, 0.88]);
        let g = gap_report(&a, &b).unwrap();
        assert!((g.auroc.gap_pct - 4.0816).abs() < 1e-3);
        assert!((g.auprc.gap_pct - 10.204).abs() < 1e-3);
        assert_eq!(gap_report(&a, &a).unwrap().auroc.gap_pct, 0.0);
        assert!(gap_report(&a, &LearningCurve::from_means(25, &[0.9], &[0.9])).is_err());
    }

    #[test]
    fn turing_counts() {
        let mut j = Vec::new();
        for _ in 0..50 {
            j.push((Source::Synthetic, Source::Synthetic));
            j.push((Source::Real, Source::Real));
        }
        let r = turing_report(&j);
        assert_eq!((r.correct_synth, r.correct_real), (50, 50));
        assert_eq!(r.accuracy_synth, Some(1.0));
        assert!((r.p_value_synth - 8.881784197001252e-16).abs() < 1e-28);
        let r = turing_report(&[(Source::Synthetic, Source::Real)]);
        assert_eq!(r.accuracy_real, None);
        assert_eq!(r.p_value_real, 1.0);
    }

    fn separable(n: usize, seed: u64, prefix: &str) -> Vec<Sample> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|i| {
                let label = i % 2 == 0;
                let c = if label { 1.0 } else { -1.0 };
                Sample {
                    id: format!("{prefix}{i}"),
                    features: vec![c + r.random_range(-1.5..1.5), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                    label,
                }
            })
            .collect()
    }

    fn small_cfg(repeats: usize) -> CurveConfig {
        CurveConfig {
            increment: 10,
            iterations: 4,
            repeats,
            seed: 3,
            logistic: LogisticParams { epochs: 100, ..LogisticParams::default() },
            concurrency: 1,
        }
    }

    #[test]
    fn curve_shape_and_reproducibility() {
        let (b, p, t) = (separable(10, 1, "b"), separable(60, 2, "p"), separable(80, 3, "t"));
        let c = run_learning_curve(&b, &p, &t, &small_cfg(1)).unwrap();
        assert_eq!(c.points.len(), 5);
        assert_eq!(c.points[0].n_augment, 0);
        assert_eq!(c.points[4].train_size, 50);
        assert_eq!(c, run_learning_curve(&b, &p, &t, &small_cfg(1)).unwrap());
        let zero = run_learning_curve(&b, &p, &t, &CurveConfig { iterations: 0, ..small_cfg(1) }).unwrap();
        assert_eq!(zero.points.len(), 1);
        assert!(run_learning_curve(&b, &p[..30], &t, &small_cfg(1)).is_err());
    }

    #[test]
    fn overlapping_ids_are_rejected() {
        let (b, mut p, t) = (separable(10, 1, "b"), separable(60, 2, "p"), separable(20, 3, "t"));
        p[59].id = "t4".into();
        assert!(matches!(run_learning_curve(&b, &p, &t, &small_cfg(1)), Err(Error::IdOverlap(id)) if id == "t4"));
    }

    #[test]
    fn more_repeats_narrow_the_interval() {
        let (b, p, t) = (separable(10, 1, "b"), separable(60, 2, "p"), separable(80, 3, "t"));
        let w5 = run_learning_curve(&b, &p, &t, &small_cfg(5)).unwrap().points[2].auroc.width();
        let w20 = run_learning_curve(&b, &p, &t, &small_cfg(20)).unwrap().points[2].auroc.width();
        assert!(w20 < w5, "{w20} vs {w5}");
    }

    /// Exact enumeration oracle: sum of C(n, i) for i >= k over 2^n.
    fn exact_tail(k: u64, n: u64) -> f64 {
        let mut c: u128 = 1;
        let mut total: u128 = 0;
        for i in 0..=n {
            if i >= k {
                total += c;
            }
            c = c * (n - i) as u128 / (i + 1) as u128;
        }
        total as f64 / 2f64.powi(n as i32)
    }

    #[test]
    fn binomial_matches_exact_enumeration() {
        for n in 0..=60u64 {
            for k in 0..=n {
                let got = binomial_test(k, n, 0.5);
                let want = exact_tail(k, n);
                assert!((got - want).abs() < 1e-12, "k={k} n={n}: {got} vs {want}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn auroc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u8..20, proptest::bool::ANY), 2..80)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            let (p, n) = class_counts(&labels);
            proptest::prop_assume!(p > 0 && n > 0);
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            proptest::prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&transformed, &labels).unwrap());
        }
    }
}
