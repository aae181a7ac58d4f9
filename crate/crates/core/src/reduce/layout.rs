use rand::Rng;
use serde::{Deserialize, Serialize};

use super::curve::fit_ab;
use super::fuzzy::FuzzyGraph;
use super::Layout;
use crate::error::{Error, Result};
use crate::rng;

const COORD_BOUND: f64 = 10.0;
const GRAD_CLIP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    /// Curve parameters; fitted from `min_dist` and `spread` when unset.
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for UmapParams {
    fn default() -> Self {
        UmapParams {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 200,
            a: None,
            b: None,
            negative_sample_rate: 5,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl UmapParams {
    pub fn resolve_ab(&self) -> Result<(f64, f64)> {
        match (self.a, self.b) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => {
                let fit = fit_ab(self.min_dist, self.spread)?;
                Ok((fit.a, fit.b))
            }
        }
    }
}

#[inline]
fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

#[inline]
fn bound(v: f64) -> f64 {
    v.clamp(-COORD_BOUND, COORD_BOUND)
}

/// Stochastic layout optimization over the fuzzy graph.
///
/// Each directed copy of an edge is visited every `max_w / w` epochs. A visit
/// pulls the endpoints together along the gradient of `log(1/(1 + a·d^(2b)))`
/// and then pushes the head away from `negative_sample_rate` uniformly drawn
/// points. The step size decays linearly to zero. The loop is single-threaded
/// and draws all randomness from one stream seeded by `params.seed`.
pub fn optimize_layout(graph: &FuzzyGraph, init: &Layout, params: &UmapParams) -> Result<Layout> {
    let n = graph.n();
    if init.len() != n {
        return Err(Error::invalid(format!(
            "initial layout has {} points, graph has {n}",
            init.len()
        )));
    }
    if n < 4 {
        return Err(Error::invalid(format!("layout needs at least 4 points, got {n}")));
    }
    let (a, b) = params.resolve_ab()?;
    let n_epochs = params.n_epochs.max(1);

    let max_w = graph
        .edges()
        .iter()
        .map(|e| e.2)
        .fold(0.0f64, f64::max);
    // directed copies (head, tail, epochs between samples)
    let mut heads = Vec::new();
    let mut tails = Vec::new();
    let mut period = Vec::new();
    for &(i, j, w) in graph.edges() {
        let p = max_w / w;
        if p > n_epochs as f64 {
            continue; // would never be sampled
        }
        for (h, t) in [(i, j), (j, i)] {
            heads.push(h);
            tails.push(t);
            period.push(p);
        }
    }
    let mut next_due = period.clone();

    let mut y = init.coords.clone();
    let mut r = rng::child(params.seed, "umap-sgd");
    for epoch in 0..n_epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / n_epochs as f64);
        let now = (epoch + 1) as f64;
        for e in 0..heads.len() {
            if next_due[e] > now {
                continue;
            }
            let (h, t) = (heads[e], tails[e]);
            let dx = y[h][0] - y[t][0];
            let dy = y[h][1] - y[t][1];
            let d2 = dx * dx + dy * dy;
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                let gx = clip(coeff * dx) * alpha;
                let gy = clip(coeff * dy) * alpha;
                y[h][0] = bound(y[h][0] + gx);
                y[h][1] = bound(y[h][1] + gy);
                y[t][0] = bound(y[t][0] - gx);
                y[t][1] = bound(y[t][1] - gy);
            }
            for _ in 0..params.negative_sample_rate {
                let k = r.random_range(0..n);
                if k == h {
                    continue;
                }
                let dx = y[h][0] - y[k][0];
                let dy = y[h][1] - y[k][1];
                let d2 = dx * dx + dy * dy;
                let (gx, gy) = if d2 > 0.0 {
                    let coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                    (clip(coeff * dx), clip(coeff * dy))
                } else {
                    (GRAD_CLIP, GRAD_CLIP)
                };
                y[h][0] = bound(y[h][0] + gx * alpha);
                y[h][1] = bound(y[h][1] + gy * alpha);
            }
            next_due[e] += period[e];
        }
        if let Some(point) = y.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(Error::NonFinite { epoch, point });
        }
    }
    Ok(Layout { coords: y })
}
