use std::collections::BTreeMap;

use super::knn::KnnGraph;

const SIGMA_ITERATIONS: usize = 64;

/// Per-point local connectivity calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothKnn {
    pub rho: f64,
    pub sigma: f64,
    /// False when no sigma in the search interval hits the target and the
    /// result was clamped to a bound.
    pub interior: bool,
}

fn membership_sum(distances: &[f64], rho: f64, sigma: f64) -> f64 {
    distances
        .iter()
        .map(|d| (-(d - rho).max(0.0) / sigma).exp())
        .sum()
}

/// Finds `rho` (smallest positive distance) and `sigma` such that
/// `Σ exp(-max(0, d - rho) / sigma) = log2(k)`, by bisection on
/// `[1e-3·mean(d), 1e3·mean(d)]`. When the target lies outside what the
/// interval can reach, sigma is clamped to the nearer bound.
pub fn smooth_knn(distances: &[f64], k: usize) -> SmoothKnn {
    let rho = distances
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let rho = if rho.is_finite() { rho } else { 0.0 };
    let target = (k as f64).log2();
    let mean = if distances.is_empty() {
        0.0
    } else {
        distances.iter().sum::<f64>() / distances.len() as f64
    };
    let scale = if mean > 0.0 { mean } else { 1.0 };
    let (mut lo, mut hi) = (1e-3 * scale, 1e3 * scale);

    // the sum is nondecreasing in sigma
    if membership_sum(distances, rho, lo) >= target {
        return SmoothKnn { rho, sigma: lo, interior: false };
    }
    if membership_sum(distances, rho, hi) <= target {
        return SmoothKnn { rho, sigma: hi, interior: false };
    }
    for _ in 0..SIGMA_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if membership_sum(distances, rho, mid) > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    SmoothKnn {
        rho,
        sigma: 0.5 * (lo + hi),
        interior: true,
    }
}

/// Probabilistic t-conorm used to symmetrize directed memberships.
pub fn fuzzy_union(w_ij: f64, w_ji: f64) -> f64 {
    w_ij + w_ji - w_ij * w_ji
}

/// Symmetric sparse membership graph. Each undirected edge is stored once
/// with `i < j`, so `weight(i, j) == weight(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl FuzzyGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&key))
            .map(|pos| self.edges[pos].2)
            .unwrap_or(0.0)
    }
}

pub fn build_fuzzy_graph(knn: &KnnGraph) -> FuzzyGraph {
    let n = knn.len();
    // (lo, hi) -> (weight lo->hi, weight hi->lo)
    let mut directed: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (i, (nbrs, dists)) in knn.neighbors.iter().zip(&knn.distances).enumerate() {
        let cal = smooth_knn(dists, knn.k);
        for (&j, &d) in nbrs.iter().zip(dists) {
            if j == i {
                continue;
            }
            let w = (-(d - cal.rho).max(0.0) / cal.sigma).exp();
            let slot = directed.entry((i.min(j), i.max(j))).or_insert((0.0, 0.0));
            if i < j {
                slot.0 = w;
            } else {
                slot.1 = w;
            }
        }
    }
    let edges = directed
        .into_iter()
        .map(|((i, j), (a, b))| (i, j, fuzzy_union(a, b)))
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    FuzzyGraph { n, edges }
}
