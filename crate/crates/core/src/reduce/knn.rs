use crate::error::{Error, Result};

/// Exact k-nearest-neighbor graph; rows sorted by ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Brute-force Euclidean kNN. Ties go to the lower index; a point is never its
/// own neighbor.
pub fn knn_exact(vectors: &[Vec<f64>], k: usize) -> Result<KnnGraph> {
    let n = vectors.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must be in 1..{n}")));
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    // symmetric distance matrix, upper triangle computed once
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(&vectors[i], &vectors[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut neighbors = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let by_distance = |a: &usize, b: &usize| row[*a].total_cmp(&row[*b]).then(a.cmp(b));
        order.select_nth_unstable_by(k - 1, by_distance);
        let mut top = order[..k].to_vec();
        top.sort_unstable_by(by_distance);
        distances.push(top.iter().map(|&j| row[j]).collect());
        neighbors.push(top);
    }
    Ok(KnnGraph {
        k,
        neighbors,
        distances,
    })
}
