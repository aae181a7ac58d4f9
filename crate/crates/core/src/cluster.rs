//! k-means++ / Lloyd clustering of a 2D layout and exemplar selection.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type Point = [f64; 2];

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 300;

#[inline]
fn sq_dist(p: &Point, q: &Point) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    dx * dx + dy * dy
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Point>,
    /// Sum of squared distances from each point to its centroid.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after every update step; the last entry equals `inertia`.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub fn inertia(points: &[Point], assignments: &[usize], centroids: &[Point]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// k-means++ seeding: the first centroid is uniform over points, each later
/// one is drawn with probability proportional to its squared distance to the
/// nearest centroid chosen so far.
pub fn kmeans_pp_init(points: &[Point], k: usize, seed: u64) -> Result<Vec<Point>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= k <= n, got k={k}, n={n}")));
    }
    let mut r = rng::child(seed, "kmeans++");
    let mut chosen = vec![false; n];
    let first = r.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = r.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the last bucket
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every point coincides with a centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[r.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    Ok(centroids)
}

/// Moves into every empty cluster the point farthest from its own centroid,
/// taken only from clusters that keep at least one member.
fn reseed_empty(points: &[Point], assignments: &mut [usize], centroids: &mut [Point]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[a]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        log::debug!("cluster {empty} empty; reseeded with point {i}");
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
        centroids[empty] = points[i];
    }
}

fn means(points: &[Point], assignments: &[usize], previous: &[Point]) -> Vec<Point> {
    let k = previous.len();
    let mut sum = vec![[0.0f64; 2]; k];
    let mut count = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        sum[a][0] += p[0];
        sum[a][1] += p[1];
        count[a] += 1;
    }
    (0..k)
        .map(|j| {
            if count[j] == 0 {
                previous[j]
            } else {
                [sum[j][0] / count[j] as f64, sum[j][1] / count[j] as f64]
            }
        })
        .collect()
}

/// Lloyd iterations from `init` until no centroid moves by `tol` or more, or
/// `max_iter` rounds have run.
pub fn lloyd(points: &[Point], init: &[Point], tol: f64, max_iter: usize) -> Result<Clustering> {
    let k = init.len();
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= k <= n, got k={k}, n={}",
            points.len()
        )));
    }
    let mut centroids = init.to_vec();
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations_run = 0;
    for _ in 0..max_iter.max(1) {
        iterations_run += 1;
        for (i, p) in points.iter().enumerate() {
            assignments[i] = nearest(p, &centroids).0;
        }
        reseed_empty(points, &mut assignments, &mut centroids);
        let updated = means(points, &assignments, &centroids);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        history.push(inertia(points, &assignments, &centroids));
        if shift < tol {
            break;
        }
    }
    Ok(Clustering {
        k,
        inertia: *history.last().unwrap(),
        assignments,
        centroids,
        iterations_run,
        inertia_history: history,
    })
}

/// k-means++ seeding followed by Lloyd with the default tolerance.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> Result<Clustering> {
    let init = kmeans_pp_init(points, k, seed)?;
    lloyd(points, &init, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub cluster: usize,
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

impl Representative {
    pub fn point(&self) -> Option<Point> {
        Some([self.x?, self.y?])
    }
}

/// The exemplar notes chosen for prompting, one per cluster (or one per draw
/// for the random control).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RepresentativeSet {
    pub entries: Vec<Representative>,
}

impl RepresentativeSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(RepresentativeSet { entries })
    }
}

/// Picks, for every cluster, the member nearest its centroid in the layout
/// (lowest index on ties). `ids` is index-aligned with `points`.
pub fn select_representatives(c: &Clustering, points: &[Point], ids: &[String]) -> Result<RepresentativeSet> {
    if points.len() != c.assignments.len() || ids.len() != points.len() {
        return Err(Error::invalid(format!(
            "{} points, {} ids and {} assignments must agree",
            points.len(),
            ids.len(),
            c.assignments.len()
        )));
    }
    let mut best: Vec<Option<(usize, f64)>> = vec![None; c.k];
    for (i, p) in points.iter().enumerate() {
        let a = c.assignments[i];
        let d = sq_dist(p, &c.centroids[a]);
        match best[a] {
            Some((_, bd)) if bd <= d => {}
            _ => best[a] = Some((i, d)),
        }
    }
    let entries = best
        .into_iter()
        .enumerate()
        .map(|(cluster, b)| {
            let (i, _) = b.ok_or_else(|| Error::invalid(format!("cluster {cluster} has no members")))?;
            Ok(Representative {
                cluster,
                id: ids[i].clone(),
                x: Some(points[i][0]),
                y: Some(points[i][1]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepresentativeSet { entries })
}

/// Uniform draw of `n` distinct ids, in draw order.
pub fn random_sample_control(ids: &[String], n: usize, seed: u64) -> Result<RepresentativeSet> {
    if n > ids.len() {
        return Err(Error::Insufficient {
            what: "random control sample".into(),
            needed: n,
            available: ids.len(),
        });
    }
    let mut r = rng::child(seed, "random-control");
    let entries = index::sample(&mut r, ids.len(), n)
        .into_iter()
        .enumerate()
        .map(|(slot, i)| Representative {
            cluster: slot,
            id: ids[i].clone(),
            x: None,
            y: None,
        })
        .collect();
    Ok(RepresentativeSet { entries })
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two partitions of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions of different sizes");
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
