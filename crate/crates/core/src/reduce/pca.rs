use rand::Rng;

use super::Layout;
use crate::error::{Error, Result};
use crate::rng;

const MAX_POWER_ITERATIONS: usize = 20_000;
const POWER_TOLERANCE: f64 = 1e-14;
/// Relative eigenvalue below which a direction counts as absent.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub layout: Layout,
    /// Unit principal directions; a zero vector marks a missing direction.
    pub components: [Vec<f64>; 2],
    /// Variance captured along each direction (sum of squared scores).
    pub eigenvalues: [f64; 2],
    pub rank_deficient: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `X^T (X v)` for the centered data matrix `X`.
fn gram_apply(centered: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for row in centered {
        let s = dot(row, v);
        for (o, x) in out.iter_mut().zip(row) {
            *o += s * x;
        }
    }
    out
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let p = dot(v, u);
        for (x, y) in v.iter_mut().zip(u) {
            *x -= p * y;
        }
    }
}

/// Power iteration for the leading direction of `data`, kept orthogonal to
/// `found`. `data` must already have the `found` directions projected out.
fn leading_direction(centered: &[Vec<f64>], found: &[Vec<f64>], seed: u64) -> Option<(Vec<f64>, f64)> {
    let dim = centered[0].len();
    let mut r = rng::child(seed, "pca-start");
    let mut v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
    orthogonalize(&mut v, found);
    let n = norm(&v);
    if n == 0.0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    for _ in 0..MAX_POWER_ITERATIONS {
        let mut w = gram_apply(centered, &v);
        orthogonalize(&mut w, found);
        orthogonalize(&mut w, found);
        let nw = norm(&w);
        if nw == 0.0 {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let delta = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    let lambda = dot(&v, &gram_apply(centered, &v));
    Some((v, lambda))
}

/// Flips `v` so its largest-magnitude component (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Projection of mean-centered data onto its top two principal directions,
/// found by power iteration with deflation of the data matrix.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<PcaResult> {
    let n = vectors.len();
    if n <= 2 {
        return Err(Error::invalid(format!("PCA to 2D needs more than 2 points, got {n}")));
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut deflated = centered.clone();
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut eigenvalues = [0.0; 2];
    let mut components = [vec![0.0; dim], vec![0.0; dim]];
    let mut rank_deficient = false;
    let mut top = 0.0f64;
    for c in 0..2 {
        match leading_direction(&deflated, &found, c as u64) {
            Some((mut v, lambda)) if lambda > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE) && lambda > 0.0 => {
                fix_sign(&mut v);
                if c == 0 {
                    top = lambda;
                }
                eigenvalues[c] = lambda;
                for row in &mut deflated {
                    let p = dot(row, &v);
                    for (x, y) in row.iter_mut().zip(&v) {
                        *x -= p * y;
                    }
                }
                components[c] = v.clone();
                found.push(v);
            }
            _ => {
                rank_deficient = true;
                break;
            }
        }
    }
    if rank_deficient {
        log::warn!("PCA input has rank < 2; missing coordinates are set to zero");
    }
    let coords = centered
        .iter()
        .map(|row| [dot(row, &components[0]), dot(row, &components[1])])
        .collect();
    Ok(PcaResult {
        layout: Layout { coords },
        components,
        eigenvalues,
        rank_deficient,
    })
}

pub fn reduce_pca(vectors: &[Vec<f64>]) -> Result<Layout> {
    pca_2d(vectors).map(|p| p.layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anisotropic(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| {
                (0..dim)
                    .map(|j| r.random_range(-1.0..1.0) * (dim - j) as f64 * (1.0 + j as f64 * 0.0))
                    .collect()
            })
            .collect()
    }

    /// Random orthogonal matrix via Gram-Schmidt.
    fn rotation(dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        while basis.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
            orthogonalize(&mut v, &basis);
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        basis
    }

    fn pairwise(l: &Layout) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..l.len() {
            for j in (i + 1)..l.len() {
                let (p, q) = (l.coords[i], l.coords[j]);
                out.push(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        out
    }

    #[test]
    fn line_data_has_zero_second_coordinate() {
        let dir: Vec<f64> = (0..10).map(|j| (j as f64 + 1.0).sqrt()).collect();
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| dir.iter().map(|d| d * (i as f64 * 0.37 - 2.0) + 0.5).collect())
            .collect();
        let res = pca_2d(&pts).unwrap();
        assert!(res.rank_deficient, "{:?}", res.eigenvalues);
        assert!(res.layout.coords.iter().all(|c| c[1].abs() < 1e-8));
    }

    #[test]
    fn rotation_preserves_layout_distances() {
        let pts = anisotropic(40, 6, 4);
        let rot = rotation(6, 9);
        let rotated: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| rot.iter().map(|row| dot(row, p)).collect())
            .collect();
        let a = pairwise(&reduce_pca(&pts).unwrap());
        let b = pairwise(&reduce_pca(&rotated).unwrap());
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "max distance change {worst}");
    }

    #[test]
    fn deterministic_with_sign_convention() {
        let pts = anisotropic(25, 4, 1);
        let a = pca_2d(&pts).unwrap();
        assert_eq!(a, pca_2d(&pts).unwrap());
        for comp in &a.components {
            let big = comp.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
        assert!(a.eigenvalues[0] >= a.eigenvalues[1]);
    }

    #[test]
    fn matches_closed_form_on_axis_data() {
        // variance along x dominates y; z is constant
        let pts: Vec<Vec<f64>> = (0..9)
            .map(|i| vec![(i % 3) as f64 * 3.0, (i / 3) as f64, 7.0])
            .collect();
        let res = pca_2d(&pts).unwrap();
        assert!((res.components[0][0] - 1.0).abs() < 1e-10);
        assert!((res.components[1][1] - 1.0).abs() < 1e-10);
        assert!((res.layout.coords[0][0] + 3.0).abs() < 1e-10);
    }

    #[test]
    fn too_few_points() {
        assert!(reduce_pca(&[vec![1.0, 2.0], vec![0.0, 1.0]]).is_err());
    }
}
