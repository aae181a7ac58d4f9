//! Reduction of embeddings to a 2D layout.
//!
//! [`umap`] chains the pieces: exact kNN on unit-normalized vectors, per-point
//! smooth-kNN calibration, fuzzy-union symmetrization, a PCA starting layout
//! and the negative-sampling SGD in [`optimize_layout`]. [`reduce_pca`] is the
//! deterministic linear alternative.

mod curve;
mod fuzzy;
mod knn;
mod layout;
mod pca;
mod quality;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use curve::{fit_ab, CurveFit};
pub use fuzzy::{build_fuzzy_graph, fuzzy_union, smooth_knn, FuzzyGraph, SmoothKnn};
pub use knn::{knn_exact, KnnGraph};
pub use layout::{optimize_layout, UmapParams};
pub use pca::{pca_2d, reduce_pca, PcaResult};
pub use quality::trustworthiness;

/// One 2D coordinate per input point, index-aligned with the input.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    pub coords: Vec<[f64; 2]>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct LayoutRecord {
    id: String,
    x: f64,
    y: f64,
}

pub fn write_layout(path: impl AsRef<Path>, ids: &[String], layout: &Layout) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != layout.len() {
        return Err(Error::invalid(format!(
            "{} ids for a layout of {} points",
            ids.len(),
            layout.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, [x, y]) in ids.iter().zip(&layout.coords) {
        serde_json::to_writer(&mut w, &LayoutRecord { id: id.clone(), x: *x, y: *y })?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_layout(path: impl AsRef<Path>) -> Result<(Vec<String>, Layout)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut layout = Layout::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LayoutRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        ids.push(rec.id);
        layout.coords.push([rec.x, rec.y]);
    }
    Ok((ids, layout))
}

pub(crate) fn unit_normalized(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    vectors
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                Err(Error::ZeroNorm)
            } else {
                Ok(v.iter().map(|x| x / n).collect())
            }
        })
        .collect()
}

/// Rescales each axis of a starting layout to `[-5, 5]`.
fn rescale_init(layout: &mut Layout) {
    for axis in 0..2 {
        let (lo, hi) = layout
            .coords
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c[axis]), hi.max(c[axis]))
            });
        let range = hi - lo;
        for c in &mut layout.coords {
            c[axis] = if range > 0.0 {
                10.0 * (c[axis] - lo) / range - 5.0
            } else {
                0.0
            };
        }
    }
}

/// Full UMAP reduction of `vectors` to two dimensions.
pub fn umap(vectors: &[Vec<f64>], params: &UmapParams) -> Result<Layout> {
    let n = vectors.len();
    if n < 4 {
        return Err(Error::invalid(format!("UMAP needs at least 4 points, got {n}")));
    }
    let unit = unit_normalized(vectors)?;
    let k = params.n_neighbors.min(n - 1).max(2);
    let knn = knn_exact(&unit, k)?;
    let graph = build_fuzzy_graph(&knn);
    let mut init = reduce_pca(&unit)?;
    rescale_init(&mut init);
    optimize_layout(&graph, &init, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layout.jsonl");
        let ids = vec!["a".to_string(), "b".to_string()];
        let layout = Layout { coords: vec![[0.1, -2.5], [3.0, 1e-9]] };
        write_layout(&path, &ids, &layout).unwrap();
        let (ids2, layout2) = read_layout(&path).unwrap();
        assert_eq!(ids, ids2);
        assert_eq!(layout, layout2);
        assert!(write_layout(&path, &ids[..1], &layout).is_err());
    }

    #[test]
    fn rescale_maps_axes_to_box() {
        let mut l = Layout { coords: vec![[0.0, 1.0], [2.0, 1.0], [1.0, 1.0]] };
        rescale_init(&mut l);
        assert_eq!(l.coords, vec![[-5.0, 0.0], [5.0, 0.0], [0.0, 0.0]]);
    }
}
