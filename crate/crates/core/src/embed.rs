//! Note embeddings: the embedder abstraction, a deterministic hashing mock,
//! an on-disk cache and cosine-based similarity.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub id: String,
    #[serde(rename = "vector")]
    pub values: Vec<f64>,
    pub model: String,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Connection settings for an OpenAI-compatible service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_batch: usize,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000".into(),
            model: String::new(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_batch: 256,
            concurrency: 4,
            timeout_secs: 120,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_batch == 0 || self.concurrency == 0 {
            return Err(Error::invalid("max_batch and concurrency must be at least 1"));
        }
        Ok(())
    }
}

/// Anything that maps `(id, text)` pairs to vectors, one per input and in
/// input order.
pub trait Embedder: Send + Sync {
    fn model(&self) -> &str;

    fn embed(&self, batch: &[(String, String)]) -> Result<Vec<EmbeddingVector>>;
}

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
pub fn hash_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn feature_hash(feature: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in feature.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix64(h ^ seed)
}

/// Signed feature hashing of unigrams and bigrams into `dim` buckets,
/// normalized to unit length.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 2, "mock embedding dimension must be at least 2");
    let tokens = hash_tokens(text);
    let mut v = vec![0.0; dim];
    let mut add = |feature: &str| {
        let h = feature_hash(feature, seed);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    };
    if tokens.is_empty() {
        add("\u{0}empty");
    }
    for t in &tokens {
        add(&format!("u:{t}"));
    }
    for pair in tokens.windows(2) {
        add(&format!("b:{} {}", pair[0], pair[1]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every feature cancelled out
        v[(feature_hash("\u{0}cancel", seed) % dim as u64) as usize] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    model: String,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockEmbedder {
            dim,
            seed,
            model: format!("mock-hash-{dim}-{seed}"),
        }
    }
}

impl Embedder for MockEmbedder {
    fn model(&self) -> &str {
        &self.model
    }

    fn embed(&self, batch: &[(String, String)]) -> Result<Vec<EmbeddingVector>> {
        Ok(batch
            .iter()
            .map(|(id, text)| EmbeddingVector {
                id: id.clone(),
                values: mock_embed(text, self.dim, self.seed),
                model: self.model.clone(),
            })
            .collect())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Sum of unit-normalized vectors; validates a shared dimension.
fn unit_sum(set: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    for v in set {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        let n = norm(v);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x / n;
        }
    }
    Ok(acc)
}

/// Mean cosine similarity over all synthetic × real pairs.
///
/// The pairwise mean of unit-vector dot products factors into the dot product
/// of the two unit-vector means, so this runs in O((|A| + |B|)·d).
pub fn set_similarity(synthetic: &[&[f64]], real: &[&[f64]]) -> Result<f64> {
    if synthetic.is_empty() || real.is_empty() {
        return Err(Error::EmptySet);
    }
    let dim = synthetic[0].len();
    let a = unit_sum(synthetic, dim)?;
    let b = unit_sum(real, dim)?;
    Ok(dot(&a, &b) / (synthetic.len() as f64 * real.len() as f64))
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    id: String,
    model: String,
    vector: Vec<f64>,
}

/// Embeddings keyed by `(id, model)`, optionally backed by an append-only
/// JSONL file.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: HashMap<(String, String), Vec<f64>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache::default()
    }

    /// Opens (or creates on first write) a cache file. Later lines override
    /// earlier ones for the same key.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                entries.insert((rec.id, rec.model), rec.vector);
            }
        }
        Ok(EmbeddingCache {
            entries,
            path: Some(path),
        })
    }

    pub fn get(&self, id: &str, model: &str) -> Option<EmbeddingVector> {
        self.entries
            .get(&(id.to_string(), model.to_string()))
            .map(|values| EmbeddingVector {
                id: id.to_string(),
                values: values.clone(),
                model: model.to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All cached vectors for one model, sorted by id.
    pub fn vectors_for(&self, model: &str) -> Vec<EmbeddingVector> {
        let mut out: Vec<EmbeddingVector> = self
            .entries
            .iter()
            .filter(|((_, m), _)| m == model)
            .map(|((id, m), v)| EmbeddingVector {
                id: id.clone(),
                values: v.clone(),
                model: m.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    pub fn models(&self) -> Vec<String> {
        let mut models: Vec<String> = self.entries.keys().map(|(_, m)| m.clone()).collect();
        models.sort();
        models.dedup();
        models
    }

    pub fn insert_all(&mut self, vectors: &[EmbeddingVector]) -> Result<()> {
        if let Some(path) = &self.path {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            for v in vectors {
                let rec = CacheRecord {
                    id: v.id.clone(),
                    model: v.model.clone(),
                    vector: v.values.clone(),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        for v in vectors {
            self.entries
                .insert((v.id.clone(), v.model.clone()), v.values.clone());
        }
        Ok(())
    }
}

/// Embeds `(id, text)` pairs, serving cached ids without calling the
/// embedder. Output order matches input order.
pub fn embed_batch(
    texts: &[(String, String)],
    embedder: &dyn Embedder,
    cache: &mut EmbeddingCache,
) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::EmptySet);
    }
    let model = embedder.model().to_string();
    let mut misses: Vec<(String, String)> = Vec::new();
    let mut queued = std::collections::HashSet::new();
    for (id, text) in texts {
        if cache.get(id, &model).is_none() && queued.insert(id.clone()) {
            misses.push((id.clone(), text.clone()));
        }
    }
    if !misses.is_empty() {
        let fresh = embedder.embed(&misses)?;
        if fresh.len() != misses.len() {
            return Err(Error::Endpoint(format!(
                "embedder returned {} vectors for {} inputs",
                fresh.len(),
                misses.len()
            )));
        }
        check_dims(&fresh)?;
        if fresh.iter().flat_map(|v| &v.values).any(|x| !x.is_finite()) {
            return Err(Error::Endpoint("embedder returned non-finite values".into()));
        }
        cache.insert_all(&fresh)?;
    }
    let out: Vec<EmbeddingVector> = texts
        .iter()
        .map(|(id, _)| cache.get(id, &model).expect("cached above"))
        .collect();
    check_dims(&out)?;
    Ok(out)
}

fn check_dims(vectors: &[EmbeddingVector]) -> Result<()> {
    if let Some(first) = vectors.first() {
        if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: bad.dim(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn pairwise_mean(a: &[&[f64]], b: &[&[f64]]) -> f64 {
        let mut total = 0.0;
        for u in a {
            for v in b {
                total += cosine_similarity(u, v).unwrap();
            }
        }
        total / (a.len() * b.len()) as f64
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn set_similarity_examples() {
        let e = [1.0, 0.0];
        assert!((set_similarity(&[&e], &[&e]).unwrap() - 1.0).abs() < 1e-15);
        let f = [0.0, 1.0];
        assert!((set_similarity(&[&e], &[&e, &f]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(set_similarity(&[], &[&e]), Err(Error::EmptySet)));
    }

    #[test]
    fn set_similarity_prefers_self_over_orthogonal_complement() {
        // A spans the first two axes; B replaces every vector with an
        // orthogonal one along the remaining axes.
        let a: Vec<Vec<f64>> = vec![vec![1.0, 0.2, 0.0, 0.0], vec![0.3, 1.0, 0.0, 0.0]];
        let b: Vec<Vec<f64>> = vec![vec![0.0, 0.0, 1.0, 0.1], vec![0.0, 0.0, 0.4, 1.0]];
        let ar: Vec<&[f64]> = a.iter().map(|v| v.as_slice()).collect();
        let br: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
        assert!(set_similarity(&ar, &ar).unwrap() >= set_similarity(&ar, &br).unwrap());
        assert!(set_similarity(&ar, &br).unwrap().abs() < 1e-15);
    }

    #[test]
    fn mock_embed_is_deterministic_unit_norm() {
        let a = mock_embed("no pleural effusion.", 64, 9);
        assert_eq!(a, mock_embed("no pleural effusion.", 64, 9));
        assert_ne!(a, mock_embed("no pleural effusion.", 64, 10));
        for text in ["x", "heart size is normal", "a a a a", ""] {
            let v = mock_embed(text, 32, 1);
            assert!((norm(&v) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mock_embed_tracks_token_overlap() {
        let mut r = crate::rng::seeded(5);
        let vocab: Vec<String> = (0..2000).map(|i| format!("w{i}")).collect();
        let mut wins = 0;
        for _ in 0..100 {
            let mut words: Vec<&String> = vocab.choose_multiple(&mut r, 60).collect();
            words.shuffle(&mut r);
            let base: Vec<&str> = words[..20].iter().map(|s| s.as_str()).collect();
            let disjoint: Vec<&str> = words[20..40].iter().map(|s| s.as_str()).collect();
            let mut shared = base.clone();
            // replace 2 of 20 tokens: 90% shared
            for k in 0..2 {
                let pos = r.random_range(0..shared.len());
                shared[pos] = words[40 + k].as_str();
            }
            let e = |w: &[&str]| mock_embed(&w.join(" "), 256, 3);
            let far = cosine_similarity(&e(&base), &e(&disjoint)).unwrap().abs();
            let near = cosine_similarity(&e(&base), &e(&shared)).unwrap().abs();
            if far < near {
                wins += 1;
            }
        }
        assert_eq!(wins, 100);
    }

    struct CountingEmbedder {
        inner: MockEmbedder,
        calls: AtomicUsize,
    }

    impl Embedder for CountingEmbedder {
        fn model(&self) -> &str {
            self.inner.model()
        }
        fn embed(&self, batch: &[(String, String)]) -> Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed(batch)
        }
    }

    struct DownEmbedder;

    impl Embedder for DownEmbedder {
        fn model(&self) -> &str {
            "m"
        }
        fn embed(&self, _: &[(String, String)]) -> Result<Vec<EmbeddingVector>> {
            Err(Error::Endpoint("connection refused".into()))
        }
    }

    #[test]
    fn cache_hits_skip_the_embedder() {
        let mut cache = EmbeddingCache::in_memory();
        cache
            .insert_all(&[
                EmbeddingVector { id: "a".into(), values: vec![1.0, 0.0], model: "m".into() },
                EmbeddingVector { id: "b".into(), values: vec![0.0, 1.0], model: "m".into() },
            ])
            .unwrap();
        let texts = vec![("b".to_string(), "t".to_string()), ("a".to_string(), "t".to_string())];
        let out = embed_batch(&texts, &DownEmbedder, &mut cache).unwrap();
        assert_eq!(out[0].values, vec![0.0, 1.0]);
        assert_eq!(out[1].id, "a");

        let missing = vec![("c".to_string(), "t".to_string())];
        assert!(matches!(embed_batch(&missing, &DownEmbedder, &mut cache), Err(Error::Endpoint(_))));
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let mut cache = EmbeddingCache::in_memory();
        cache
            .insert_all(&[EmbeddingVector { id: "a".into(), values: vec![1.0; 4], model: "mock-hash-8-0".into() }])
            .unwrap();
        let texts = vec![("a".to_string(), "x".to_string()), ("b".to_string(), "y".to_string())];
        let err = embed_batch(&texts, &MockEmbedder::new(8, 0), &mut cache).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 4, found: 8 }));
    }

    #[test]
    fn cache_file_round_trips_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.cache");
        let emb = CountingEmbedder { inner: MockEmbedder::new(16, 2), calls: AtomicUsize::new(0) };
        let texts: Vec<(String, String)> =
            (0..5).map(|i| (format!("n{i}"), format!("text number {i}"))).collect();
        let first = {
            let mut cache = EmbeddingCache::open(&path).unwrap();
            embed_batch(&texts, &emb, &mut cache).unwrap()
        };
        let mut reopened = EmbeddingCache::open(&path).unwrap();
        let second = embed_batch(&texts, &emb, &mut reopened).unwrap();
        assert_eq!(emb.calls.load(Ordering::SeqCst), 1);
        for (a, b) in first.iter().zip(&second) {
            let bits = |v: &EmbeddingVector| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        // append-only: adding one more id only adds one line
        let more = vec![("n9".to_string(), "another".to_string())];
        embed_batch(&more, &emb, &mut reopened).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 6);
    }

    proptest::proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in proptest::collection::vec(-10.0f64..10.0, 5),
            v in proptest::collection::vec(-10.0f64..10.0, 5),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            proptest::prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let c = cosine_similarity(&u, &v).unwrap();
            proptest::prop_assert!((c - cosine_similarity(&v, &u).unwrap()).abs() < 1e-12);
            let su: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * beta).collect();
            proptest::prop_assert!((c - cosine_similarity(&su, &sv).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn set_similarity_equals_pairwise_mean(
            a in proptest::collection::vec(proptest::collection::vec(0.1f64..5.0, 3), 1..8),
            b in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..8),
        ) {
            let b: Vec<Vec<f64>> = b.into_iter().filter(|v| norm(v) > 1e-3).collect();
            proptest::prop_assume!(!b.is_empty());
            let ar: Vec<&[f64]> = a.iter().map(|v| v.as_slice()).collect();
            let br: Vec<&[f64]> = b.iter().map(|v| v.as_slice()).collect();
            let fast = set_similarity(&ar, &br).unwrap();
            proptest::prop_assert!((fast - pairwise_mean(&ar, &br)).abs() < 1e-12);
        }
    }
}
