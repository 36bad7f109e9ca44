//! Multimodal concept representations and the concept similarity matrix.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Concept, ConceptKey};
use crate::error::{Error, Result};
use crate::features::{Embeddings, FeatureStore};

/// How per-image features are pooled into one visual vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregation {
    #[default]
    #[serde(rename = "cnn-mean")]
    Mean,
    #[serde(rename = "cnn-max")]
    Max,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "cnn-mean",
            Aggregation::Max => "cnn-max",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" | "cnn-mean" => Ok(Aggregation::Mean),
            "max" | "cnn-max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length; the zero vector is returned unchanged.
pub fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Componentwise mean or max of the image vectors, then L2-normalized.
pub fn aggregate_visual(images: &[&[f64]], mode: Aggregation) -> Result<Vec<f64>> {
    let first = images.first().ok_or(Error::Empty("concept has no images"))?;
    let dim = first.len();
    let mut acc = first.to_vec();
    for image in &images[1..] {
        if image.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: image.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(image.iter()) {
            match mode {
                Aggregation::Mean => *a += x,
                Aggregation::Max => *a = a.max(*x),
            }
        }
    }
    if mode == Aggregation::Mean {
        let n = images.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(l2_normalize(acc))
}

/// `(alpha * visual) ⊕ ((1 - alpha) * linguistic)`.
pub fn fuse(visual: &[f64], linguistic: &[f64], alpha: f64) -> Vec<f64> {
    visual
        .iter()
        .map(|v| alpha * v)
        .chain(linguistic.iter().map(|l| (1.0 - alpha) * l))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRepresentation {
    pub concept: ConceptKey,
    pub visual: Vec<f64>,
    /// Normalized verb embedding ⊕ object embedding.
    pub linguistic: Vec<f64>,
    pub alpha: f64,
    pub combined: Vec<f64>,
    pub aggregation: Aggregation,
}

impl ConceptRepresentation {
    /// The same concept re-fused at another weight.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        ConceptRepresentation {
            combined: fuse(&self.visual, &self.linguistic, alpha),
            alpha,
            ..self.clone()
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {alpha}")))
    }
}

pub fn build_representation(
    concept: &Concept,
    features: &FeatureStore,
    embeddings: &Embeddings,
    alpha: f64,
    mode: Aggregation,
) -> Result<ConceptRepresentation> {
    check_alpha(alpha)?;
    let key = concept.key();
    let images = concept
        .image_ids
        .iter()
        .map(|id| features.require(id))
        .collect::<Result<Vec<_>>>()?;
    let visual = aggregate_visual(&images, mode).map_err(|e| match e {
        Error::Empty(_) => Error::NoImages(key.to_string()),
        other => other,
    })?;

    let verb = embeddings
        .lookup(&concept.verb)
        .ok_or_else(|| Error::MissingEmbedding(concept.verb.clone()))?;
    let zero = vec![0.0; embeddings.dim()];
    let object = match embeddings.lookup(&concept.object) {
        Some(v) => v,
        None => {
            log::warn!(
                "no embedding for object {:?} of {key}; using the zero vector",
                concept.object
            );
            &zero
        }
    };
    let linguistic = l2_normalize(verb.iter().chain(object).copied().collect());
    let combined = fuse(&visual, &linguistic, alpha);
    Ok(ConceptRepresentation {
        concept: key,
        visual,
        linguistic,
        alpha,
        combined,
        aggregation: mode,
    })
}

/// Cosine similarities between concepts with the mean similarity and
/// per-row neighbor rankings precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<f64>,
    s_avg: f64,
    /// `neighbors[i]`: the other indices by descending similarity, ties by index.
    neighbors: Vec<Vec<usize>>,
    /// `rank[i * n + j]`: 1-based position of `j` in `neighbors[i]`.
    rank: Vec<usize>,
}

impl SimilarityMatrix {
    /// Cosine similarity of every pair of vectors. Zero vectors are rejected.
    pub fn from_vectors<V: AsRef<[f64]> + Sync>(vectors: &[V]) -> Result<Self> {
        let n = vectors.len();
        let norms: Vec<f64> = vectors.iter().map(|v| norm(v.as_ref())).collect();
        if let Some(i) = norms.iter().position(|&x| x == 0.0) {
            return Err(Error::ZeroVector(format!("#{i}")));
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| {
                        let s = dot(vectors[i].as_ref(), vectors[j].as_ref()) / (norms[i] * norms[j]);
                        s.clamp(-1.0, 1.0)
                    })
                    .collect()
            })
            .collect();
        let mut entries = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            entries[i * n + i] = 1.0;
            for (off, &s) in row.iter().enumerate() {
                let j = i + 1 + off;
                entries[i * n + j] = s;
                entries[j * n + i] = s;
            }
        }
        Self::from_entries(n, entries)
    }

    /// Wraps a row-major symmetric matrix with entries in [-1, 1].
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "similarity matrix needs at least 2 concepts, got {n}"
            )));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let s = entries[i * n + j];
                if !s.is_finite() || s.abs() > 1.0 || s != entries[j * n + i] {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i}, {j}) = {s} breaks symmetry or the [-1, 1] range"
                    )));
                }
            }
        }
        let s_avg = entries.iter().sum::<f64>() / (n * n) as f64;
        let mut neighbors = Vec::with_capacity(n);
        let mut rank = vec![0; n * n];
        for i in 0..n {
            let row = &entries[i * n..(i + 1) * n];
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            for (pos, &j) in order.iter().enumerate() {
                rank[i * n + j] = pos + 1;
            }
            neighbors.push(order);
        }
        Ok(SimilarityMatrix {
            n,
            entries,
            s_avg,
            neighbors,
            rank,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Mean over all n² entries, diagonal included.
    pub fn s_avg(&self) -> f64 {
        self.s_avg
    }

    /// 1-based rank of `j` among the neighbors of `i`.
    pub fn rank_of(&self, i: usize, j: usize) -> usize {
        debug_assert_ne!(i, j);
        self.rank[i * self.n + j]
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn nearest(&self, i: usize) -> usize {
        self.neighbors[i][0]
    }
}

/// Similarity over the fused vectors of `reps`.
pub fn similarity_matrix(reps: &[ConceptRepresentation]) -> Result<SimilarityMatrix> {
    let vectors: Vec<&[f64]> = reps.iter().map(|r| r.combined.as_slice()).collect();
    SimilarityMatrix::from_vectors(&vectors).map_err(|e| match e {
        Error::ZeroVector(idx) => {
            let i: usize = idx.trim_start_matches('#').parse().unwrap_or_default();
            Error::ZeroVector(reps[i].concept.to_string())
        }
        other => other,
    })
}
