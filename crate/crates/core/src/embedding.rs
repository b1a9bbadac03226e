//! Vector math behind proposal identification: normalization, cosine
//! similarity against prototypes, softmax confidence and the composite scores.
//!
//! All arithmetic is done in `f64` regardless of archive storage width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototype::{ClassId, Prototype};

/// Norms at or below this are treated as zero.
pub const EPS_NORM: f64 = 1e-12;

/// Raw extractor output.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedEmbedding(Vec<f64>);

impl NormalizedEmbedding {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_normalize(e: &Embedding) -> Result<NormalizedEmbedding> {
    let norm = e.norm();
    if norm <= EPS_NORM {
        return Err(Error::ZeroVector { index: None });
    }
    Ok(NormalizedEmbedding(e.0.iter().map(|v| v / norm).collect()))
}

/// Cosine similarities of one proposal against every class prototype.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    class_ids: Vec<ClassId>,
    scores: Vec<f64>,
}

impl SimilarityRow {
    pub fn new(class_ids: Vec<ClassId>, scores: Vec<f64>) -> Result<Self> {
        if class_ids.is_empty() {
            return Err(Error::EmptyStore);
        }
        if class_ids.len() != scores.len() {
            return Err(Error::DimensionMismatch {
                expected: class_ids.len(),
                actual: scores.len(),
            });
        }
        Ok(Self { class_ids, scores })
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Position of the best score; ties resolve to the lowest class id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.scores.len() {
            let (s, b) = (self.scores[i], self.scores[best]);
            if s > b || (s == b && self.class_ids[i] < self.class_ids[best]) {
                best = i;
            }
        }
        best
    }

    pub fn predicted_class(&self) -> ClassId {
        self.class_ids[self.argmax()]
    }

    pub fn s_max(&self) -> f64 {
        self.scores[self.argmax()]
    }

    pub fn breakdown(&self) -> ScoreBreakdown {
        let s_max = self.s_max();
        let p_max = softmax_max(&self.scores);
        let s_mc = mean_corrected(self);
        ScoreBreakdown {
            s_max,
            p_max,
            s_filter: filter_score(s_max, p_max),
            s_mc,
            s_final: final_score(s_max, p_max, s_mc),
        }
    }
}

/// Every intermediate score for one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_max: f64,
    pub p_max: f64,
    pub s_filter: f64,
    pub s_mc: f64,
    pub s_final: f64,
}

/// Dot product of `z` with each prototype vector as stored (no renormalization).
pub fn cosine_scores(z: &NormalizedEmbedding, prototypes: &[Prototype]) -> Result<SimilarityRow> {
    if prototypes.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut class_ids = Vec::with_capacity(prototypes.len());
    let mut scores = Vec::with_capacity(prototypes.len());
    for p in prototypes {
        if p.vector().len() != z.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.vector().len(),
                actual: z.dim(),
            });
        }
        class_ids.push(p.class_id());
        scores.push(dot(z.values(), p.vector()));
    }
    Ok(SimilarityRow { class_ids, scores })
}

/// Softmax probability of the largest score, evaluated after subtracting the max.
///
/// Panics on an empty slice.
pub fn softmax_max(scores: &[f64]) -> f64 {
    let max = scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "softmax over empty or non-finite scores");
    let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    1.0 / denom
}

pub fn filter_score(s_max: f64, p_max: f64) -> f64 {
    s_max + p_max
}

/// Top score minus the mean over all classes; never negative.
pub fn mean_corrected(row: &SimilarityRow) -> f64 {
    let mean = row.scores.iter().sum::<f64>() / row.scores.len() as f64;
    (row.s_max() - mean).max(0.0)
}

pub fn final_score(s_max: f64, p_max: f64, s_mc: f64) -> f64 {
    s_max + p_max + s_mc
}
