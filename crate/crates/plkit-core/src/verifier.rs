//! Label verification: a cosine-similarity kNN classifier built from the
//! few-shot embeddings, and the accept/reject policy over candidates.
//!
//! A candidate is verified when the kNN prediction over its embedding
//! agrees with the detector's class label. Tie rules are fixed so the
//! classifier is a total deterministic function: similarity ties prefer the
//! smaller training-row index, vote ties prefer the class whose best-ranked
//! neighbor comes first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    annotation_embedding_key, CategoryId, Detection, EmbeddingMatrix, FewShotSplit,
};
use crate::sourcing::CandidateSet;

#[derive(Debug, Error, PartialEq)]
pub enum VerifierError {
    #[error("no embedding row for key '{0}'")]
    MissingEmbedding(String),
    #[error("k={k} is out of range for {rows} training rows")]
    BadK { k: usize, rows: usize },
    #[error("vector for '{0}' has zero norm and cannot be L2-normalized")]
    ZeroVector(String),
    #[error("query has dimension {got}, classifier expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Neighbor count as a function of the shot count K: `min(K/3 + 1, 10)`.
pub fn k_for_shots(k_shots: usize) -> usize {
    (k_shots / 3 + 1).min(10)
}

/// Cosine-similarity kNN over the L2-normalized few-shot embeddings.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    dim: usize,
    k: usize,
    /// Row-major unit vectors, one per few-shot annotation.
    train_vectors: Vec<f64>,
    train_labels: Vec<CategoryId>,
}

impl KnnClassifier {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_labels.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.train_vectors[i * self.dim..(i + 1) * self.dim]
    }
}

fn normalize(v: &[f32], key: &str) -> Result<Vec<f64>, VerifierError> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(VerifierError::ZeroVector(key.to_string()));
    }
    Ok(v.iter().map(|&x| x as f64 / norm).collect())
}

/// Builds the classifier over exactly the split's few-shot annotations.
pub fn build_knn(
    split: &FewShotSplit,
    embeddings: &EmbeddingMatrix,
    k: usize,
) -> Result<KnnClassifier, VerifierError> {
    let rows = split.novel_annotations.len();
    if k == 0 || k > rows {
        return Err(VerifierError::BadK { k, rows });
    }
    let dim = embeddings.dim();
    let mut train_vectors = Vec::with_capacity(rows * dim);
    let mut train_labels = Vec::with_capacity(rows);
    for ann in &split.novel_annotations {
        let key = annotation_embedding_key(ann.id);
        let vector = embeddings
            .get(&key)
            .ok_or_else(|| VerifierError::MissingEmbedding(key.clone()))?;
        train_vectors.extend(normalize(vector, &key)?);
        train_labels.push(ann.category);
    }
    Ok(KnnClassifier {
        dim,
        k,
        train_vectors,
        train_labels,
    })
}

/// Predicts the majority label among the k most cosine-similar training
/// rows.
pub fn classify(classifier: &KnnClassifier, query: &[f32]) -> Result<CategoryId, VerifierError> {
    if query.len() != classifier.dim {
        return Err(VerifierError::DimensionMismatch {
            expected: classifier.dim,
            got: query.len(),
        });
    }
    let q = normalize(query, "query").map_err(|_| VerifierError::ZeroVector("query".into()))?;

    // similarity per row; sort by (similarity desc, row index asc)
    let mut ranked: Vec<(f64, usize)> = (0..classifier.len())
        .map(|i| {
            let sim = classifier.row(i).iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
            (sim, i)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite similarity").then(a.1.cmp(&b.1)));
    let neighbors = &ranked[..classifier.k];

    let mut votes: Vec<(CategoryId, usize)> = Vec::new();
    for &(_, idx) in neighbors {
        let label = classifier.train_labels[idx];
        match votes.iter_mut().find(|(c, _)| *c == label) {
            Some((_, n)) => *n += 1,
            None => votes.push((label, 1)),
        }
    }
    let max_votes = votes.iter().map(|&(_, n)| n).max().expect("k >= 1");
    // vote tie: the class whose best-ranked neighbor comes first wins;
    // neighbors are already in rank order, so the first hit decides
    let winner = neighbors
        .iter()
        .map(|&(_, idx)| classifier.train_labels[idx])
        .find(|label| votes.iter().any(|&(c, n)| c == *label && n == max_votes))
        .expect("some class holds the max vote");
    Ok(winner)
}

/// A candidate detection together with the kNN's independent opinion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledCandidate {
    pub detection: Detection,
    pub knn_label: CategoryId,
}

/// Partition of a candidate set into verified and rejected halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub verified: Vec<LabelledCandidate>,
    pub rejected: Vec<LabelledCandidate>,
}

impl VerificationOutcome {
    pub fn verified_detections(&self) -> Vec<Detection> {
        self.verified.iter().map(|c| c.detection.clone()).collect()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::datamodel::DataError> {
        let bytes = std::fs::read(path).map_err(|e| crate::datamodel::DataError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| crate::datamodel::DataError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Accepts each candidate iff the kNN prediction over its embedding equals
/// the detector's label.
pub fn verify(
    candidates: &CandidateSet,
    classifier: &KnnClassifier,
    candidate_embeddings: &EmbeddingMatrix,
) -> Result<VerificationOutcome, VerifierError> {
    let mut verified = Vec::new();
    let mut rejected = Vec::new();
    for det in &candidates.candidates {
        let key = det.embedding_key();
        let vector = candidate_embeddings
            .get(&key)
            .ok_or_else(|| VerifierError::MissingEmbedding(key.clone()))?;
        let knn_label = classify(classifier, vector)?;
        let labelled = LabelledCandidate {
            detection: det.clone(),
            knn_label,
        };
        if knn_label == det.category {
            verified.push(labelled);
        } else {
            rejected.push(labelled);
        }
    }
    Ok(VerificationOutcome { verified, rejected })
}
