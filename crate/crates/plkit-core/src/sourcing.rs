//! Candidate sourcing: keep novel-class detections scoring strictly above
//! the confidence threshold, optionally capped per class.

use serde::{Deserialize, Serialize};

use crate::datamodel::{Detection, FewShotSplit};

/// High-confidence novel-class detections selected for verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub threshold_q: f64,
    pub per_class_cap: Option<usize>,
    pub candidates: Vec<Detection>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::datamodel::DataError> {
        let bytes = std::fs::read(path).map_err(|e| crate::datamodel::DataError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| crate::datamodel::DataError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::datamodel::DataError> {
        let bytes = serde_json::to_vec_pretty(self).expect("candidate set serializes");
        std::fs::write(path, bytes).map_err(|e| crate::datamodel::DataError::io(path, e))
    }
}

/// Filters detections to novel categories with `score > q`, keeping at most
/// `cap` per class when set.
///
/// Output ordering is fixed regardless of input order: candidates are
/// grouped by ascending category id and sorted by descending score within
/// each class; score ties break by `(image_id, input order)`. The cap keeps
/// the top of that ordering, so the selection is deterministic too.
pub fn source_candidates(
    detections: &[Detection],
    split: &FewShotSplit,
    q: f64,
    cap: Option<usize>,
) -> CandidateSet {
    debug_assert!((0.0..=1.0).contains(&q));

    let mut kept: Vec<(usize, &Detection)> = detections
        .iter()
        .enumerate()
        .filter(|(_, d)| split.is_novel(d.category) && d.score > q)
        .collect();

    kept.sort_by(|(ia, a), (ib, b)| {
        a.category
            .cmp(&b.category)
            .then_with(|| b.score.partial_cmp(&a.score).expect("finite scores"))
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then_with(|| ia.cmp(ib))
    });

    let mut candidates = Vec::with_capacity(kept.len());
    if let Some(cap) = cap {
        let mut current_class = None;
        let mut taken = 0usize;
        for (_, det) in kept {
            if current_class != Some(det.category) {
                current_class = Some(det.category);
                taken = 0;
            }
            if taken < cap {
                candidates.push(det.clone());
                taken += 1;
            }
        }
    } else {
        candidates.extend(kept.into_iter().map(|(_, d)| d.clone()));
    }

    CandidateSet {
        threshold_q: q,
        per_class_cap: cap,
        candidates,
    }
}
