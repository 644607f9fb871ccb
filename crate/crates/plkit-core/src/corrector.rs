//! Box correction: a cascade of three class-agnostic linear box-delta
//! regressors gated by anchor IoU (0.3, 0.5, 0.7).
//!
//! Each stage maps a feature vector to a [`BoxDelta`] and is trained
//! independently by seeded mini-batch gradient descent on smooth-L1 loss.
//! A training pair enters every stage whose gate its anchor IoU strictly
//! exceeds, so stage memberships are nested. At correction time the stages
//! run in succession, each decoding its predicted delta against the current
//! box and clipping to the image.
//!
//! Features come from a [`FeatureProvider`]: `Static` reuses one vector per
//! candidate for all stages (precomputed files), `Oracle` recomputes the
//! vector from the current box through a supplied deterministic function.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Annotation, Detection, EmbeddingMatrix, ImageId};
use crate::geometry::{clip, decode_deltas, encode_deltas, iou, BBox, BoxDelta, ImageExtent};

/// Anchor-IoU gates for the three cascade stages, in order.
pub const CASCADE_GATES: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("stage {0} has no training pairs")]
    EmptyStage(usize),
    #[error("training loss became non-finite at stage {stage}, epoch {epoch}")]
    DivergedLoss { stage: usize, epoch: usize },
    #[error("no feature available for candidate '{0}'")]
    MissingFeature(String),
    #[error("feature has dimension {got}, model expects {expected}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("inconsistent feature dimensions in training pairs: {0} vs {1}")]
    InconsistentFeatureDim(usize, usize),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

/// One linear box-delta regressor with its IoU gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRegressor {
    pub iou_gate: f64,
    /// Four rows (dx, dy, dw, dh), each `feature_dim` long.
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; 4],
}

impl StageRegressor {
    fn zeros(feature_dim: usize, iou_gate: f64) -> Self {
        Self {
            iou_gate,
            weights: vec![vec![0.0; feature_dim]; 4],
            bias: [0.0; 4],
        }
    }

    pub fn predict(&self, feature: &[f64]) -> BoxDelta {
        let mut out = [0.0; 4];
        for (c, row) in self.weights.iter().enumerate() {
            out[c] = self.bias[c] + row.iter().zip(feature).map(|(w, x)| w * x).sum::<f64>();
        }
        BoxDelta::from_array(out)
    }
}

/// Three stage regressors ordered by ascending gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRegressor {
    pub feature_dim: usize,
    pub stages: Vec<StageRegressor>,
}

impl CascadeRegressor {
    /// All-zero cascade: predicts zero deltas, so correction is the
    /// identity (up to clipping).
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            stages: CASCADE_GATES
                .iter()
                .map(|&g| StageRegressor::zeros(feature_dim, g))
                .collect(),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CorrectorError> {
        let bytes = serde_json::to_vec_pretty(self).expect("model serializes");
        std::fs::write(path, bytes).map_err(|e| CorrectorError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorrectorError> {
        let bytes = std::fs::read(path).map_err(|e| CorrectorError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_slice(&bytes).map_err(|e| CorrectorError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// A feature vector with the anchor box it was pooled from and the box it
/// should regress to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub feature: Vec<f64>,
    pub anchor: BBox,
    pub target: BBox,
    pub anchor_iou: f64,
}

/// Per-stage training pairs; `stages[s]` holds every pair whose anchor IoU
/// strictly exceeds `CASCADE_GATES[s]`.
#[derive(Debug, Clone, Default)]
pub struct StagePairs {
    pub stages: [Vec<TrainPair>; 3],
}

impl StagePairs {
    pub fn counts(&self) -> [usize; 3] {
        [
            self.stages[0].len(),
            self.stages[1].len(),
            self.stages[2].len(),
        ]
    }
}

/// A proposal box with its pooled feature, ready for ground-truth matching.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub image_id: ImageId,
    pub box_: BBox,
    pub feature: Vec<f64>,
}

/// Routes raw pairs into cascade stages by their anchor IoU.
pub fn split_pairs_into_stages(pairs: Vec<TrainPair>) -> StagePairs {
    let mut out = StagePairs::default();
    for pair in pairs {
        for (s, &gate) in CASCADE_GATES.iter().enumerate() {
            if pair.anchor_iou > gate {
                out.stages[s].push(pair.clone());
            }
        }
    }
    out
}

/// Matches each proposal to its highest-IoU ground truth on the same image
/// and gates the resulting pairs into stages. Proposals at IoU <= 0.3 and
/// images without ground truth contribute nothing. Ignore-flagged and
/// zero-size annotations are skipped as targets.
pub fn build_training_set(proposals: &[Proposal], ground_truth: &[Annotation]) -> StagePairs {
    let mut pairs = Vec::new();
    for prop in proposals {
        if !prop.box_.has_positive_size() {
            continue;
        }
        let mut best: Option<(f64, &Annotation)> = None;
        for gt in ground_truth {
            if gt.image_id != prop.image_id || gt.is_ignore || !gt.box_.has_positive_size() {
                continue;
            }
            let overlap = iou(&prop.box_, &gt.box_);
            // strict > keeps the first annotation on ties
            if best.map_or(true, |(b, _)| overlap > b) {
                best = Some((overlap, gt));
            }
        }
        if let Some((anchor_iou, gt)) = best {
            if anchor_iou > CASCADE_GATES[0] {
                pairs.push(TrainPair {
                    feature: prop.feature.clone(),
                    anchor: prop.box_,
                    target: gt.box_,
                    anchor_iou,
                });
            }
        }
    }
    split_pairs_into_stages(pairs)
}

/// Smooth-L1 value and derivative at residual `r` with transition `beta`:
/// quadratic inside `|r| < beta`, linear outside.
pub fn smooth_l1(residual: f64, beta: f64) -> (f64, f64) {
    debug_assert!(beta > 0.0);
    if residual.abs() < beta {
        (residual * residual / (2.0 * beta), residual / beta)
    } else {
        (residual.abs() - beta / 2.0, residual.signum())
    }
}

/// Gradient-descent hyperparameters for cascade training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 64,
            beta: 1.0,
            seed: 0,
        }
    }
}

/// Mean smooth-L1 over all pairs and the four delta components, for a
/// single stage model.
pub fn mean_stage_loss(stage: &StageRegressor, pairs: &[TrainPair], beta: f64) -> f64 {
    let mut total = 0.0;
    for pair in pairs {
        let target = encode_deltas(&pair.anchor, &pair.target).expect("positive-size pair");
        let pred = stage.predict(&pair.feature);
        for (p, t) in pred.to_array().iter().zip(target.to_array()) {
            total += smooth_l1(p - t, beta).0;
        }
    }
    total / (4.0 * pairs.len() as f64)
}

/// Trains the three stage regressors independently with seeded mini-batch
/// gradient descent from zero initialization. Deterministic in
/// `(pairs, config)`.
pub fn train_cascade(pairs: &StagePairs, config: &TrainConfig) -> Result<CascadeRegressor, CorrectorError> {
    let mut feature_dim = None;
    for stage_pairs in &pairs.stages {
        for pair in stage_pairs {
            match feature_dim {
                None => feature_dim = Some(pair.feature.len()),
                Some(d) if d != pair.feature.len() => {
                    return Err(CorrectorError::InconsistentFeatureDim(d, pair.feature.len()))
                }
                _ => {}
            }
        }
    }
    for (s, stage_pairs) in pairs.stages.iter().enumerate() {
        if stage_pairs.is_empty() {
            return Err(CorrectorError::EmptyStage(s + 1));
        }
    }
    let dim = feature_dim.expect("stages are non-empty");

    let mut model = CascadeRegressor::zeros(dim);
    for (s, stage_pairs) in pairs.stages.iter().enumerate() {
        let stage = &mut model.stages[s];
        let targets: Vec<[f64; 4]> = stage_pairs
            .iter()
            .map(|p| {
                encode_deltas(&p.anchor, &p.target)
                    .map(BoxDelta::to_array)
                    .map_err(CorrectorError::from)
            })
            .collect::<Result<_, _>>()?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(s as u64);
        let mut order: Vec<usize> = (0..stage_pairs.len()).collect();

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let scale = 1.0 / (4.0 * batch.len() as f64);
                let mut grad_w = vec![vec![0.0; dim]; 4];
                let mut grad_b = [0.0; 4];
                let mut batch_loss = 0.0;
                for &i in batch {
                    let x = &stage_pairs[i].feature;
                    let pred = stage.predict(x);
                    for (c, (p, t)) in pred.to_array().iter().zip(targets[i]).enumerate() {
                        let (loss, grad) = smooth_l1(p - t, config.beta);
                        batch_loss += loss;
                        let g = grad * scale;
                        grad_b[c] += g;
                        for (gw, xv) in grad_w[c].iter_mut().zip(x) {
                            *gw += g * xv;
                        }
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(CorrectorError::DivergedLoss { stage: s + 1, epoch });
                }
                for c in 0..4 {
                    stage.bias[c] -= config.learning_rate * grad_b[c];
                    for (w, g) in stage.weights[c].iter_mut().zip(&grad_w[c]) {
                        *w -= config.learning_rate * g;
                    }
                }
            }
        }
    }
    Ok(model)
}

/// Where correction features come from.
pub enum FeatureProvider<'a> {
    /// One fixed vector per candidate, looked up by `det:<id>`; every stage
    /// reuses it.
    Static { embeddings: &'a EmbeddingMatrix },
    /// Recomputes the vector from the current box. The function must be
    /// deterministic; `None` means no feature exists for that candidate.
    Oracle {
        #[allow(clippy::type_complexity)]
        func: &'a dyn Fn(u64, &BBox) -> Option<Vec<f64>>,
    },
}

impl FeatureProvider<'_> {
    fn feature(&self, candidate: &Detection, current: &BBox) -> Result<Vec<f64>, CorrectorError> {
        match self {
            FeatureProvider::Static { embeddings } => {
                let key = candidate.embedding_key();
                embeddings
                    .get(&key)
                    .map(|row| row.iter().map(|&v| v as f64).collect())
                    .ok_or(CorrectorError::MissingFeature(key))
            }
            FeatureProvider::Oracle { func } => func(candidate.det_id, current)
                .ok_or_else(|| CorrectorError::MissingFeature(candidate.embedding_key())),
        }
    }
}

/// Result of running a candidate through the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrected {
    pub box_: BBox,
    /// True when an intermediate box collapsed to zero size and the cascade
    /// stopped early, returning the last usable box.
    pub collapsed: bool,
}

/// Runs the candidate box through the three stages in succession, clipping
/// after each decode. The returned box always lies within the extent.
pub fn correct(
    model: &CascadeRegressor,
    candidate: &Detection,
    provider: &FeatureProvider,
    extent: &ImageExtent,
) -> Result<Corrected, CorrectorError> {
    let mut current = clip(&candidate.box_, extent);
    if !current.has_positive_size() {
        return Ok(Corrected {
            box_: current,
            collapsed: true,
        });
    }
    for stage in &model.stages {
        let feature = provider.feature(candidate, &current)?;
        if feature.len() != model.feature_dim {
            return Err(CorrectorError::FeatureDimMismatch {
                expected: model.feature_dim,
                got: feature.len(),
            });
        }
        let delta = stage.predict(&feature);
        let decoded = decode_deltas(&current, &delta)?;
        let next = clip(&decoded, extent);
        if !next.has_positive_size() {
            return Ok(Corrected {
                box_: current,
                collapsed: true,
            });
        }
        current = next;
    }
    Ok(Corrected {
        box_: current,
        collapsed: false,
    })
}
