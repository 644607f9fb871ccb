//! Cumulative pipeline ablation over a seeded world: evaluate the detector
//! itself, then the retrained detector after each pseudo-labelling step is
//! added, against the hidden ground truth.
//!
//! Rows: `baseline` (the raw simulated detections), `sourcing` (all
//! candidates used as pseudo-annotations), `verification` (only verified
//! candidates), `correction` (verified candidates with corrected boxes).
//! From `sourcing` on, unverified novel detections become ignore regions.
//! The retrained-detector draws share one seed across rows, so row
//! differences isolate the pipeline change itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    corrector_training_pairs, derive_seed, generate_world, oracle_feature, simulate_detector,
    simulate_retrained, DetectorNoise, RetrainModel, WorldConfig, WorldError,
};
use crate::corrector::{correct, train_cascade, CorrectorError, FeatureProvider, TrainConfig};
use crate::datamodel::{make_few_shot_split, Annotation, DataError};
use crate::evaluator::{coco_map, MetricsReport};
use crate::retrain::{assemble_retrain_set, detection_to_pseudo, emit_ignore_regions};
use crate::sourcing::source_candidates;
use crate::verifier::{build_knn, k_for_shots, verify, VerifierError};

#[derive(Debug, Error)]
pub enum AblationError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
}

/// Pipeline hyperparameters for ablation and end-to-end runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Sourcing confidence threshold (strict >).
    pub q_threshold: f64,
    pub per_class_cap: Option<usize>,
    /// Explicit neighbor count; `None` derives it from K.
    pub k_neighbors: Option<usize>,
    pub corrector: TrainConfig,
    /// Proposals drawn per object for corrector training.
    pub proposals_per_object: usize,
    /// Per-(image, class) detection cap during evaluation.
    pub max_dets: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            q_threshold: 0.8,
            per_class_cap: None,
            k_neighbors: None,
            // oracle features are small in magnitude, so the cascade wants
            // a much larger step size than the corrector's generic default
            corrector: TrainConfig {
                learning_rate: 0.5,
                epochs: 300,
                batch_size: 64,
                beta: 1.0,
                seed: 0,
            },
            proposals_per_object: 6,
            max_dets: 100,
        }
    }
}

/// One ablation row: the step name, its evaluation, and bookkeeping counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub pseudo_count: usize,
    pub ignore_count: usize,
    pub report: MetricsReport,
}

/// Full ablation for one seed, plus the final step re-run without ignore
/// regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    pub final_without_ignores: MetricsReport,
}

impl AblationOutcome {
    pub fn row(&self, name: &str) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.name == name)
            .expect("known row name")
    }
}

const SEED_SIM: u64 = 1;
const SEED_SPLIT: u64 = 2;
const SEED_RETRAIN: u64 = 3;
const SEED_PAIRS: u64 = 4;
const SEED_TRAIN: u64 = 5;

/// Runs the cumulative ablation for one seed.
pub fn run_ablation(
    config: &WorldConfig,
    noise: &DetectorNoise,
    params: &PipelineParams,
    retrain_model: &RetrainModel,
    seed: u64,
) -> Result<AblationOutcome, AblationError> {
    noise.validate(config.n_classes())?;
    let world = generate_world(config, seed)?;
    let sim = simulate_detector(&world, noise, derive_seed(seed, SEED_SIM));
    let novel = world.novel_categories();
    let split = make_few_shot_split(
        &world.dataset,
        &novel,
        config.k_shots,
        derive_seed(seed, SEED_SPLIT),
    )?;
    let gts = &world.dataset.annotations;
    let retrain_seed = derive_seed(seed, SEED_RETRAIN);
    let max_dets = Some(params.max_dets);

    let mut rows = Vec::with_capacity(4);

    // the detector that produced the candidates, evaluated as-is
    rows.push(AblationRow {
        name: "baseline".to_string(),
        pseudo_count: 0,
        ignore_count: 0,
        report: coco_map(&sim.detections, gts, &split, max_dets),
    });

    let eval_step = |name: &str,
                         pseudo: &[Annotation],
                         ignores: &[Annotation]|
     -> Result<(AblationRow, MetricsReport), AblationError> {
        let assembled = assemble_retrain_set(&world.dataset, &split, pseudo, ignores)?;
        let retrained =
            simulate_retrained(&world, &assembled, &sim, noise, retrain_model, retrain_seed);
        let report = coco_map(&retrained, gts, &split, max_dets);
        Ok((
            AblationRow {
                name: name.to_string(),
                pseudo_count: pseudo.len(),
                ignore_count: ignores.len(),
                report: report.clone(),
            },
            report,
        ))
    };

    // + candidate sourcing: every candidate becomes a pseudo-annotation
    let candidates = source_candidates(
        &sim.detections,
        &split,
        params.q_threshold,
        params.per_class_cap,
    );
    let pseudo_sourced: Vec<Annotation> = candidates
        .candidates
        .iter()
        .map(|d| detection_to_pseudo(d, d.box_))
        .collect();
    let ignores_sourced = emit_ignore_regions(&sim.detections, &candidates.candidates, &novel);
    let (row, _) = eval_step("sourcing", &pseudo_sourced, &ignores_sourced)?;
    rows.push(row);

    // + label verification
    let k = params
        .k_neighbors
        .unwrap_or_else(|| k_for_shots(split.shots_k));
    let classifier = build_knn(&split, &world.true_embeddings, k)?;
    let outcome = verify(&candidates, &classifier, &sim.det_embeddings)?;
    let verified_dets = outcome.verified_detections();
    let pseudo_verified: Vec<Annotation> = verified_dets
        .iter()
        .map(|d| detection_to_pseudo(d, d.box_))
        .collect();
    let ignores_verified = emit_ignore_regions(&sim.detections, &verified_dets, &novel);
    let (row, _) = eval_step("verification", &pseudo_verified, &ignores_verified)?;
    rows.push(row);

    // + box correction over the verified set, oracle features
    let pairs = corrector_training_pairs(&world, params.proposals_per_object, derive_seed(seed, SEED_PAIRS));
    let train_config = TrainConfig {
        seed: derive_seed(seed, SEED_TRAIN),
        ..params.corrector.clone()
    };
    let model = train_cascade(&pairs, &train_config)?;
    let oracle = |det_id: u64, current: &crate::geometry::BBox| -> Option<Vec<f64>> {
        let ann_id = sim.source_of(det_id)?;
        let obj = world.object_by_ann(ann_id)?;
        oracle_feature(current, obj, &world).ok()
    };
    let provider = FeatureProvider::Oracle { func: &oracle };
    let mut pseudo_corrected = Vec::with_capacity(verified_dets.len());
    for det in &verified_dets {
        let extent = world
            .dataset
            .extent_of(det.image_id)
            .expect("detection references a world image");
        let corrected = correct(&model, det, &provider, extent)?;
        pseudo_corrected.push(detection_to_pseudo(det, corrected.box_));
    }
    let (row, _) = eval_step("correction", &pseudo_corrected, &ignores_verified)?;
    rows.push(row);

    // the final step again, assembling without any ignore regions
    let (_, final_without_ignores) = eval_step("correction_no_ignore", &pseudo_corrected, &[])?;

    Ok(AblationOutcome {
        seed,
        rows,
        final_without_ignores,
    })
}

/// Convenience accessors used by reports and tests.
impl AblationRow {
    pub fn nap(&self) -> f64 {
        self.report.novel_ap
    }
}
