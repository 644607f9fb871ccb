//! Stand-in model of end-to-end retraining: given the assembled annotation
//! set, predict what the retrained detector would output on the same
//! world. This is what makes the full pipeline measurable without a
//! network.
//!
//! Per hidden object, the outcome depends on how the assembled set covers
//! it:
//!
//! - **Covered** by a trusted (non-ignore) annotation at IoU >= `cover_iou`:
//!   the detector learned this instance. It re-detects it with the
//!   annotation's label (wrong pseudo-labels are learned confidently too),
//!   a box near the annotation's box (so pseudo-box quality propagates),
//!   and a lifted confidence score.
//! - **Ignore-covered** (IoU > 0.5 with an ignore region, not covered):
//!   the region was excluded from every loss, so the pre-retrain response
//!   survives: the original detection is replayed unchanged.
//! - **Uncovered with a pre-retrain detection**: the region was trained as
//!   background, which actively suppresses it; the old detection survives
//!   only with probability `suppressed_keep`, at a scaled-down score.
//! - **Undetected**: extra supervision generalizes; the object is
//!   discovered with a probability that saturates in the per-class
//!   supervision count, with a label whose correctness follows the
//!   supervision's label purity.
//!
//! Trusted pseudo-annotations that sit on no object at all ("phantoms",
//! typically badly-jittered boxes) still teach the detector to fire there
//! and emit a confident detection each.
//!
//! Each object draws from its own RNG stream keyed by its id, so changing
//! one object's coverage between two assembled sets leaves every other
//! object's draws untouched.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::simulate::{gauss, jitter_box};
use super::{DetectorNoise, SimulatorOutput, WorldTruth};
use crate::datamodel::{Annotation, AnnotationSource, CategoryId, Dataset, Detection, ImageId};
use crate::geometry::iou;
use crate::retrain::IGNORE_IOU;
use crate::synthworld::SimEvent;

const PHANTOM_STREAM: u64 = u64::MAX;

/// Response model of the retrained detector. Noise magnitudes are tied to
/// the detector noise where sensible, so a zero-noise detector yields a
/// zero-noise retrained detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainModel {
    /// IoU at which a trusted annotation covers an object.
    pub cover_iou: f64,
    /// Covered-box jitter, as a fraction of the detector's box jitter.
    pub covered_jitter_frac: f64,
    /// Covered score: `s -> s + lift * (1 - s)` of the pre-retrain score.
    pub covered_score_lift: f64,
    pub covered_score_sigma: f64,
    /// Ceiling and saturation scale for discovering undetected objects.
    pub discover_max: f64,
    pub discover_scale: f64,
    pub discover_score_mean: f64,
    pub discover_score_sigma: f64,
    /// Survival probability and score scale for suppressed detections.
    pub suppressed_keep: f64,
    pub suppressed_score_scale: f64,
}

impl Default for RetrainModel {
    fn default() -> Self {
        Self {
            cover_iou: 0.5,
            covered_jitter_frac: 0.15,
            covered_score_lift: 0.6,
            covered_score_sigma: 0.015,
            discover_max: 0.35,
            discover_scale: 25.0,
            discover_score_mean: 0.78,
            discover_score_sigma: 0.06,
            suppressed_keep: 0.2,
            suppressed_score_scale: 0.5,
        }
    }
}

fn is_supervision(ann: &Annotation) -> bool {
    !ann.is_ignore && (ann.is_pseudo || ann.source == AnnotationSource::Fewshot)
}

/// Draws a wrong label from the true class's confusion row with the
/// diagonal removed.
fn draw_wrong_label(rng: &mut ChaCha8Rng, noise: &DetectorNoise, true_class: CategoryId) -> CategoryId {
    let row = &noise.confusion[(true_class.0 - 1) as usize];
    let off_mass: f64 = row
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != (true_class.0 - 1) as usize)
        .map(|(_, p)| p)
        .sum();
    if off_mass <= 0.0 {
        return true_class;
    }
    let u: f64 = rng.random_range(0.0..off_mass);
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        if i == (true_class.0 - 1) as usize {
            continue;
        }
        acc += p;
        if u < acc {
            return CategoryId((i + 1) as u32);
        }
    }
    true_class
}

/// Simulates the retrained detector over the whole world given the
/// assembled retraining set. Deterministic in all arguments.
pub fn simulate_retrained(
    world: &WorldTruth,
    assembled: &Dataset,
    pre_retrain: &SimulatorOutput,
    noise: &DetectorNoise,
    model: &RetrainModel,
    seed: u64,
) -> Vec<Detection> {
    let extent = world.config.extent;

    let mut trusted_by_image: BTreeMap<ImageId, Vec<&Annotation>> = BTreeMap::new();
    let mut ignores_by_image: BTreeMap<ImageId, Vec<&Annotation>> = BTreeMap::new();
    for ann in &assembled.annotations {
        if ann.is_ignore {
            ignores_by_image.entry(ann.image_id).or_default().push(ann);
        } else {
            trusted_by_image.entry(ann.image_id).or_default().push(ann);
        }
    }

    let mut objects_by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
    for (i, obj) in world.objects.iter().enumerate() {
        objects_by_image.entry(obj.image_id).or_default().push(i);
    }

    // pre-retrain detection per object
    let mut d0_by_object: BTreeMap<u64, &Detection> = BTreeMap::new();
    for event in &pre_retrain.events {
        if let SimEvent::Emitted { det_id, ann_id, .. } = event {
            if let Some(det) = pre_retrain.detections.iter().find(|d| d.det_id == *det_id) {
                d0_by_object.insert(*ann_id, det);
            }
        }
    }

    // supervision statistics: count and label purity per class, plus which
    // supervision annotations ground out on a real object
    let mut supervision_count: BTreeMap<CategoryId, usize> = BTreeMap::new();
    let mut supervision_correct: BTreeMap<CategoryId, usize> = BTreeMap::new();
    let mut grounded: Vec<bool> = vec![false; assembled.annotations.len()];
    for (a, ann) in assembled.annotations.iter().enumerate() {
        if !is_supervision(ann) {
            grounded[a] = true; // base GT and ignores never emit phantoms
            continue;
        }
        *supervision_count.entry(ann.category).or_insert(0) += 1;
        let best = objects_by_image
            .get(&ann.image_id)
            .into_iter()
            .flatten()
            .map(|&i| (iou(&ann.box_, &world.objects[i].box_), i))
            .fold(None::<(f64, usize)>, |acc, cur| match acc {
                Some(best) if best.0 >= cur.0 => Some(best),
                _ => Some(cur),
            });
        if let Some((overlap, obj_idx)) = best {
            if overlap >= model.cover_iou {
                grounded[a] = true;
                if world.objects[obj_idx].category == ann.category {
                    *supervision_correct.entry(ann.category).or_insert(0) += 1;
                }
            }
        }
    }
    let purity = |c: CategoryId| -> f64 {
        let total = supervision_count.get(&c).copied().unwrap_or(0);
        if total == 0 {
            return 1.0;
        }
        supervision_correct.get(&c).copied().unwrap_or(0) as f64 / total as f64
    };

    let mut out = Vec::new();
    let mut next_id = 0u64;
    let mut emit = |out: &mut Vec<Detection>, image_id, box_, category, score: f64| {
        out.push(Detection {
            det_id: next_id,
            image_id,
            box_,
            category,
            score: score.clamp(0.0, 1.0),
        });
        next_id += 1;
    };

    for obj in &world.objects {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(obj.ann_id);

        let covered_by = trusted_by_image
            .get(&obj.image_id)
            .into_iter()
            .flatten()
            .map(|ann| (iou(&obj.box_, &ann.box_), *ann))
            .fold(None::<(f64, &Annotation)>, |acc, cur| match acc {
                Some(best) if best.0 >= cur.0 => Some(best),
                _ => Some(cur),
            })
            .filter(|&(overlap, _)| overlap >= model.cover_iou);
        let d0 = d0_by_object.get(&obj.ann_id).copied();

        if let Some((_, ann)) = covered_by {
            let jitter = model.covered_jitter_frac * noise.box_jitter_sigma;
            let box_ = jitter_box(&mut rng, &ann.box_, jitter, &extent);
            let base = d0.map(|d| d.score).unwrap_or(noise.score_model.tp_mean);
            let lifted = base + model.covered_score_lift * (1.0 - base);
            let score = lifted + gauss(&mut rng, model.covered_score_sigma);
            emit(&mut out, obj.image_id, box_, ann.category, score);
            continue;
        }

        if let Some(d0) = d0 {
            let ignored = ignores_by_image
                .get(&obj.image_id)
                .into_iter()
                .flatten()
                .any(|ann| iou(&obj.box_, &ann.box_) > IGNORE_IOU);
            if ignored {
                // pre-retrain behavior preserved
                emit(&mut out, d0.image_id, d0.box_, d0.category, d0.score);
            } else if model.suppressed_keep > 0.0 && rng.random_bool(model.suppressed_keep) {
                emit(
                    &mut out,
                    d0.image_id,
                    d0.box_,
                    d0.category,
                    d0.score * model.suppressed_score_scale,
                );
            }
            continue;
        }

        // never detected: discovery driven by supervision mass
        let s_c = supervision_count.get(&obj.category).copied().unwrap_or(0);
        let p = model.discover_max * (1.0 - (-(s_c as f64) / model.discover_scale).exp());
        if p > 0.0 && rng.random_bool(p.min(1.0)) {
            let label = if rng.random_bool(purity(obj.category).clamp(0.0, 1.0)) {
                obj.category
            } else {
                draw_wrong_label(&mut rng, noise, obj.category)
            };
            let box_ = jitter_box(&mut rng, &obj.box_, noise.box_jitter_sigma, &extent);
            let score = model.discover_score_mean + gauss(&mut rng, model.discover_score_sigma);
            emit(&mut out, obj.image_id, box_, label, score);
        }
    }

    // phantom detections from supervision that grounds on no object
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PHANTOM_STREAM);
    for (a, ann) in assembled.annotations.iter().enumerate() {
        if grounded[a] {
            continue;
        }
        let jitter = model.covered_jitter_frac * noise.box_jitter_sigma;
        let box_ = jitter_box(&mut rng, &ann.box_, jitter, &extent);
        let base = noise.score_model.tp_mean;
        let score =
            base + model.covered_score_lift * (1.0 - base) + gauss(&mut rng, model.covered_score_sigma);
        emit(&mut out, ann.image_id, box_, ann.category, score);
    }

    out
}
