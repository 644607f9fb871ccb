//! Detector simulation over a generated world, plus jittered proposal
//! generation for corrector training.
//!
//! Every draw is logged: an object either produces a `Missed` event or an
//! `Emitted` detection, so the event log conserves the object count. A
//! detection's embedding is its source object's true embedding — the
//! simulated features see the object itself, not the (possibly confused)
//! label, which is what gives label verification its leverage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{oracle_feature, DetectorNoise, WorldTruth};
use crate::corrector::{build_training_set, Proposal, StagePairs};
use crate::datamodel::{CategoryId, Detection, EmbeddingMatrix};
use crate::geometry::{clip, BBox, ImageExtent};

/// One logged simulator draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Missed {
        ann_id: u64,
    },
    Emitted {
        det_id: u64,
        ann_id: u64,
        label: CategoryId,
        correct: bool,
    },
}

/// Simulated detector output: detections, their embeddings, and the full
/// event log.
#[derive(Debug, Clone)]
pub struct SimulatorOutput {
    pub detections: Vec<Detection>,
    pub det_embeddings: EmbeddingMatrix,
    pub events: Vec<SimEvent>,
}

impl SimulatorOutput {
    /// Source object of a detection, from the event log.
    pub fn source_of(&self, det_id: u64) -> Option<u64> {
        self.events.iter().find_map(|e| match e {
            SimEvent::Emitted { det_id: d, ann_id, .. } if *d == det_id => Some(*ann_id),
            _ => None,
        })
    }
}

pub(crate) fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let g: f64 = rng.sample(StandardNormal);
        g * sigma
    } else {
        0.0
    }
}

/// Center-shift plus log-scale size jitter, sigma relative to box size.
/// `sigma == 0` returns the box untouched.
pub(crate) fn jitter_box(rng: &mut ChaCha8Rng, box_: &BBox, sigma: f64, extent: &ImageExtent) -> BBox {
    if sigma == 0.0 {
        return clip(box_, extent);
    }
    let (cx, cy) = box_.center();
    let cx = cx + gauss(rng, sigma * box_.w);
    let cy = cy + gauss(rng, sigma * box_.h);
    let w = box_.w * gauss(rng, sigma).exp();
    let h = box_.h * gauss(rng, sigma).exp();
    clip(
        &BBox::new(cx - w / 2.0, cy - h / 2.0, w, h),
        extent,
    )
}

pub(crate) fn draw_from_row(rng: &mut ChaCha8Rng, row: &[f64]) -> CategoryId {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return CategoryId((i + 1) as u32);
        }
    }
    CategoryId(row.len() as u32)
}

/// Runs the noisy detector over every hidden object. Deterministic in
/// `(world, noise, seed)`.
pub fn simulate_detector(world: &WorldTruth, noise: &DetectorNoise, seed: u64) -> SimulatorOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = world.config.extent;
    let score = &noise.score_model;

    let mut detections = Vec::new();
    let mut events = Vec::new();
    let mut embedding_rows = Vec::new();
    let mut det_id = 0u64;

    for obj in &world.objects {
        if noise.miss_rate > 0.0 && rng.random_bool(noise.miss_rate) {
            events.push(SimEvent::Missed { ann_id: obj.ann_id });
            continue;
        }
        let row = &noise.confusion[(obj.category.0 - 1) as usize];
        let label = draw_from_row(&mut rng, row);
        let correct = label == obj.category;
        let box_ = jitter_box(&mut rng, &obj.box_, noise.box_jitter_sigma, &extent);
        let mean = if correct { score.tp_mean } else { score.fp_mean };
        let s = (mean + gauss(&mut rng, score.sigma)).clamp(0.0, 1.0);

        let det = Detection {
            det_id,
            image_id: obj.image_id,
            box_,
            category: label,
            score: s,
        };
        embedding_rows.push((
            det.embedding_key(),
            world
                .true_embeddings
                .get(&crate::datamodel::annotation_embedding_key(obj.ann_id))
                .expect("object has an embedding")
                .to_vec(),
        ));
        events.push(SimEvent::Emitted {
            det_id,
            ann_id: obj.ann_id,
            label,
            correct,
        });
        detections.push(det);
        det_id += 1;
    }

    let det_embeddings = EmbeddingMatrix::new(world.config.emb_dim, embedding_rows)
        .expect("detection embeddings are well-formed");
    SimulatorOutput {
        detections,
        det_embeddings,
        events,
    }
}

/// Jitter range used when drawing corrector training proposals; the spread
/// covers all three cascade gates.
const PROPOSAL_SIGMA_RANGE: (f64, f64) = (0.02, 0.25);

/// Draws `n_per_object` jittered proposals around every object, attaches
/// oracle features, and builds the gated per-stage training pairs.
pub fn corrector_training_pairs(
    world: &WorldTruth,
    n_per_object: usize,
    seed: u64,
) -> StagePairs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = world.config.extent;
    let mut proposals = Vec::with_capacity(world.objects.len() * n_per_object);
    for obj in &world.objects {
        for _ in 0..n_per_object {
            let sigma = rng.random_range(PROPOSAL_SIGMA_RANGE.0..PROPOSAL_SIGMA_RANGE.1);
            let box_ = jitter_box(&mut rng, &obj.box_, sigma, &extent);
            if !box_.has_positive_size() {
                continue;
            }
            let feature = oracle_feature(&box_, obj, world).expect("positive-size proposal");
            proposals.push(Proposal {
                image_id: obj.image_id,
                box_,
                feature,
            });
        }
    }
    build_training_set(&proposals, &world.dataset.annotations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, NoiseConfig, WorldConfig};

    fn world_for_tests(n_images: usize) -> WorldTruth {
        let cfg = WorldConfig {
            n_images,
            ..WorldConfig::default()
        };
        generate_world(&cfg, 17).unwrap()
    }

    #[test]
    fn miss_rate_one_emits_nothing() {
        let world = world_for_tests(20);
        let mut noise = NoiseConfig::default().expand(3, 4);
        noise.miss_rate = 1.0;
        let sim = simulate_detector(&world, &noise, 1);
        assert!(sim.detections.is_empty());
        assert_eq!(sim.events.len(), world.objects.len());
        assert!(sim.events.iter().all(|e| matches!(e, SimEvent::Missed { .. })));
    }

    #[test]
    fn noiseless_detector_reproduces_ground_truth() {
        let world = world_for_tests(20);
        let noise = DetectorNoise {
            miss_rate: 0.0,
            confusion: (0..7)
                .map(|i| (0..7).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            box_jitter_sigma: 0.0,
            score_model: crate::synthworld::ScoreModel {
                tp_mean: 0.9,
                fp_mean: 0.5,
                sigma: 0.0,
            },
        };
        let sim = simulate_detector(&world, &noise, 1);
        assert_eq!(sim.detections.len(), world.objects.len());
        for (det, obj) in sim.detections.iter().zip(&world.objects) {
            assert_eq!(det.box_, obj.box_);
            assert_eq!(det.category, obj.category);
            assert_eq!(det.score, 0.9);
        }
    }

    #[test]
    fn event_log_conserves_objects() {
        let world = world_for_tests(50);
        let noise = NoiseConfig::default().expand(3, 4);
        let sim = simulate_detector(&world, &noise, 9);
        let missed = sim
            .events
            .iter()
            .filter(|e| matches!(e, SimEvent::Missed { .. }))
            .count();
        let emitted = sim
            .events
            .iter()
            .filter(|e| matches!(e, SimEvent::Emitted { .. }))
            .count();
        assert_eq!(missed + emitted, world.objects.len());
        assert_eq!(emitted, sim.detections.len());
        assert_eq!(sim.det_embeddings.len(), sim.detections.len());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let world = world_for_tests(30);
        let noise = NoiseConfig::default().expand(3, 4);
        let a = simulate_detector(&world, &noise, 33);
        let b = simulate_detector(&world, &noise, 33);
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.events, b.events);
        assert_eq!(a.det_embeddings, b.det_embeddings);
    }

    #[test]
    fn confusion_rate_matches_configuration_statistically() {
        // ~10k objects; the empirical wrong-label fraction must sit within
        // three standard errors of the configured off-diagonal mass
        let cfg = WorldConfig {
            n_images: 2200,
            objects_per_image: (4, 5),
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg, 23).unwrap();
        let mut noise = NoiseConfig::default().expand(3, 4);
        noise.miss_rate = 0.0;
        let sim = simulate_detector(&world, &noise, 29);

        let novel = world.novel_categories();
        let novel_total = world
            .objects
            .iter()
            .filter(|o| novel.contains(&o.category))
            .count();
        let novel_wrong = sim
            .events
            .iter()
            .filter(|e| match e {
                SimEvent::Emitted { ann_id, correct, .. } => {
                    let obj = world.object_by_ann(*ann_id).unwrap();
                    novel.contains(&obj.category) && !correct
                }
                _ => false,
            })
            .count();
        let p = 0.3;
        let se = (p * (1.0 - p) / novel_total as f64).sqrt();
        let observed = novel_wrong as f64 / novel_total as f64;
        assert!(
            (observed - p).abs() <= 3.0 * se,
            "observed {observed} vs expected {p} +- {}",
            3.0 * se
        );
    }

    #[test]
    fn detection_embeddings_are_true_object_embeddings() {
        let world = world_for_tests(10);
        let noise = NoiseConfig::default().expand(3, 4);
        let sim = simulate_detector(&world, &noise, 3);
        for det in &sim.detections {
            let ann_id = sim.source_of(det.det_id).unwrap();
            let expected = world
                .true_embeddings
                .get(&crate::datamodel::annotation_embedding_key(ann_id))
                .unwrap();
            assert_eq!(sim.det_embeddings.get(&det.embedding_key()).unwrap(), expected);
        }
    }

    #[test]
    fn training_pairs_fill_every_stage() {
        let world = world_for_tests(40);
        let pairs = corrector_training_pairs(&world, 6, 41);
        let [n1, n2, n3] = pairs.counts();
        assert!(n1 >= n2 && n2 >= n3);
        assert!(n3 > 0, "stage 3 must receive close proposals");
    }
}
