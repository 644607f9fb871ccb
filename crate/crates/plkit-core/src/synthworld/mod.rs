//! Seeded synthetic world: class clusters on the unit sphere, images with
//! uniformly placed objects, and a noisy detector simulator. The hidden
//! ground truth makes every pipeline stage quantitatively checkable without
//! any neural network.
//!
//! Determinism contract: every generator takes an explicit seed and uses
//! its own ChaCha stream, so `(config, noise, seed)` fixes every output
//! bit. Embeddings cluster on the unit sphere because verification uses
//! cosine similarity; the minimum pairwise angle between class centers
//! controls kNN difficulty directly.

mod ablation;
mod retrained;
mod simulate;
mod truth_io;

pub use ablation::{
    run_ablation, AblationError, AblationOutcome, AblationRow, PipelineParams,
};
pub use retrained::{simulate_retrained, RetrainModel};
pub use simulate::{
    corrector_training_pairs, simulate_detector, SimEvent, SimulatorOutput,
};
pub use truth_io::{read_truth_log, write_truth_log, TruthLog};

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    annotation_embedding_key, Annotation, CategoryId, Dataset, EmbeddingMatrix, ImageId,
};
use crate::geometry::{encode_deltas, BBox, GeometryError, ImageExtent};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("could not place {failed_at} class centers at >= {min_angle_deg} degrees apart after {attempts} attempts")]
    CenterPlacementFailure {
        failed_at: usize,
        min_angle_deg: f64,
        attempts: usize,
    },
    #[error("bad world config: {0}")]
    BadConfig(String),
    #[error("bad noise config: {0}")]
    BadNoise(String),
}

/// Object size range as a fraction of the image extent.
const OBJECT_SIZE_FRAC: (f64, f64) = (0.08, 0.30);
const CENTER_ATTEMPTS_PER_CLASS: usize = 100_000;

/// World shape: class counts, embedding geometry, and image layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_base: usize,
    pub n_novel: usize,
    pub emb_dim: usize,
    /// Minimum pairwise angle between class centers, degrees.
    pub cluster_angle_min_deg: f64,
    /// Within-class angular noise, radians.
    pub intra_sigma: f64,
    pub n_images: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    pub extent: ImageExtent,
    pub k_shots: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_base: 3,
            n_novel: 4,
            emb_dim: 16,
            cluster_angle_min_deg: 60.0,
            intra_sigma: 0.1,
            n_images: 120,
            objects_per_image: (3, 6),
            extent: ImageExtent::new(640, 480),
            k_shots: 5,
        }
    }
}

impl WorldConfig {
    pub fn n_classes(&self) -> usize {
        self.n_base + self.n_novel
    }

    fn validate(&self) -> Result<(), WorldError> {
        if self.n_base == 0 && self.n_novel == 0 {
            return Err(WorldError::BadConfig("no classes".into()));
        }
        if self.emb_dim < 2 {
            return Err(WorldError::BadConfig("emb_dim must be >= 2".into()));
        }
        if !(0.0 < self.cluster_angle_min_deg && self.cluster_angle_min_deg <= 90.0) {
            return Err(WorldError::BadConfig(
                "cluster_angle_min_deg must be in (0, 90]".into(),
            ));
        }
        if self.n_images == 0 {
            return Err(WorldError::BadConfig("n_images must be positive".into()));
        }
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || lo > hi {
            return Err(WorldError::BadConfig(
                "objects_per_image range must be 1 <= lo <= hi".into(),
            ));
        }
        if self.extent.width == 0 || self.extent.height == 0 {
            return Err(WorldError::BadConfig("empty extent".into()));
        }
        Ok(())
    }
}

/// Confidence-score generator: means for correct and confused labels plus
/// a shared standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub tp_mean: f64,
    pub fp_mean: f64,
    pub sigma: f64,
}

/// Detector failure model: per-object miss probability, a row-stochastic
/// label confusion matrix (row/column index = class id - 1), multiplicative
/// box jitter, and the score model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    pub miss_rate: f64,
    pub confusion: Vec<Vec<f64>>,
    pub box_jitter_sigma: f64,
    pub score_model: ScoreModel,
}

impl DetectorNoise {
    pub fn validate(&self, n_classes: usize) -> Result<(), WorldError> {
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(WorldError::BadNoise("miss_rate outside [0,1]".into()));
        }
        if self.confusion.len() != n_classes {
            return Err(WorldError::BadNoise(format!(
                "confusion matrix has {} rows for {} classes",
                self.confusion.len(),
                n_classes
            )));
        }
        for (i, row) in self.confusion.iter().enumerate() {
            if row.len() != n_classes {
                return Err(WorldError::BadNoise(format!("confusion row {i} has wrong length")));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(WorldError::BadNoise(format!("confusion row {i} has bad probability")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(WorldError::BadNoise(format!("confusion row {i} sums to {sum}")));
            }
        }
        if self.box_jitter_sigma < 0.0 {
            return Err(WorldError::BadNoise("negative box_jitter_sigma".into()));
        }
        Ok(())
    }
}

/// Compact file form of the noise model: per-group self probabilities
/// expand into a full confusion matrix with the off-diagonal mass spread
/// uniformly over the other classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub miss_rate: f64,
    pub confusion_self_base: f64,
    pub confusion_self_novel: f64,
    pub box_jitter_sigma: f64,
    pub score_model: ScoreModel,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            miss_rate: 0.3,
            confusion_self_base: 0.95,
            confusion_self_novel: 0.7,
            box_jitter_sigma: 0.15,
            score_model: ScoreModel {
                tp_mean: 0.92,
                fp_mean: 0.82,
                sigma: 0.08,
            },
        }
    }
}

impl NoiseConfig {
    pub fn expand(&self, n_base: usize, n_novel: usize) -> DetectorNoise {
        let n = n_base + n_novel;
        let confusion = (0..n)
            .map(|row| {
                let self_prob = if row < n_base {
                    self.confusion_self_base
                } else {
                    self.confusion_self_novel
                };
                let off = if n > 1 { (1.0 - self_prob) / (n - 1) as f64 } else { 0.0 };
                (0..n)
                    .map(|col| if col == row { if n == 1 { 1.0 } else { self_prob } } else { off })
                    .collect()
            })
            .collect();
        DetectorNoise {
            miss_rate: self.miss_rate,
            confusion,
            box_jitter_sigma: self.box_jitter_sigma,
            score_model: self.score_model,
        }
    }
}

/// One generated object: its annotation id doubles as the object id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenObject {
    pub ann_id: u64,
    pub image_id: ImageId,
    pub category: CategoryId,
    #[serde(rename = "bbox")]
    pub box_: BBox,
}

/// The generated world: visible dataset, per-object embeddings, class
/// centers, and the hidden object records.
#[derive(Debug, Clone)]
pub struct WorldTruth {
    pub config: WorldConfig,
    pub dataset: Dataset,
    pub true_embeddings: EmbeddingMatrix,
    /// Unit class centers, index = class id - 1.
    pub class_centers: Vec<Vec<f32>>,
    pub objects: Vec<HiddenObject>,
}

impl WorldTruth {
    pub fn novel_categories(&self) -> BTreeSet<CategoryId> {
        ((self.config.n_base + 1)..=self.config.n_classes())
            .map(|id| CategoryId(id as u32))
            .collect()
    }

    pub fn object_by_ann(&self, ann_id: u64) -> Option<&HiddenObject> {
        self.objects
            .binary_search_by_key(&ann_id, |o| o.ann_id)
            .ok()
            .map(|i| &self.objects[i])
    }

    pub fn center_of(&self, category: CategoryId) -> &[f32] {
        &self.class_centers[(category.0 - 1) as usize]
    }
}

fn unit_gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn place_class_centers(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    min_angle_deg: f64,
) -> Result<Vec<Vec<f64>>, WorldError> {
    let max_dot = min_angle_deg.to_radians().cos();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n);
    while centers.len() < n {
        let mut placed = false;
        for _ in 0..CENTER_ATTEMPTS_PER_CLASS {
            let candidate = unit_gaussian_vector(rng, dim);
            let ok = centers.iter().all(|c| {
                let dot: f64 = c.iter().zip(&candidate).map(|(a, b)| a * b).sum();
                dot <= max_dot + 1e-12
            });
            if ok {
                centers.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(WorldError::CenterPlacementFailure {
                failed_at: centers.len(),
                min_angle_deg,
                attempts: CENTER_ATTEMPTS_PER_CLASS,
            });
        }
    }
    Ok(centers)
}

/// Rotates `center` by an angle drawn from N(0, sigma) along a random
/// tangent direction, staying on the unit sphere.
fn perturb_on_sphere(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let dim = center.len();
    let tangent = loop {
        let g = unit_gaussian_vector(rng, dim);
        let dot: f64 = g.iter().zip(center).map(|(a, b)| a * b).sum();
        let t: Vec<f64> = g.iter().zip(center).map(|(gi, ci)| gi - dot * ci).collect();
        let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            break t.into_iter().map(|x| x / norm).collect::<Vec<f64>>();
        }
    };
    let theta: f64 = if sigma > 0.0 {
        let g: f64 = rng.sample(StandardNormal);
        g * sigma
    } else {
        0.0
    };
    center
        .iter()
        .zip(&tangent)
        .map(|(c, t)| c * theta.cos() + t * theta.sin())
        .collect()
}

/// Generates the world: centers, images, objects, and embeddings.
/// Deterministic in `(config, seed)`.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<WorldTruth, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let centers = place_class_centers(
        &mut rng,
        config.n_classes(),
        config.emb_dim,
        config.cluster_angle_min_deg,
    )?;

    let mut categories = BTreeMap::new();
    for i in 0..config.n_base {
        categories.insert(CategoryId((i + 1) as u32), format!("base_{}", i + 1));
    }
    for i in 0..config.n_novel {
        categories.insert(
            CategoryId((config.n_base + i + 1) as u32),
            format!("novel_{}", i + 1),
        );
    }

    let width = config.extent.width as f64;
    let height = config.extent.height as f64;
    let mut images = BTreeMap::new();
    let mut annotations = Vec::new();
    let mut objects = Vec::new();
    let mut embedding_rows = Vec::new();
    let mut ann_id = 1u64;

    for image_idx in 0..config.n_images {
        let image_id = ImageId((image_idx + 1) as u64);
        images.insert(image_id, config.extent);
        let (lo, hi) = config.objects_per_image;
        let n_objects = rng.random_range(lo..=hi);
        for _ in 0..n_objects {
            let class = rng.random_range(1..=config.n_classes() as u32);
            let w = rng.random_range(OBJECT_SIZE_FRAC.0..OBJECT_SIZE_FRAC.1) * width;
            let h = rng.random_range(OBJECT_SIZE_FRAC.0..OBJECT_SIZE_FRAC.1) * height;
            let x = rng.random_range(0.0..(width - w));
            let y = rng.random_range(0.0..(height - h));
            let box_ = BBox::new(x, y, w, h);

            let category = CategoryId(class);
            annotations.push(Annotation::groundtruth(ann_id, image_id, box_, category));
            objects.push(HiddenObject {
                ann_id,
                image_id,
                category,
                box_,
            });

            let emb = perturb_on_sphere(&mut rng, &centers[(class - 1) as usize], config.intra_sigma);
            embedding_rows.push((
                annotation_embedding_key(ann_id),
                emb.into_iter().map(|v| v as f32).collect::<Vec<f32>>(),
            ));
            ann_id += 1;
        }
    }

    let dataset = Dataset::new(images, categories, annotations)
        .expect("generated dataset is internally consistent");
    let true_embeddings = EmbeddingMatrix::new(config.emb_dim, embedding_rows)
        .expect("generated embeddings are well-formed");

    Ok(WorldTruth {
        config: config.clone(),
        dataset,
        true_embeddings,
        class_centers: centers
            .into_iter()
            .map(|c| c.into_iter().map(|v| v as f32).collect())
            .collect(),
        objects,
    })
}

/// Oracle correction feature: the delta from `box_` to the object's true
/// box, concatenated with the object's class-center coordinates. The
/// stage-target delta is exactly linear in this feature, so the cascade is
/// learnable to machine precision.
pub fn oracle_feature(
    box_: &BBox,
    hidden: &HiddenObject,
    world: &WorldTruth,
) -> Result<Vec<f64>, GeometryError> {
    let delta = encode_deltas(box_, &hidden.box_)?;
    let mut feature = Vec::with_capacity(4 + world.config.emb_dim);
    feature.extend_from_slice(&delta.to_array());
    feature.extend(world.center_of(hidden.category).iter().map(|&v| v as f64));
    Ok(feature)
}

/// Splitmix-style seed mixer for deriving independent sub-stream seeds.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E3779B97F4A7C15);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
