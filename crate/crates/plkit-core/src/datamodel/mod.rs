//! Canonical dataset, detection, and embedding types plus file ingestion.
//!
//! Annotation files are COCO-style JSON with two boolean extension fields,
//! `is_pseudo` and `is_ignore`. Detection files are COCO results-format
//! JSON. Embeddings travel as a raw little-endian f32 matrix next to a JSON
//! manifest. All loaders validate referential integrity up front; values
//! are immutable afterwards.

mod coco;
mod embeddings;
mod split;

pub use coco::{load_dataset, load_detections, save_annotations, save_detections};
pub use embeddings::{load_embeddings, save_embeddings, EmbeddingMatrix};
pub use split::{make_few_shot_split, make_few_shot_split_from_ids};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip, BBox, ImageExtent};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("score {score} outside [0,1] for detection on image {image_id}")]
    Range { image_id: u64, score: f64 },
    #[error("embedding shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate embedding key: {0}")]
    Key(String),
    #[error("category {category} has {available} annotations, fewer than K={requested}")]
    InsufficientShots {
        category: u32,
        available: usize,
        requested: usize,
    },
    #[error("unknown category id {0}")]
    UnknownCategory(u32),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Identifier of an image within a dataset.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ImageId(pub u64);

/// Identifier of a category; ids start at 1 like COCO's.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

/// Where an annotation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Groundtruth,
    Fewshot,
    Pseudo,
    Ignore,
}

/// A labelled box: ground truth, few-shot sample, pseudo-annotation, or
/// ignore region depending on its flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: ImageId,
    #[serde(rename = "bbox")]
    pub box_: BBox,
    pub category: CategoryId,
    pub is_pseudo: bool,
    pub is_ignore: bool,
    pub source: AnnotationSource,
}

impl Annotation {
    pub fn groundtruth(id: u64, image_id: ImageId, box_: BBox, category: CategoryId) -> Self {
        Self {
            id,
            image_id,
            box_,
            category,
            is_pseudo: false,
            is_ignore: false,
            source: AnnotationSource::Groundtruth,
        }
    }
}

/// One detector output: predicted box, category, and confidence score.
///
/// `det_id` is an extension over the plain results format; it keys the
/// detection into embedding containers (`det:<id>`). Loaders assign file
/// order when the field is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub det_id: u64,
    pub image_id: ImageId,
    #[serde(rename = "bbox")]
    pub box_: BBox,
    pub category: CategoryId,
    pub score: f64,
}

impl Detection {
    /// Embedding-container key for this detection.
    pub fn embedding_key(&self) -> String {
        format!("det:{}", self.det_id)
    }
}

/// Embedding-container key for an annotation id.
pub fn annotation_embedding_key(id: u64) -> String {
    format!("ann:{id}")
}

/// A validated collection of images, categories, and annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: BTreeMap<ImageId, ImageExtent>,
    pub categories: BTreeMap<CategoryId, String>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    pub fn new(
        images: BTreeMap<ImageId, ImageExtent>,
        categories: BTreeMap<CategoryId, String>,
        annotations: Vec<Annotation>,
    ) -> Result<Self, DataError> {
        let d = Self {
            images,
            categories,
            annotations,
        };
        d.validate()?;
        Ok(d)
    }

    /// Checks referential integrity, id uniqueness, and box validity.
    pub fn validate(&self) -> Result<(), DataError> {
        for (id, extent) in &self.images {
            if extent.width == 0 || extent.height == 0 {
                return Err(DataError::Integrity(format!(
                    "image {} has empty extent {}x{}",
                    id.0, extent.width, extent.height
                )));
            }
        }
        for id in self.categories.keys() {
            if id.0 == 0 {
                return Err(DataError::Integrity(
                    "category id 0 is reserved; ids start at 1".into(),
                ));
            }
        }
        let mut seen = BTreeSet::new();
        for ann in &self.annotations {
            if !seen.insert(ann.id) {
                return Err(DataError::Integrity(format!(
                    "duplicate annotation id {}",
                    ann.id
                )));
            }
            let extent = self.images.get(&ann.image_id).ok_or_else(|| {
                DataError::Integrity(format!(
                    "annotation {} references missing image {}",
                    ann.id, ann.image_id.0
                ))
            })?;
            if !self.categories.contains_key(&ann.category) {
                return Err(DataError::Integrity(format!(
                    "annotation {} references missing category {}",
                    ann.id, ann.category.0
                )));
            }
            if !ann.box_.is_valid() {
                return Err(DataError::Integrity(format!(
                    "annotation {} has invalid box {:?}",
                    ann.id, ann.box_
                )));
            }
            let clipped = clip(&ann.box_, extent);
            if clipped != ann.box_ {
                return Err(DataError::Integrity(format!(
                    "annotation {} box {:?} exceeds image {} extent",
                    ann.id, ann.box_, ann.image_id.0
                )));
            }
        }
        Ok(())
    }

    pub fn extent_of(&self, image: ImageId) -> Option<&ImageExtent> {
        self.images.get(&image)
    }

    pub fn max_annotation_id(&self) -> u64 {
        self.annotations.iter().map(|a| a.id).max().unwrap_or(0)
    }
}

/// Few-shot problem definition: which categories are novel and the K
/// sampled annotations for each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub base_categories: BTreeSet<CategoryId>,
    pub novel_categories: BTreeSet<CategoryId>,
    pub shots_k: usize,
    pub novel_annotations: Vec<Annotation>,
}

impl FewShotSplit {
    pub fn is_novel(&self, category: CategoryId) -> bool {
        self.novel_categories.contains(&category)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DataError> {
        let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), DataError> {
        let bytes = serde_json::to_vec_pretty(self).expect("split serializes");
        std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
    }
}
