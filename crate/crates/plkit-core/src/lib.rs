//! Few-shot pseudo-labelling toolkit.
//!
//! A batch pipeline that turns raw detections into a retraining annotation
//! set: high-confidence candidates are sourced per novel class, verified by
//! a cosine-similarity kNN over precomputed embeddings, box-corrected by a
//! cascade of IoU-gated linear regressors, and merged with ground truth and
//! ignore regions. COCO-style metrics evaluate every stage, and a seeded
//! synthetic world exercises the whole loop without any neural network.
//!
//! Modules follow the pipeline order:
//!
//! - [`geometry`]: boxes, IoU, delta coding, clipping
//! - [`datamodel`]: datasets, detections, embeddings, few-shot splits
//! - [`sourcing`]: candidate selection by confidence threshold
//! - [`verifier`]: kNN label verification
//! - [`corrector`]: cascade box regression
//! - [`retrain`]: ignore regions, assignment rules, set assembly
//! - [`evaluator`]: AP/AR/PR metrics
//! - [`synthworld`]: seeded world, detector simulator, ablation runner

pub mod corrector;
pub mod datamodel;
pub mod evaluator;
pub mod geometry;
pub mod retrain;
pub mod sourcing;
pub mod synthworld;
pub mod verifier;

pub use datamodel::{Annotation, CategoryId, Dataset, Detection, FewShotSplit, ImageId};
pub use geometry::{BBox, BoxDelta, ImageExtent};
