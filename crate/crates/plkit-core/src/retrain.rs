//! Retraining-set assembly: pseudo-annotations, ignore regions, and the
//! ignore-aware proposal assignment rules.
//!
//! Every novel-class detection that did not survive verification becomes an
//! ignore region, including detections that never reached the candidate
//! set. During assignment an ignore overlap (IoU > 0.5) screens a proposal
//! out for the RoI head but counts as class-agnostic foreground for the
//! RPN.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Annotation, AnnotationSource, CategoryId, DataError, Dataset, Detection, FewShotSplit,
};
use crate::geometry::{clip, iou, BBox};

/// IoU above which an ignore region captures a proposal.
pub const IGNORE_IOU: f64 = 0.5;

/// How a proposal is used for second-stage training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RoiOutcome {
    /// Foreground. `None` is the RPN's class-agnostic objectness label.
    Positive(Option<CategoryId>),
    Negative,
    /// Neither foreground nor background; excluded from sampling.
    Ignored,
}

/// Assignment outcome plus the IoU that decided it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiAssignment {
    pub outcome: RoiOutcome,
    pub matched_iou: f64,
}

/// Converts a detection into a pseudo-annotation with the given box
/// (corrected or raw). Ids are assigned later by [`assemble_retrain_set`].
pub fn detection_to_pseudo(det: &Detection, box_: BBox) -> Annotation {
    Annotation {
        id: 0,
        image_id: det.image_id,
        box_,
        category: det.category,
        is_pseudo: true,
        is_ignore: false,
        source: AnnotationSource::Pseudo,
    }
}

/// Turns every novel-class detection that is not in the accepted set into
/// an ignore region. Sub-threshold detections were never candidates, so
/// they land here too. The detector's category is kept for bookkeeping.
pub fn emit_ignore_regions(
    all_detections: &[Detection],
    accepted: &[Detection],
    novel_categories: &BTreeSet<CategoryId>,
) -> Vec<Annotation> {
    let accepted_ids: BTreeSet<u64> = accepted.iter().map(|d| d.det_id).collect();
    all_detections
        .iter()
        .filter(|d| novel_categories.contains(&d.category) && !accepted_ids.contains(&d.det_id))
        .map(|d| Annotation {
            id: 0,
            image_id: d.image_id,
            box_: d.box_,
            category: d.category,
            is_pseudo: false,
            is_ignore: true,
            source: AnnotationSource::Ignore,
        })
        .collect()
}

fn best_overlap<'a>(
    proposal: &BBox,
    annotations: impl Iterator<Item = &'a Annotation>,
) -> Option<(f64, &'a Annotation)> {
    let mut best: Option<(f64, &'a Annotation)> = None;
    for ann in annotations {
        let overlap = iou(proposal, &ann.box_);
        // strict > keeps the earlier annotation on ties
        if best.map_or(true, |(b, _)| overlap > b) {
            best = Some((overlap, ann));
        }
    }
    best
}

/// Second-stage assignment: ignore screening first, then ground-truth
/// matching at `fg_iou`, else background.
pub fn assign_roi(
    proposal: &BBox,
    ground_truth: &[Annotation],
    ignores: &[Annotation],
    fg_iou: f64,
    bg_iou: f64,
) -> RoiAssignment {
    debug_assert!(fg_iou >= bg_iou);
    if let Some((overlap, _)) = best_overlap(proposal, ignores.iter()) {
        if overlap > IGNORE_IOU {
            return RoiAssignment {
                outcome: RoiOutcome::Ignored,
                matched_iou: overlap,
            };
        }
    }
    match best_overlap(proposal, ground_truth.iter()) {
        Some((overlap, ann)) if overlap >= fg_iou => RoiAssignment {
            outcome: RoiOutcome::Positive(Some(ann.category)),
            matched_iou: overlap,
        },
        Some((overlap, _)) => RoiAssignment {
            outcome: RoiOutcome::Negative,
            matched_iou: overlap,
        },
        None => RoiAssignment {
            outcome: RoiOutcome::Negative,
            matched_iou: 0.0,
        },
    }
}

/// RPN assignment: like [`assign_roi`] except ignore regions count as
/// foreground. The best-overlapping source wins; a ground-truth match keeps
/// its category while an ignore match yields the objectness label.
pub fn assign_rpn(
    proposal: &BBox,
    ground_truth: &[Annotation],
    ignores: &[Annotation],
    fg_iou: f64,
    bg_iou: f64,
) -> RoiAssignment {
    debug_assert!(fg_iou >= bg_iou);
    let best_gt = best_overlap(proposal, ground_truth.iter());
    let best_ignore = best_overlap(proposal, ignores.iter());

    let gt_hit = best_gt.filter(|&(overlap, _)| overlap >= fg_iou);
    let ignore_hit = best_ignore.filter(|&(overlap, _)| overlap > IGNORE_IOU);

    match (gt_hit, ignore_hit) {
        (Some((g, ann)), Some((i, _))) => {
            // ties prefer the labelled ground truth
            if g >= i {
                RoiAssignment {
                    outcome: RoiOutcome::Positive(Some(ann.category)),
                    matched_iou: g,
                }
            } else {
                RoiAssignment {
                    outcome: RoiOutcome::Positive(None),
                    matched_iou: i,
                }
            }
        }
        (Some((g, ann)), None) => RoiAssignment {
            outcome: RoiOutcome::Positive(Some(ann.category)),
            matched_iou: g,
        },
        (None, Some((i, _))) => RoiAssignment {
            outcome: RoiOutcome::Positive(None),
            matched_iou: i,
        },
        (None, None) => RoiAssignment {
            outcome: RoiOutcome::Negative,
            matched_iou: best_gt.map(|(o, _)| o).unwrap_or(0.0),
        },
    }
}

/// Merges base ground truth, the K novel shots, pseudo-annotations, and
/// ignore regions into one retraining dataset. Base and shot annotations
/// keep their ids; pseudo and ignore annotations are renumbered after the
/// maximum existing id. Incoming pseudo/ignore boxes are clipped to their
/// image extent.
pub fn assemble_retrain_set(
    base_gt: &Dataset,
    split: &FewShotSplit,
    pseudo: &[Annotation],
    ignores: &[Annotation],
) -> Result<Dataset, DataError> {
    let mut annotations: Vec<Annotation> = base_gt
        .annotations
        .iter()
        .filter(|a| split.base_categories.contains(&a.category))
        .cloned()
        .collect();
    annotations.extend(split.novel_annotations.iter().cloned());

    let mut next_id = base_gt.max_annotation_id() + 1;
    for (ann, expect_ignore) in pseudo
        .iter()
        .map(|a| (a, false))
        .chain(ignores.iter().map(|a| (a, true)))
    {
        if ann.is_ignore != expect_ignore {
            return Err(DataError::Integrity(format!(
                "annotation for image {} in the wrong list: is_ignore={}",
                ann.image_id.0, ann.is_ignore
            )));
        }
        let extent = base_gt.extent_of(ann.image_id).ok_or_else(|| {
            DataError::Integrity(format!(
                "annotation references image {} absent from the base dataset",
                ann.image_id.0
            ))
        })?;
        let mut ann = ann.clone();
        ann.id = next_id;
        ann.box_ = clip(&ann.box_, extent);
        next_id += 1;
        annotations.push(ann);
    }

    Dataset::new(
        base_gt.images.clone(),
        base_gt.categories.clone(),
        annotations,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ImageId;
    use crate::geometry::ImageExtent;
    use std::collections::BTreeMap;

    fn det(det_id: u64, cat: u32, score: f64) -> Detection {
        Detection {
            det_id,
            image_id: ImageId(1),
            box_: BBox::new(10.0, 10.0, 20.0, 20.0),
            category: CategoryId(cat),
            score,
        }
    }

    fn novel() -> BTreeSet<CategoryId> {
        [CategoryId(2)].into_iter().collect()
    }

    #[test]
    fn all_verified_means_no_ignores() {
        let dets = vec![det(0, 2, 0.9), det(1, 2, 0.85)];
        let ignores = emit_ignore_regions(&dets, &dets, &novel());
        assert!(ignores.is_empty());
    }

    #[test]
    fn sub_threshold_detection_becomes_ignore_region() {
        let dets = vec![det(0, 2, 0.5)];
        let ignores = emit_ignore_regions(&dets, &[], &novel());
        assert_eq!(ignores.len(), 1);
        assert!(ignores[0].is_ignore);
        assert_eq!(ignores[0].category, CategoryId(2));
        assert_eq!(ignores[0].source, AnnotationSource::Ignore);
    }

    #[test]
    fn base_class_detections_never_become_ignores() {
        let dets = vec![det(0, 1, 0.4)];
        assert!(emit_ignore_regions(&dets, &[], &novel()).is_empty());
    }

    #[test]
    fn ignore_set_is_the_complement_of_the_verified_set() {
        let dets: Vec<Detection> = (0..20)
            .map(|i| det(i, 2, 0.3 + 0.03 * i as f64))
            .collect();
        let accepted: Vec<Detection> = dets.iter().filter(|d| d.score > 0.8).cloned().collect();
        let ignores = emit_ignore_regions(&dets, &accepted, &novel());

        let accepted_ids: BTreeSet<u64> = accepted.iter().map(|d| d.det_id).collect();
        let expected: BTreeSet<u64> = dets
            .iter()
            .map(|d| d.det_id)
            .filter(|id| !accepted_ids.contains(id))
            .collect();
        // emitted ignores carry no ids yet; compare by count and disjointness
        assert_eq!(ignores.len(), expected.len());
        assert_eq!(ignores.len() + accepted.len(), dets.len());
    }

    fn gt_at(id: u64, box_: BBox) -> Annotation {
        Annotation::groundtruth(id, ImageId(1), box_, CategoryId(3))
    }

    fn ignore_at(box_: BBox) -> Annotation {
        Annotation {
            id: 0,
            image_id: ImageId(1),
            box_,
            category: CategoryId(2),
            is_pseudo: false,
            is_ignore: true,
            source: AnnotationSource::Ignore,
        }
    }

    #[test]
    fn ignore_screening_wins_over_ground_truth() {
        let proposal = BBox::new(0.0, 0.0, 10.0, 10.0);
        let gts = vec![gt_at(1, BBox::new(0.5, 0.0, 10.0, 10.0))]; // IoU ~0.9
        let ignores = vec![ignore_at(BBox::new(2.5, 0.0, 10.0, 10.0))]; // IoU 0.6
        let roi = assign_roi(&proposal, &gts, &ignores, 0.5, 0.5);
        assert_eq!(roi.outcome, RoiOutcome::Ignored);

        // for the RPN both are foreground; ground truth has the better IoU
        let rpn = assign_rpn(&proposal, &gts, &ignores, 0.5, 0.5);
        assert!(matches!(rpn.outcome, RoiOutcome::Positive(Some(_))));
    }

    #[test]
    fn plain_foreground_and_background() {
        let proposal = BBox::new(0.0, 0.0, 10.0, 10.0);
        let gts = vec![gt_at(1, BBox::new(1.5, 0.0, 10.0, 10.0))]; // IoU ~0.74
        let roi = assign_roi(&proposal, &gts, &[], 0.5, 0.5);
        assert_eq!(roi.outcome, RoiOutcome::Positive(Some(CategoryId(3))));

        let far = BBox::new(500.0, 500.0, 5.0, 5.0);
        let roi = assign_roi(&far, &gts, &[], 0.5, 0.5);
        assert_eq!(roi.outcome, RoiOutcome::Negative);
        assert_eq!(roi.matched_iou, 0.0);
    }

    #[test]
    fn ignore_only_proposal_differs_between_roi_and_rpn() {
        let proposal = BBox::new(0.0, 0.0, 10.0, 10.0);
        let ignores = vec![ignore_at(BBox::new(1.0, 0.0, 10.0, 10.0))]; // IoU ~0.82
        let roi = assign_roi(&proposal, &[], &ignores, 0.5, 0.5);
        assert_eq!(roi.outcome, RoiOutcome::Ignored);
        let rpn = assign_rpn(&proposal, &[], &ignores, 0.5, 0.5);
        assert_eq!(rpn.outcome, RoiOutcome::Positive(None));
    }

    #[test]
    fn without_ignores_roi_and_rpn_agree_up_to_payload() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let gts: Vec<Annotation> = (0..5)
            .map(|i| {
                gt_at(
                    i + 1,
                    BBox::new(
                        rng.random_range(0.0..80.0),
                        rng.random_range(0.0..80.0),
                        rng.random_range(5.0..25.0),
                        rng.random_range(5.0..25.0),
                    ),
                )
            })
            .collect();
        for _ in 0..200 {
            let proposal = BBox::new(
                rng.random_range(0.0..80.0),
                rng.random_range(0.0..80.0),
                rng.random_range(5.0..25.0),
                rng.random_range(5.0..25.0),
            );
            let roi = assign_roi(&proposal, &gts, &[], 0.5, 0.5);
            let rpn = assign_rpn(&proposal, &gts, &[], 0.5, 0.5);
            match (roi.outcome, rpn.outcome) {
                (RoiOutcome::Positive(a), RoiOutcome::Positive(b)) => assert_eq!(a, b),
                (RoiOutcome::Negative, RoiOutcome::Negative) => {}
                other => panic!("outcomes diverged without ignores: {other:?}"),
            }
        }
    }

    fn tiny_dataset() -> (Dataset, FewShotSplit) {
        let mut images = BTreeMap::new();
        images.insert(ImageId(1), ImageExtent::new(100, 100));
        let mut categories = BTreeMap::new();
        categories.insert(CategoryId(1), "base".into());
        categories.insert(CategoryId(2), "novel".into());
        let annotations = vec![
            Annotation::groundtruth(1, ImageId(1), BBox::new(0.0, 0.0, 10.0, 10.0), CategoryId(1)),
            Annotation::groundtruth(2, ImageId(1), BBox::new(20.0, 0.0, 10.0, 10.0), CategoryId(1)),
            Annotation::groundtruth(3, ImageId(1), BBox::new(40.0, 0.0, 10.0, 10.0), CategoryId(2)),
        ];
        let d = Dataset::new(images, categories, annotations).unwrap();
        let mut shot = d.annotations[2].clone();
        shot.source = AnnotationSource::Fewshot;
        let split = FewShotSplit {
            base_categories: [CategoryId(1)].into_iter().collect(),
            novel_categories: [CategoryId(2)].into_iter().collect(),
            shots_k: 1,
            novel_annotations: vec![shot],
        };
        (d, split)
    }

    #[test]
    fn empty_pseudo_and_ignore_lists_give_base_plus_shots() {
        let (d, split) = tiny_dataset();
        let merged = assemble_retrain_set(&d, &split, &[], &[]).unwrap();
        assert_eq!(merged.annotations.len(), 3); // 2 base + 1 shot
    }

    #[test]
    fn merged_counts_add_up_and_ids_are_unique() {
        let (d, split) = tiny_dataset();
        let pseudo = vec![detection_to_pseudo(
            &det(0, 2, 0.9),
            BBox::new(60.0, 0.0, 10.0, 10.0),
        )];
        let ignores = emit_ignore_regions(&[det(1, 2, 0.4)], &[], &novel());
        let merged = assemble_retrain_set(&d, &split, &pseudo, &ignores).unwrap();
        assert_eq!(merged.annotations.len(), 2 + 1 + 1 + 1);
        let ids: BTreeSet<u64> = merged.annotations.iter().map(|a| a.id).collect();
        assert_eq!(ids.len(), merged.annotations.len());
        merged.validate().unwrap();
    }

    #[test]
    fn assembled_dataset_roundtrips_through_files() {
        let (d, split) = tiny_dataset();
        let pseudo = vec![detection_to_pseudo(
            &det(0, 2, 0.9),
            BBox::new(60.0, 0.0, 10.0, 10.0),
        )];
        let merged = assemble_retrain_set(&d, &split, &pseudo, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("retrain.json");
        crate::datamodel::save_annotations(&merged, &path).unwrap();
        assert_eq!(crate::datamodel::load_dataset(&path).unwrap(), merged);
    }
}
