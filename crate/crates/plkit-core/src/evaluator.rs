//! COCO-style detection metrics: greedy score-ordered matching, 101-point
//! interpolated AP over IoU thresholds 0.50:0.95, average recall, and
//! PR-curve export.
//!
//! Ignore-flagged annotations behave like crowd regions: they never count
//! toward total ground truth, and a detection whose only overlap at the
//! threshold is an ignore region is excluded from the PR accumulation
//! entirely (neither TP nor FP).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Annotation, CategoryId, Detection, FewShotSplit, ImageId};
use crate::geometry::iou;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {0} has no ground truth; PR curve is undefined")]
    NoGroundTruth(u32),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The ten COCO IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// What happened to one detection during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetStatus {
    TruePositive,
    FalsePositive,
    /// Best remaining overlap at the threshold was an ignore region; the
    /// detection is dropped from the PR accumulation.
    IgnoreMatched,
}

/// Per-detection matching outcome, in descending-score processing order.
#[derive(Debug, Clone)]
pub struct DetMatch {
    /// Index into the input detection slice.
    pub det_index: usize,
    pub score: f64,
    pub matched_gt: Option<u64>,
    pub status: DetStatus,
}

/// Greedy matching result for one (image, class) slice.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub iou_threshold: f64,
    pub detections: Vec<DetMatch>,
    /// (annotation id, matched) for each non-ignore ground truth.
    pub gt_matched: Vec<(u64, bool)>,
}

/// Matches detections of one (image, class) slice against its ground
/// truth. Detections are processed in descending score order (ties keep
/// input order); each claims the unmatched non-ignore ground truth of
/// highest IoU >= threshold, earliest annotation winning ties. Unclaimed
/// detections overlapping an ignore-flagged annotation at the threshold are
/// excluded rather than counted as false positives.
pub fn match_slice(detections: &[Detection], ground_truth: &[Annotation], iou_t: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .expect("finite scores")
            .then(a.cmp(&b))
    });

    let real_gts: Vec<&Annotation> = ground_truth.iter().filter(|g| !g.is_ignore).collect();
    let ignore_gts: Vec<&Annotation> = ground_truth.iter().filter(|g| g.is_ignore).collect();
    let mut taken = vec![false; real_gts.len()];

    let mut matches = Vec::with_capacity(order.len());
    for det_index in order {
        let det = &detections[det_index];
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in real_gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let overlap = iou(&det.box_, &gt.box_);
            if overlap >= iou_t && best.map_or(true, |(b, _)| overlap > b) {
                best = Some((overlap, g));
            }
        }
        let entry = if let Some((_, g)) = best {
            taken[g] = true;
            DetMatch {
                det_index,
                score: det.score,
                matched_gt: Some(real_gts[g].id),
                status: DetStatus::TruePositive,
            }
        } else if ignore_gts
            .iter()
            .any(|ig| iou(&det.box_, &ig.box_) >= iou_t)
        {
            DetMatch {
                det_index,
                score: det.score,
                matched_gt: None,
                status: DetStatus::IgnoreMatched,
            }
        } else {
            DetMatch {
                det_index,
                score: det.score,
                matched_gt: None,
                status: DetStatus::FalsePositive,
            }
        };
        matches.push(entry);
    }

    MatchResult {
        iou_threshold: iou_t,
        detections: matches,
        gt_matched: real_gts
            .iter()
            .enumerate()
            .map(|(g, gt)| (gt.id, taken[g]))
            .collect(),
    }
}

fn group_by_class_image<'a, T, F>(items: &'a [T], key: F) -> BTreeMap<(CategoryId, ImageId), Vec<&'a T>>
where
    F: Fn(&T) -> (CategoryId, ImageId),
{
    let mut map: BTreeMap<(CategoryId, ImageId), Vec<&T>> = BTreeMap::new();
    for item in items {
        map.entry(key(item)).or_default().push(item);
    }
    map
}

/// Cumulative (recall, precision) points for one class at one threshold,
/// over all images, in global descending-score order. Returns the point
/// list and the number of ground truths.
fn pr_points(
    detections: &[Detection],
    ground_truth: &[Annotation],
    iou_t: f64,
    class: CategoryId,
    max_dets_per_image: Option<usize>,
) -> (Vec<(f64, f64)>, usize) {
    let det_groups = group_by_class_image(detections, |d: &Detection| (d.category, d.image_id));
    let gt_groups = group_by_class_image(ground_truth, |g: &Annotation| (g.category, g.image_id));

    let n_gt: usize = ground_truth
        .iter()
        .filter(|g| g.category == class && !g.is_ignore)
        .count();

    // gather (score, is_tp) across images of this class; image order and
    // per-image processing order make ties deterministic
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let images: std::collections::BTreeSet<ImageId> = det_groups
        .keys()
        .chain(gt_groups.keys())
        .filter(|(c, _)| *c == class)
        .map(|&(_, img)| img)
        .collect();
    for image in images {
        let mut dets: Vec<Detection> = det_groups
            .get(&(class, image))
            .map(|v| v.iter().map(|&d| d.clone()).collect())
            .unwrap_or_default();
        if let Some(cap) = max_dets_per_image {
            let mut order: Vec<usize> = (0..dets.len()).collect();
            order.sort_by(|&a, &b| {
                dets[b]
                    .score
                    .partial_cmp(&dets[a].score)
                    .expect("finite scores")
                    .then(a.cmp(&b))
            });
            order.truncate(cap);
            order.sort_unstable();
            dets = order.into_iter().map(|i| dets[i].clone()).collect();
        }
        let gts: Vec<Annotation> = gt_groups
            .get(&(class, image))
            .map(|v| v.iter().map(|&g| g.clone()).collect())
            .unwrap_or_default();
        let result = match_slice(&dets, &gts, iou_t);
        for m in result.detections {
            match m.status {
                DetStatus::TruePositive => scored.push((m.score, true)),
                DetStatus::FalsePositive => scored.push((m.score, false)),
                DetStatus::IgnoreMatched => {}
            }
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));

    let mut points = Vec::with_capacity(scored.len());
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (_, is_tp) in scored {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        points.push((recall, precision));
    }
    (points, n_gt)
}

/// 101-point interpolated AP from cumulative (recall, precision) points:
/// the precision envelope sampled at recalls 0.00, 0.01, ..., 1.00.
pub fn interpolated_ap(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let recalls: Vec<f64> = points.iter().map(|p| p.0).collect();
    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len() - 1).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    for j in 0..=100 {
        let r = j as f64 / 100.0;
        let idx = recalls.partition_point(|&rec| rec < r);
        if idx < envelope.len() {
            total += envelope[idx];
        }
    }
    total / 101.0
}

/// AP per class at one IoU threshold. Classes without ground truth are
/// absent from the result.
pub fn average_precision(
    detections: &[Detection],
    ground_truth: &[Annotation],
    iou_t: f64,
    max_dets_per_image: Option<usize>,
) -> BTreeMap<CategoryId, f64> {
    let mut classes: std::collections::BTreeSet<CategoryId> = ground_truth
        .iter()
        .filter(|g| !g.is_ignore)
        .map(|g| g.category)
        .collect();
    classes.extend(detections.iter().map(|d| d.category));

    let mut out = BTreeMap::new();
    for class in classes {
        let (points, n_gt) = pr_points(detections, ground_truth, iou_t, class, max_dets_per_image);
        if n_gt == 0 {
            continue; // zero-GT classes are excluded from aggregation
        }
        out.insert(class, interpolated_ap(&points));
    }
    out
}

/// AP at 0.5, 0.75, and the 0.50:0.95 mean for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Per-class recall block for one (iou threshold, top-N) setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub iou_t: f64,
    pub top_n: usize,
    pub average_recall: f64,
    pub min_class_recall: f64,
    pub per_class: BTreeMap<CategoryId, f64>,
}

/// Aggregated detection metrics split into novel and base class groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub novel_ap: f64,
    pub novel_ap50: f64,
    pub novel_ap75: f64,
    pub base_ap: f64,
    pub base_ap50: f64,
    pub base_ap75: f64,
    pub per_class: BTreeMap<CategoryId, ClassAp>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recall: Vec<RecallReport>,
}

impl MetricsReport {
    /// Flat metric-name -> value map for report files.
    pub fn to_flat_map(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        map.insert("nAP".to_string(), self.novel_ap);
        map.insert("nAP50".to_string(), self.novel_ap50);
        map.insert("nAP75".to_string(), self.novel_ap75);
        map.insert("bAP".to_string(), self.base_ap);
        map.insert("bAP50".to_string(), self.base_ap50);
        map.insert("bAP75".to_string(), self.base_ap75);
        for (class, ap) in &self.per_class {
            map.insert(format!("AP/class_{}", class.0), ap.ap);
            map.insert(format!("AP50/class_{}", class.0), ap.ap50);
            map.insert(format!("AP75/class_{}", class.0), ap.ap75);
        }
        for r in &self.recall {
            let tag = format!("@{}", r.top_n);
            map.insert(format!("AR{tag}"), r.average_recall);
            map.insert(format!("minR{tag}"), r.min_class_recall);
            for (class, rec) in &r.per_class {
                map.insert(format!("R{tag}/class_{}", class.0), *rec);
            }
        }
        map
    }
}

fn mean<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let v: Vec<f64> = values.copied().collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Full COCO-style report: per-class AP at every threshold in
/// 0.50:0.05:0.95, aggregated separately over novel and base categories.
pub fn coco_map(
    detections: &[Detection],
    ground_truth: &[Annotation],
    split: &FewShotSplit,
    max_dets_per_image: Option<usize>,
) -> MetricsReport {
    let thresholds = coco_iou_thresholds();
    let per_threshold: Vec<BTreeMap<CategoryId, f64>> = thresholds
        .iter()
        .map(|&t| average_precision(detections, ground_truth, t, max_dets_per_image))
        .collect();

    let classes: std::collections::BTreeSet<CategoryId> =
        per_threshold[0].keys().copied().collect();

    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let over_thresholds: Vec<f64> = per_threshold
            .iter()
            .map(|m| *m.get(&class).expect("class present at every threshold"))
            .collect();
        per_class.insert(
            class,
            ClassAp {
                ap: over_thresholds.iter().sum::<f64>() / over_thresholds.len() as f64,
                ap50: over_thresholds[0],
                ap75: over_thresholds[5],
            },
        );
    }

    let novel: Vec<CategoryId> = classes.iter().copied().filter(|c| split.is_novel(*c)).collect();
    let base: Vec<CategoryId> = classes
        .iter()
        .copied()
        .filter(|c| split.base_categories.contains(c))
        .collect();

    MetricsReport {
        novel_ap: mean(novel.iter().map(|c| &per_class[c].ap)),
        novel_ap50: mean(novel.iter().map(|c| &per_class[c].ap50)),
        novel_ap75: mean(novel.iter().map(|c| &per_class[c].ap75)),
        base_ap: mean(base.iter().map(|c| &per_class[c].ap)),
        base_ap50: mean(base.iter().map(|c| &per_class[c].ap50)),
        base_ap75: mean(base.iter().map(|c| &per_class[c].ap75)),
        per_class,
        recall: Vec::new(),
    }
}

/// Class-agnostic proposal recall: per image the top-N proposals by score
/// greedily claim unmatched ground truths at the threshold, labels ignored.
/// Recall is then reported per ground-truth class; the average is over
/// classes with at least one ground truth.
pub fn average_recall(
    proposals: &[Detection],
    ground_truth: &[Annotation],
    iou_t: f64,
    top_n: usize,
) -> RecallReport {
    let mut by_image: BTreeMap<ImageId, Vec<&Detection>> = BTreeMap::new();
    for p in proposals {
        by_image.entry(p.image_id).or_default().push(p);
    }
    let mut gt_by_image: BTreeMap<ImageId, Vec<&Annotation>> = BTreeMap::new();
    for g in ground_truth {
        if !g.is_ignore {
            gt_by_image.entry(g.image_id).or_default().push(g);
        }
    }

    let mut matched_per_class: BTreeMap<CategoryId, (usize, usize)> = BTreeMap::new();
    for (image, gts) in &gt_by_image {
        let mut props: Vec<&Detection> = by_image.get(image).cloned().unwrap_or_default();
        props.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
        props.truncate(top_n);

        let mut taken = vec![false; gts.len()];
        for prop in props {
            let mut best: Option<(f64, usize)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let overlap = iou(&prop.box_, &gt.box_);
                if overlap >= iou_t && best.map_or(true, |(b, _)| overlap > b) {
                    best = Some((overlap, g));
                }
            }
            if let Some((_, g)) = best {
                taken[g] = true;
            }
        }
        for (g, gt) in gts.iter().enumerate() {
            let entry = matched_per_class.entry(gt.category).or_insert((0, 0));
            entry.1 += 1;
            if taken[g] {
                entry.0 += 1;
            }
        }
    }

    let per_class: BTreeMap<CategoryId, f64> = matched_per_class
        .into_iter()
        .map(|(c, (matched, total))| (c, matched as f64 / total as f64))
        .collect();
    let average_recall = mean(per_class.values());
    let min_class_recall = per_class.values().copied().fold(f64::INFINITY, f64::min);
    RecallReport {
        iou_t,
        top_n,
        average_recall,
        min_class_recall: if per_class.is_empty() { 0.0 } else { min_class_recall },
        per_class,
    }
}

/// Cumulative PR points for one class: one (recall, precision) pair after
/// each counted detection in score order.
pub fn pr_curve(
    detections: &[Detection],
    ground_truth: &[Annotation],
    iou_t: f64,
    class: CategoryId,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let (points, n_gt) = pr_points(detections, ground_truth, iou_t, class, None);
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth(class.0));
    }
    Ok(points)
}

/// Writes a PR curve as `recall,precision` lines with six decimal places.
pub fn write_pr_csv(points: &[(f64, f64)], path: &std::path::Path) -> Result<(), EvalError> {
    let mut text = String::from("recall,precision\n");
    for (r, p) in points {
        text.push_str(&format!("{r:.6},{p:.6}\n"));
    }
    std::fs::write(path, text).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use std::collections::BTreeSet;

    fn det(image: u64, cat: u32, score: f64, box_: BBox) -> Detection {
        Detection {
            det_id: 0,
            image_id: ImageId(image),
            box_,
            category: CategoryId(cat),
            score,
        }
    }

    fn gt(id: u64, image: u64, cat: u32, box_: BBox) -> Annotation {
        Annotation::groundtruth(id, ImageId(image), box_, CategoryId(cat))
    }

    fn ignore_gt(id: u64, image: u64, cat: u32, box_: BBox) -> Annotation {
        let mut a = gt(id, image, cat, box_);
        a.is_ignore = true;
        a.source = crate::datamodel::AnnotationSource::Ignore;
        a
    }

    fn split(novel: &[u32], base: &[u32]) -> FewShotSplit {
        FewShotSplit {
            base_categories: base.iter().map(|&c| CategoryId(c)).collect(),
            novel_categories: novel.iter().map(|&c| CategoryId(c)).collect(),
            shots_k: 1,
            novel_annotations: Vec::new(),
        }
    }

    #[test]
    fn single_good_detection_is_tp() {
        let dets = vec![det(1, 1, 0.9, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let gts = vec![gt(1, 1, 1, BBox::new(0.5, 0.0, 10.0, 10.0))];
        let m = match_slice(&dets, &gts, 0.5);
        assert_eq!(m.detections[0].status, DetStatus::TruePositive);
        assert_eq!(m.detections[0].matched_gt, Some(1));
        assert!(m.gt_matched[0].1);
    }

    #[test]
    fn one_gt_cannot_match_twice() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![det(1, 1, 0.7, b), det(1, 1, 0.9, b)];
        let gts = vec![gt(1, 1, 1, b)];
        let m = match_slice(&dets, &gts, 0.5);
        // processing order: det 1 (0.9) then det 0 (0.7)
        assert_eq!(m.detections[0].det_index, 1);
        assert_eq!(m.detections[0].status, DetStatus::TruePositive);
        assert_eq!(m.detections[1].status, DetStatus::FalsePositive);
    }

    #[test]
    fn ignore_region_swallows_unmatched_detection() {
        let dets = vec![det(1, 1, 0.9, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let gts = vec![ignore_gt(1, 1, 1, BBox::new(1.0, 0.0, 10.0, 10.0))];
        let m = match_slice(&dets, &gts, 0.5);
        assert_eq!(m.detections[0].status, DetStatus::IgnoreMatched);
        assert!(m.gt_matched.is_empty()); // ignores never count as GT
    }

    #[test]
    fn perfect_detection_gives_ap_one() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![det(1, 1, 0.9, b)];
        let gts = vec![gt(1, 1, 1, b)];
        let ap = average_precision(&dets, &gts, 0.5, None);
        assert_eq!(ap[&CategoryId(1)], 1.0);
    }

    #[test]
    fn fp_then_tp_gives_ap_half() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![
            det(1, 1, 0.9, BBox::new(50.0, 50.0, 10.0, 10.0)), // FP, higher score
            det(1, 1, 0.8, b),                                  // TP
        ];
        let gts = vec![gt(1, 1, 1, b)];
        let ap = average_precision(&dets, &gts, 0.5, None);
        assert_eq!(ap[&CategoryId(1)], 0.5);
    }

    #[test]
    fn no_detections_gives_ap_zero() {
        let gts = vec![gt(1, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let ap = average_precision(&[], &gts, 0.5, None);
        assert_eq!(ap[&CategoryId(1)], 0.0);
    }

    #[test]
    fn zero_gt_classes_are_excluded() {
        let dets = vec![det(1, 7, 0.9, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let gts = vec![gt(1, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let ap = average_precision(&dets, &gts, 0.5, None);
        assert!(!ap.contains_key(&CategoryId(7)));
    }

    #[test]
    fn perfect_world_gives_all_ones() {
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        let mut id = 1;
        for image in 1..=3u64 {
            for cat in 1..=2u32 {
                let b = BBox::new(10.0 * id as f64, 5.0, 8.0, 8.0);
                gts.push(gt(id, image, cat, b));
                dets.push(det(image, cat, 0.9, b));
                id += 1;
            }
        }
        let report = coco_map(&dets, &gts, &split(&[2], &[1]), Some(100));
        assert_eq!(report.novel_ap, 1.0);
        assert_eq!(report.novel_ap50, 1.0);
        assert_eq!(report.novel_ap75, 1.0);
        assert_eq!(report.base_ap, 1.0);
    }

    #[test]
    fn empty_detections_give_zero_report() {
        let gts = vec![
            gt(1, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0)),
            gt(2, 1, 2, BBox::new(20.0, 0.0, 10.0, 10.0)),
        ];
        let report = coco_map(&[], &gts, &split(&[2], &[1]), Some(100));
        assert_eq!(report.novel_ap, 0.0);
        assert_eq!(report.base_ap50, 0.0);
    }

    #[test]
    fn proposals_equal_to_gt_give_full_recall() {
        let gts = vec![
            gt(1, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0)),
            gt(2, 1, 2, BBox::new(20.0, 0.0, 10.0, 10.0)),
            gt(3, 2, 2, BBox::new(0.0, 0.0, 10.0, 10.0)),
        ];
        let proposals: Vec<Detection> = gts
            .iter()
            .map(|g| det(g.image_id.0, 99, 0.5, g.box_))
            .collect();
        let r = average_recall(&proposals, &gts, 0.5, 100);
        assert_eq!(r.average_recall, 1.0);
        assert_eq!(r.min_class_recall, 1.0);
        assert!(r.per_class.values().all(|&v| v == 1.0));
    }

    #[test]
    fn top_n_zero_gives_zero_recall() {
        let gts = vec![gt(1, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let proposals = vec![det(1, 1, 0.9, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let r = average_recall(&proposals, &gts, 0.5, 0);
        assert_eq!(r.average_recall, 0.0);
    }

    #[test]
    fn min_recall_is_bounded_by_average() {
        let gts = vec![
            gt(1, 1, 1, BBox::new(0.0, 0.0, 10.0, 10.0)),
            gt(2, 1, 2, BBox::new(20.0, 0.0, 10.0, 10.0)),
        ];
        let proposals = vec![det(1, 1, 0.9, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let r = average_recall(&proposals, &gts, 0.5, 10);
        assert!(r.min_class_recall <= r.average_recall);
        assert!(r.average_recall <= 1.0);
    }

    #[test]
    fn pr_curve_single_tp() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![det(1, 1, 0.9, b)];
        let gts = vec![gt(1, 1, 1, b)];
        let curve = pr_curve(&dets, &gts, 0.5, CategoryId(1)).unwrap();
        assert_eq!(curve, vec![(1.0, 1.0)]);
    }

    #[test]
    fn pr_curve_fp_then_tp() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![
            det(1, 1, 0.9, BBox::new(50.0, 50.0, 10.0, 10.0)),
            det(1, 1, 0.8, b),
        ];
        let gts = vec![gt(1, 1, 1, b)];
        let curve = pr_curve(&dets, &gts, 0.5, CategoryId(1)).unwrap();
        assert_eq!(curve, vec![(0.0, 0.0), (1.0, 0.5)]);
    }

    #[test]
    fn pr_curve_without_gt_is_an_error() {
        let err = pr_curve(&[], &[], 0.5, CategoryId(1)).unwrap_err();
        assert!(matches!(err, EvalError::NoGroundTruth(1)));
    }

    #[test]
    fn curve_integrates_to_ap() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..50 {
            let mut gts = Vec::new();
            let mut dets = Vec::new();
            let mut id = 1;
            for image in 1..=2u64 {
                for _ in 0..rng.random_range(1..5) {
                    let b = BBox::new(
                        rng.random_range(0.0..80.0),
                        rng.random_range(0.0..80.0),
                        rng.random_range(5.0..20.0),
                        rng.random_range(5.0..20.0),
                    );
                    gts.push(gt(id, image, 1, b));
                    id += 1;
                }
                for _ in 0..rng.random_range(0..6) {
                    let b = BBox::new(
                        rng.random_range(0.0..80.0),
                        rng.random_range(0.0..80.0),
                        rng.random_range(5.0..20.0),
                        rng.random_range(5.0..20.0),
                    );
                    dets.push(det(image, 1, rng.random_range(0.1..1.0), b));
                }
            }
            let curve = pr_curve(&dets, &gts, 0.5, CategoryId(1)).unwrap();
            let from_curve = interpolated_ap(&curve);
            let ap = average_precision(&dets, &gts, 0.5, None)[&CategoryId(1)];
            assert!((from_curve - ap).abs() < 1e-12);
        }
    }

    #[test]
    fn ap_is_monotone_in_iou_threshold() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        for _ in 0..30 {
            let mut gts = Vec::new();
            let mut dets = Vec::new();
            for id in 1..=4u64 {
                let b = BBox::new(
                    rng.random_range(0.0..60.0),
                    rng.random_range(0.0..60.0),
                    rng.random_range(8.0..20.0),
                    rng.random_range(8.0..20.0),
                );
                gts.push(gt(id, 1, 1, b));
                // jittered detection near each gt plus one random far box
                dets.push(det(
                    1,
                    1,
                    rng.random_range(0.2..1.0),
                    BBox::new(
                        b.x + rng.random_range(-3.0..3.0),
                        b.y + rng.random_range(-3.0..3.0),
                        b.w,
                        b.h,
                    ),
                ));
            }
            let mut last = f64::INFINITY;
            for t in coco_iou_thresholds() {
                let ap = average_precision(&dets, &gts, t, None)
                    .get(&CategoryId(1))
                    .copied()
                    .unwrap_or(0.0);
                assert!(ap <= last + 1e-12, "AP rose from {last} to {ap} at t={t}");
                last = ap;
            }
        }
    }

    #[test]
    fn flat_map_contains_headline_metrics() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let dets = vec![det(1, 2, 0.9, b)];
        let gts = vec![gt(1, 1, 2, b)];
        let report = coco_map(&dets, &gts, &split(&[2], &[1]), Some(100));
        let map = report.to_flat_map();
        assert_eq!(map["nAP50"], 1.0);
        assert!(map.contains_key("AP75/class_2"));
    }
}
