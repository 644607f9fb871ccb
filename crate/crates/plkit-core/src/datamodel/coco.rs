//! COCO-style JSON readers and writers.
//!
//! Annotation files carry `images`, `categories`, and `annotations` arrays
//! with `bbox = [x, y, w, h]`; we add `is_pseudo`, `is_ignore`, and
//! `source` extension fields. Detection files are the results format
//! (`image_id`, `category_id`, `bbox`, `score`) plus an optional `det_id`.
//! Unknown fields are preserved-by-ignoring on read. Annotation boxes are
//! clipped to their image extent on ingest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Annotation, AnnotationSource, CategoryId, DataError, Dataset, Detection, ImageId,
};
use crate::geometry::{clip, BBox, ImageExtent};

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    categories: Vec<CocoCategory>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    file_name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    area: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iscrowd: Option<u8>,
    #[serde(default)]
    is_pseudo: bool,
    #[serde(default)]
    is_ignore: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<AnnotationSource>,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Reads and validates a COCO-style annotation file.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let file: CocoFile = serde_json::from_slice(&bytes).map_err(|e| parse_err(path, e))?;

    let mut images = BTreeMap::new();
    for img in &file.images {
        if images
            .insert(ImageId(img.id), ImageExtent::new(img.width, img.height))
            .is_some()
        {
            return Err(DataError::Integrity(format!(
                "duplicate image id {}",
                img.id
            )));
        }
    }
    let mut categories = BTreeMap::new();
    for cat in &file.categories {
        if categories
            .insert(CategoryId(cat.id), cat.name.clone())
            .is_some()
        {
            return Err(DataError::Integrity(format!(
                "duplicate category id {}",
                cat.id
            )));
        }
    }

    let mut annotations = Vec::with_capacity(file.annotations.len());
    for raw in file.annotations {
        let image_id = ImageId(raw.image_id);
        let extent = images.get(&image_id).ok_or_else(|| {
            DataError::Integrity(format!(
                "annotation {} references missing image {}",
                raw.id, raw.image_id
            ))
        })?;
        let box_ = BBox::from_xywh(raw.bbox);
        if !box_.is_valid() {
            return Err(DataError::Integrity(format!(
                "annotation {} has invalid box {:?}",
                raw.id, box_
            )));
        }
        let source = raw.source.unwrap_or(if raw.is_ignore {
            AnnotationSource::Ignore
        } else if raw.is_pseudo {
            AnnotationSource::Pseudo
        } else {
            AnnotationSource::Groundtruth
        });
        annotations.push(Annotation {
            id: raw.id,
            image_id,
            box_: clip(&box_, extent),
            category: CategoryId(raw.category_id),
            is_pseudo: raw.is_pseudo,
            is_ignore: raw.is_ignore,
            source,
        });
    }

    Dataset::new(images, categories, annotations)
}

/// Writes a dataset as COCO-style JSON; [`load_dataset`] inverts it.
pub fn save_annotations(d: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = CocoFile {
        images: d
            .images
            .iter()
            .map(|(id, e)| CocoImage {
                id: id.0,
                width: e.width,
                height: e.height,
                file_name: None,
            })
            .collect(),
        categories: d
            .categories
            .iter()
            .map(|(id, name)| CocoCategory {
                id: id.0,
                name: name.clone(),
            })
            .collect(),
        annotations: d
            .annotations
            .iter()
            .map(|a| CocoAnnotation {
                id: a.id,
                image_id: a.image_id.0,
                category_id: a.category.0,
                bbox: a.box_.to_xywh(),
                area: Some(a.box_.area()),
                iscrowd: Some(0),
                is_pseudo: a.is_pseudo,
                is_ignore: a.is_ignore,
                source: Some(a.source),
            })
            .collect(),
    };
    let bytes = serde_json::to_vec_pretty(&file).expect("dataset serializes");
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoResult {
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    det_id: Option<u64>,
}

/// Reads a COCO results-format detection file. Scores outside `[0,1]` are
/// hard errors, not clamped.
pub fn load_detections(path: &Path) -> Result<Vec<Detection>, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let raw: Vec<CocoResult> = serde_json::from_slice(&bytes).map_err(|e| parse_err(path, e))?;

    let mut out = Vec::with_capacity(raw.len());
    let mut seen = std::collections::BTreeSet::new();
    for (idx, r) in raw.into_iter().enumerate() {
        if !(0.0..=1.0).contains(&r.score) || !r.score.is_finite() {
            return Err(DataError::Range {
                image_id: r.image_id,
                score: r.score,
            });
        }
        let box_ = BBox::from_xywh(r.bbox);
        if !box_.is_valid() {
            return Err(DataError::Integrity(format!(
                "detection #{idx} has invalid box {box_:?}"
            )));
        }
        let det_id = r.det_id.unwrap_or(idx as u64);
        if !seen.insert(det_id) {
            return Err(DataError::Integrity(format!(
                "duplicate detection id {det_id}"
            )));
        }
        out.push(Detection {
            det_id,
            image_id: ImageId(r.image_id),
            box_,
            category: CategoryId(r.category_id),
            score: r.score,
        });
    }
    Ok(out)
}

/// Writes detections in results format, keeping `det_id` for embedding
/// lookups downstream.
pub fn save_detections(dets: &[Detection], path: &Path) -> Result<(), DataError> {
    let raw: Vec<CocoResult> = dets
        .iter()
        .map(|d| CocoResult {
            image_id: d.image_id.0,
            category_id: d.category.0,
            bbox: d.box_.to_xywh(),
            score: d.score,
            det_id: Some(d.det_id),
        })
        .collect();
    let bytes = serde_json::to_vec_pretty(&raw).expect("detections serialize");
    std::fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write(path: &Path, text: &str) {
        std::fs::write(path, text).unwrap();
    }

    #[test]
    fn minimal_dataset_loads() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.json");
        write(
            &p,
            r#"{"images":[{"id":1,"width":100,"height":80}],
                "categories":[{"id":1,"name":"thing"}],
                "annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[10,10,20,20]}]}"#,
        );
        let d = load_dataset(&p).unwrap();
        assert_eq!(d.images.len(), 1);
        assert_eq!(d.categories.len(), 1);
        assert_eq!(d.annotations.len(), 1);
        assert_eq!(d.annotations[0].source, AnnotationSource::Groundtruth);
    }

    #[test]
    fn dangling_image_reference_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.json");
        write(
            &p,
            r#"{"images":[{"id":1,"width":100,"height":80}],
                "categories":[{"id":1,"name":"thing"}],
                "annotations":[{"id":1,"image_id":99,"category_id":1,"bbox":[0,0,5,5]}]}"#,
        );
        let err = load_dataset(&p).unwrap_err();
        assert!(matches!(err, DataError::Integrity(ref m) if m.contains("99")));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.json");
        write(&p, "{not json");
        assert!(matches!(load_dataset(&p).unwrap_err(), DataError::Parse { .. }));
    }

    #[test]
    fn annotation_boxes_are_clipped_to_extent() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.json");
        write(
            &p,
            r#"{"images":[{"id":1,"width":50,"height":50}],
                "categories":[{"id":1,"name":"thing"}],
                "annotations":[{"id":1,"image_id":1,"category_id":1,"bbox":[-10,-10,30,30]}]}"#,
        );
        let d = load_dataset(&p).unwrap();
        assert_eq!(d.annotations[0].box_, BBox::new(0.0, 0.0, 20.0, 20.0));
    }

    #[test]
    fn dataset_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.json");
        let mut images = BTreeMap::new();
        images.insert(ImageId(1), ImageExtent::new(64, 48));
        images.insert(ImageId(2), ImageExtent::new(32, 32));
        let mut categories = BTreeMap::new();
        categories.insert(CategoryId(1), "a".to_string());
        categories.insert(CategoryId(2), "b".to_string());
        let mut ann2 = Annotation::groundtruth(
            2,
            ImageId(2),
            BBox::new(1.25, 2.5, 10.0, 9.0),
            CategoryId(2),
        );
        ann2.is_pseudo = true;
        ann2.source = AnnotationSource::Pseudo;
        let d = Dataset::new(
            images,
            categories,
            vec![
                Annotation::groundtruth(1, ImageId(1), BBox::new(0.0, 0.0, 10.0, 10.0), CategoryId(1)),
                ann2,
            ],
        )
        .unwrap();
        save_annotations(&d, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"is_pseudo\": true"));
        let back = load_dataset(&p).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_annotation_list_roundtrips() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.json");
        let d = Dataset::new(BTreeMap::new(), BTreeMap::new(), Vec::new()).unwrap();
        save_annotations(&d, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), d);
    }

    #[test]
    fn out_of_range_score_is_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("dets.json");
        write(
            &p,
            r#"[{"image_id":1,"category_id":1,"bbox":[0,0,5,5],"score":1.3}]"#,
        );
        assert!(matches!(
            load_detections(&p).unwrap_err(),
            DataError::Range { score, .. } if score == 1.3
        ));
    }

    #[test]
    fn empty_detection_array_loads() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("dets.json");
        write(&p, "[]");
        assert!(load_detections(&p).unwrap().is_empty());
    }

    #[test]
    fn detections_roundtrip_and_assign_ids() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("dets.json");
        write(
            &p,
            r#"[{"image_id":3,"category_id":2,"bbox":[1,2,3,4],"score":0.5},
                {"image_id":3,"category_id":1,"bbox":[0,0,8,8],"score":0.75}]"#,
        );
        let dets = load_detections(&p).unwrap();
        assert_eq!(dets[0].det_id, 0);
        assert_eq!(dets[1].det_id, 1);

        let q = dir.path().join("dets2.json");
        save_detections(&dets, &q).unwrap();
        assert_eq!(load_detections(&q).unwrap(), dets);
    }
}
