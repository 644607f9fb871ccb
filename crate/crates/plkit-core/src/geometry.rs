//! Axis-aligned boxes, IoU, and box-delta coding.
//!
//! Boxes are stored as `(x, y, w, h)` in image coordinates, the same
//! convention COCO files use. Corner form is derived on demand. Zero-area
//! boxes are legal values (clipping produces them) but never legal anchors
//! for delta coding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("anchor box has zero width or height: {0:?}")]
    ZeroSizeAnchor(BBox),
    #[error("target box has zero width or height: {0:?}")]
    ZeroSizeTarget(BBox),
}

/// Axis-aligned rectangle: top-left corner plus size, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_xywh(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_xywh(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Non-negative size and finite coordinates.
    pub fn is_valid(&self) -> bool {
        self.w >= 0.0
            && self.h >= 0.0
            && self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    pub fn has_positive_size(&self) -> bool {
        self.w > 0.0 && self.h > 0.0
    }
}

/// Box offsets relative to an anchor: center shifts normalized by anchor
/// size, and log-scale size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Image bounds in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageExtent {
    pub width: u32,
    pub height: u32,
}

impl ImageExtent {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

/// Intersection over union of two boxes. Returns 0 when the union has zero
/// area, so degenerate boxes are safe inputs.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = a.x.max(b.x);
    let iy = a.y.max(b.y);
    let ix2 = a.right().min(b.right());
    let iy2 = a.bottom().min(b.bottom());
    let iw = (ix2 - ix).max(0.0);
    let ih = (iy2 - iy).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU of every pair, |a| x |b|.
pub fn pairwise_iou(a: &[BBox], b: &[BBox]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|ba| b.iter().map(|bb| iou(ba, bb)).collect())
        .collect()
}

/// Deltas that move `anchor` onto `target`.
pub fn encode_deltas(anchor: &BBox, target: &BBox) -> Result<BoxDelta, GeometryError> {
    if !anchor.has_positive_size() {
        return Err(GeometryError::ZeroSizeAnchor(*anchor));
    }
    if !target.has_positive_size() {
        return Err(GeometryError::ZeroSizeTarget(*target));
    }
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    Ok(BoxDelta {
        dx: (tcx - acx) / anchor.w,
        dy: (tcy - acy) / anchor.h,
        dw: (target.w / anchor.w).ln(),
        dh: (target.h / anchor.h).ln(),
    })
}

/// Inverse of [`encode_deltas`]: applies `delta` to `anchor`.
pub fn decode_deltas(anchor: &BBox, delta: &BoxDelta) -> Result<BBox, GeometryError> {
    if !anchor.has_positive_size() {
        return Err(GeometryError::ZeroSizeAnchor(*anchor));
    }
    let (acx, acy) = anchor.center();
    let cx = acx + delta.dx * anchor.w;
    let cy = acy + delta.dy * anchor.h;
    let w = anchor.w * delta.dw.exp();
    let h = anchor.h * delta.dh.exp();
    Ok(BBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        w,
        h,
    })
}

/// Clamps a box into `[0, width] x [0, height]`. Boxes already inside are
/// returned bit-identically; boxes fully outside collapse to a zero-area
/// box on the nearest boundary.
pub fn clip(b: &BBox, extent: &ImageExtent) -> BBox {
    let w = extent.width as f64;
    let h = extent.height as f64;
    if b.x >= 0.0 && b.y >= 0.0 && b.right() <= w && b.bottom() <= h {
        return *b;
    }
    let x1 = b.x.clamp(0.0, w);
    let y1 = b.y.clamp(0.0, h);
    let x2 = b.right().clamp(0.0, w);
    let y2 = b.bottom().clamp(0.0, h);
    BBox {
        x: x1,
        y: y1,
        w: x2 - x1,
        h: y2 - y1,
    }
}
