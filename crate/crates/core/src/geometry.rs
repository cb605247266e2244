//! Axis-aligned box arithmetic in normalized image coordinates.
//!
//! Boxes are stored in center form `(cx, cy, w, h)` with every coordinate
//! normalized to the image size. Pixel coordinates only appear at I/O
//! boundaries (annotation files, detection files, overlays).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangle in normalized center form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Builds a box from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: 0.5 * (x1 + x2),
            cy: 0.5 * (y1 + y2),
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// Converts pixel corners of a `width` x `height` image.
    pub fn from_pixel_corners(
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let (sw, sh) = (width as f64, height as f64);
        Self::from_corners(x1 / sw, y1 / sh, x2 / sw, y2 / sh)
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        ]
    }

    pub fn pixel_corners(&self, width: usize, height: usize) -> [f64; 4] {
        let [x1, y1, x2, y2] = self.corners();
        let (sw, sh) = (width as f64, height as f64);
        [x1 * sw, y1 * sh, x2 * sw, y2 * sh]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0
            && self.h > 0.0
            && self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
    }

    fn check(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degenerate box {self:?}")))
        }
    }

    /// Area of the intersection with `other`.
    pub fn intersection(&self, other: &BBox) -> f64 {
        let [ax1, ay1, ax2, ay2] = self.corners();
        let [bx1, by1, bx2, by2] = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        iw * ih
    }
}

/// A class-labeled box with a confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    /// Defect class in `1..=6`; background is never emitted.
    pub class_id: u8,
}

/// Detector output after decoding and suppression, sorted by descending score.
pub type DetectionSet = Vec<ScoredBox>;

/// Jaccard overlap of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    Ok(iou_unchecked(a, b))
}

/// Jaccard overlap without validity checks. Degenerate inputs give 0.
pub fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Clamps a box to the unit square.
pub fn clip_box(b: &BBox) -> Result<BBox> {
    let [x1, y1, x2, y2] = b.corners();
    if [x1, y1, x2, y2].iter().any(|v| v.is_nan()) {
        return Err(Error::EmptyAfterClip);
    }
    let (x1, y1) = (x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
    let (x2, y2) = (x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
    if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
        return Err(Error::EmptyAfterClip);
    }
    Ok(BBox::from_corners(x1, y1, x2, y2))
}

/// Suppression parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsParams {
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub max_detections: usize,
}

impl Default for NmsParams {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            score_threshold: 0.05,
            max_detections: 100,
        }
    }
}

/// Class-wise greedy non-maximum suppression.
///
/// Candidates below `score_threshold` are dropped. Within each class boxes are
/// visited by descending score (ties keep input order) and a box survives
/// unless it overlaps an already kept box of its class by more than
/// `iou_threshold`. The survivors of all classes are merged, ordered by score
/// and truncated to `max_detections`.
pub fn nms(candidates: &[ScoredBox], params: &NmsParams) -> DetectionSet {
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].score >= params.score_threshold)
        .collect();
    // Stable sort: equal scores stay in input order.
    order.sort_by(|&a, &b| candidates[b].score.total_cmp(&candidates[a].score));

    let mut kept: Vec<usize> = Vec::new();
    let mut kept_by_class: [Vec<usize>; 256] = std::array::from_fn(|_| Vec::new());
    for i in order {
        let c = &candidates[i];
        let same_class = &mut kept_by_class[c.class_id as usize];
        let suppressed = same_class
            .iter()
            .any(|&k| iou_unchecked(&candidates[k].bbox, &c.bbox) > params.iou_threshold);
        if !suppressed {
            same_class.push(i);
            kept.push(i);
        }
    }
    // `kept` is already in global (score, input-order) order.
    kept.truncate(params.max_detections);
    kept.into_iter().map(|i| candidates[i]).collect()
}
