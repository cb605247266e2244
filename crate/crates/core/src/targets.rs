//! Ground-truth to default-box matching and regression target encoding.

use crate::anchors::AnchorSet;
use crate::data::Annotation;
use crate::error::Result;
use crate::geometry::{clip_box, iou_unchecked, BBox};

/// Regression offsets `(t_cx, t_cy, t_w, t_h)` relative to a default box.
pub type Offsets = [f64; 4];

/// Overlap above which an anchor is matched in the threshold phase.
pub const MATCH_IOU: f64 = 0.5;

/// Per-anchor assignment of ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Index into the ground-truth list, if matched.
    pub matched_gt_of: Vec<Option<usize>>,
    /// Assigned class per anchor; 0 is background.
    pub matched_class_of: Vec<u8>,
    /// Encoded offsets per anchor; zero for background anchors.
    pub regression_targets: Vec<Offsets>,
    /// Whether the match came from the forced best-overlap phase.
    pub forced: Vec<bool>,
}

impl MatchResult {
    pub fn num_matched(&self) -> usize {
        self.matched_gt_of.iter().filter(|m| m.is_some()).count()
    }

    pub fn matched_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.matched_gt_of
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|_| i))
    }

    pub fn background_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.matched_gt_of
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.is_none().then_some(i))
    }
}

/// Assigns ground-truth boxes to anchors.
///
/// First every ground truth claims its highest-overlap anchor regardless of
/// the threshold. When two ground truths want the same anchor the higher
/// overlap wins (lower index on exact ties) and the other takes its next best
/// free anchor. Then every unclaimed anchor whose best overlap exceeds
/// [`MATCH_IOU`] is matched to that ground truth.
pub fn match_anchors(anchors: &AnchorSet, gts: &[Annotation]) -> MatchResult {
    let n = anchors.len();
    let mut result = MatchResult {
        matched_gt_of: vec![None; n],
        matched_class_of: vec![0; n],
        regression_targets: vec![[0.0; 4]; n],
        forced: vec![false; n],
    };
    if gts.is_empty() || n == 0 {
        return result;
    }

    // overlaps[g * n + a]
    let mut overlaps = vec![0.0f64; gts.len() * n];
    for (g, gt) in gts.iter().enumerate() {
        let row = &mut overlaps[g * n..(g + 1) * n];
        for (a, anchor) in anchors.anchors.iter().enumerate() {
            row[a] = iou_unchecked(anchor, &gt.bbox);
        }
    }

    // Forced phase: repeatedly take the best remaining (gt, free anchor) pair.
    let mut gt_done = vec![false; gts.len()];
    let mut claimed = vec![false; n];
    for _ in 0..gts.len().min(n) {
        let mut best: Option<(usize, usize, f64, f64)> = None;
        for g in (0..gts.len()).filter(|&g| !gt_done[g]) {
            let (a, ov, dist) = best_free_anchor(
                anchors,
                &gts[g].bbox,
                &overlaps[g * n..(g + 1) * n],
                &claimed,
            );
            let better = match best {
                None => true,
                Some((_, _, bov, bdist)) => ov > bov || (ov == bov && ov == 0.0 && dist < bdist),
            };
            if better {
                best = Some((g, a, ov, dist));
            }
        }
        let Some((g, a, _, _)) = best else { break };
        gt_done[g] = true;
        claimed[a] = true;
        result.matched_gt_of[a] = Some(g);
        result.forced[a] = true;
    }

    // Threshold phase.
    for a in (0..n).filter(|&a| !claimed[a]) {
        let mut best_g = 0;
        let mut best_ov = overlaps[a];
        for g in 1..gts.len() {
            let ov = overlaps[g * n + a];
            if ov > best_ov {
                best_ov = ov;
                best_g = g;
            }
        }
        if best_ov > MATCH_IOU {
            result.matched_gt_of[a] = Some(best_g);
        }
    }

    for a in 0..n {
        if let Some(g) = result.matched_gt_of[a] {
            result.matched_class_of[a] = gts[g].class_id;
            result.regression_targets[a] = encode(&anchors.anchors[a], &gts[g].bbox);
        }
    }
    result
}

/// Best unclaimed anchor for one ground truth: highest overlap, lowest index
/// on ties; when nothing overlaps, the nearest anchor center.
fn best_free_anchor(
    anchors: &AnchorSet,
    gt: &BBox,
    row: &[f64],
    claimed: &[bool],
) -> (usize, f64, f64) {
    let mut best = (usize::MAX, -1.0, f64::INFINITY);
    for (a, &ov) in row.iter().enumerate() {
        if claimed[a] {
            continue;
        }
        if ov > best.1 {
            best = (a, ov, center_distance(&anchors.anchors[a], gt));
        } else if ov == 0.0 && best.1 == 0.0 {
            let d = center_distance(&anchors.anchors[a], gt);
            if d < best.2 {
                best = (a, ov, d);
            }
        }
    }
    best
}

fn center_distance(a: &BBox, b: &BBox) -> f64 {
    (a.cx - b.cx).hypot(a.cy - b.cy)
}

/// Offsets of `g` relative to default box `d`, normalized by the default
/// box size.
pub fn encode(d: &BBox, g: &BBox) -> Offsets {
    [
        (g.cx - d.cx) / d.w,
        (g.cy - d.cy) / d.h,
        (g.w / d.w).ln(),
        (g.h / d.h).ln(),
    ]
}

/// Inverse of [`encode`]; the result is not clipped.
pub fn decode(d: &BBox, t: &Offsets) -> BBox {
    BBox::new(
        d.cx + t[0] * d.w,
        d.cy + t[1] * d.h,
        d.w * t[2].exp(),
        d.h * t[3].exp(),
    )
}

/// Decodes and clips to the image, failing with
/// [`crate::Error::EmptyAfterClip`] when nothing remains.
pub fn decode_clipped(d: &BBox, t: &Offsets) -> Result<BBox> {
    clip_box(&decode(d, t))
}
