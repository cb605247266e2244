//! Slow, independent reference implementations. The property tests and
//! the acceptance suite compare the production code against these.

use crate::data::Annotation;
use crate::geometry::{iou_unchecked, BBox, NmsParams, ScoredBox};
use crate::model::{AnchorOutputs, NUM_CLASSES};
use crate::targets::{MatchResult, MATCH_IOU};

/// Raster resolution for [`iou_raster`] comparisons. A 0.01 side still
/// spans 1000 cells, so quantization stays far below the 5e-3 tolerance.
pub const RASTER_GRID: usize = 100_000;

/// IoU by counting cells of a `grid`×`grid` raster over the unit square
/// whose centers fall inside each box.
pub fn iou_raster(a: &BBox, b: &BBox, grid: usize) -> f64 {
    let span = |lo: f64, hi: f64| -> (usize, usize) {
        // cells whose center (i + 0.5) / grid lies in [lo, hi)
        let first = (lo * grid as f64 - 0.5).ceil().max(0.0) as usize;
        let end = ((hi * grid as f64 - 0.5).ceil().max(0.0) as usize).min(grid);
        (first, end.max(first))
    };
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let (ax, ay) = (span(ax1, ax2), span(ay1, ay2));
    let (bx, by) = (span(bx1, bx2), span(by1, by2));
    let len = |r: (usize, usize)| (r.1 - r.0) as f64;
    let overlap =
        |p: (usize, usize), q: (usize, usize)| p.1.min(q.1).saturating_sub(p.0.max(q.0)) as f64;
    let inter = overlap(ax, bx) * overlap(ay, by);
    let union = len(ax) * len(ay) + len(bx) * len(by) - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy suppression written as repeated arg-max over the survivors.
pub fn nms_reference(candidates: &[ScoredBox], params: &NmsParams) -> Vec<ScoredBox> {
    let mut kept: Vec<usize> = Vec::new();
    let mut classes: Vec<u8> = candidates.iter().map(|c| c.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        let mut alive: Vec<usize> = (0..candidates.len())
            .filter(|&i| {
                candidates[i].class_id == class && candidates[i].score >= params.score_threshold
            })
            .collect();
        while !alive.is_empty() {
            let mut best = alive[0];
            for &i in &alive {
                if candidates[i].score > candidates[best].score {
                    best = i;
                }
            }
            kept.push(best);
            alive.retain(|&i| {
                i != best
                    && iou_unchecked(&candidates[i].bbox, &candidates[best].bbox)
                        <= params.iou_threshold
            });
        }
    }
    kept.sort_by(|&a, &b| {
        candidates[b]
            .score
            .total_cmp(&candidates[a].score)
            .then(a.cmp(&b))
    });
    kept.truncate(params.max_detections);
    kept.into_iter().map(|i| candidates[i]).collect()
}

/// Anchor matching: forced pairs come from one global sort of every
/// (gt, anchor) pair, then the threshold rule is applied anchor by anchor.
/// Returns the assigned ground truth and whether the pair was forced.
pub fn match_reference(anchors: &[BBox], gts: &[Annotation]) -> Vec<Option<(usize, bool)>> {
    let mut out = vec![None; anchors.len()];
    let mut pairs = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        for (a, d) in anchors.iter().enumerate() {
            let ov = iou_unchecked(d, &gt.bbox);
            // without overlap the nearest center decides
            let dist = if ov == 0.0 {
                (d.cx - gt.bbox.cx).hypot(d.cy - gt.bbox.cy)
            } else {
                0.0
            };
            pairs.push((ov, dist, g, a));
        }
    }
    pairs.sort_by(|p, q| {
        q.0.total_cmp(&p.0)
            .then(p.1.total_cmp(&q.1))
            .then(p.2.cmp(&q.2))
            .then(p.3.cmp(&q.3))
    });
    let mut gt_done = vec![false; gts.len()];
    for &(_, _, g, a) in &pairs {
        if !gt_done[g] && out[a].is_none() {
            gt_done[g] = true;
            out[a] = Some((g, true));
        }
    }
    for (a, d) in anchors.iter().enumerate() {
        if out[a].is_some() {
            continue;
        }
        let ovs: Vec<f64> = gts.iter().map(|g| iou_unchecked(d, &g.bbox)).collect();
        let best = ovs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best > MATCH_IOU {
            let g = ovs
                .iter()
                .position(|&o| o == best)
                .expect("maximum is present");
            out[a] = Some((g, false));
        }
    }
    out
}

/// Unnormalized regression and classification sums as plain loops.
pub fn loss_reference(out: &AnchorOutputs, m: &MatchResult, bg: &[usize]) -> (f64, f64) {
    let mut reg = 0.0;
    let mut cls = 0.0;
    for i in 0..out.len() {
        let scored_class = if m.matched_gt_of[i].is_some() {
            for k in 0..4 {
                let d: f64 = out.offsets[i][k] - m.regression_targets[i][k];
                reg += if d.abs() < 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                };
            }
            Some(m.matched_class_of[i] as usize)
        } else if bg.contains(&i) {
            Some(0)
        } else {
            None
        };
        if let Some(c) = scored_class {
            let mut mx = f64::NEG_INFINITY;
            for k in 0..NUM_CLASSES {
                mx = mx.max(out.logits[i][k]);
            }
            let mut z = 0.0;
            for k in 0..NUM_CLASSES {
                z += (out.logits[i][k] - mx).exp();
            }
            cls -= (out.logits[i][c] - mx) - z.ln();
        }
    }
    (reg, cls)
}

/// Average precision as the mean, over true positives, of the best
/// precision reached at that rank or any later one. Scores must be
/// distinct.
pub fn average_precision_reference(scored: &[(f64, bool)], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let precision_at = |k: usize| v[..=k].iter().filter(|s| s.1).count() as f64 / (k + 1) as f64;
    let mut sum = 0.0;
    for k in 0..v.len() {
        if v[k].1 {
            sum += (k..v.len()).map(precision_at).fold(0.0, f64::max);
        }
    }
    Some(sum / gt_count as f64)
}

/// Detection matching by exhaustive search per detection in score order.
pub fn match_detections_reference(
    dets: &[ScoredBox],
    gts: &[Annotation],
    iou_threshold: f64,
) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in order {
        let candidates: Vec<(usize, f64)> = gts
            .iter()
            .enumerate()
            .filter(|(j, g)| !used[*j] && g.class_id == dets[i].class_id)
            .map(|(j, g)| (j, iou_unchecked(&dets[i].bbox, &g.bbox)))
            .filter(|&(_, o)| o > iou_threshold)
            .collect();
        let best = candidates
            .iter()
            .map(|c| c.1)
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(&(j, _)) = candidates.iter().find(|c| c.1 == best) {
            used[j] = true;
            tp[i] = true;
        }
    }
    tp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_iou_on_aligned_boxes_is_exact() {
        let a = BBox::from_corners(0.0, 0.0, 0.2, 0.2);
        let b = BBox::from_corners(0.1, 0.1, 0.3, 0.3);
        assert!((iou_raster(&a, &b, 1000) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou_raster(&a, &a, 1000), 1.0);
    }

    #[test]
    fn reference_ap_hand_case() {
        let ap = average_precision_reference(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }
}
