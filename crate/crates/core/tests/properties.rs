use pcb_gpp::anchors::generate_anchors;
use pcb_gpp::data::{Annotation, DefectClass};
use pcb_gpp::eval::{average_precision, evaluate_detections, match_detections, EvalConfig};
use pcb_gpp::geometry::{iou, nms, BBox, NmsParams, ScoredBox};
use pcb_gpp::oracle::{
    average_precision_reference, iou_raster, match_detections_reference, match_reference,
    nms_reference, RASTER_GRID,
};
use pcb_gpp::targets::{decode, encode, match_anchors};
use proptest::prelude::*;

/// A box inside the unit square with sides in `[lo, hi)`.
fn unit_box(lo: f64, hi: f64) -> impl Strategy<Value = BBox> {
    (lo..hi, lo..hi, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(w, h, u, v)| {
        let x = u * (1.0 - w);
        let y = v * (1.0 - h);
        BBox::from_corners(x, y, x + w, y + h)
    })
}

fn scored(class_count: u8) -> impl Strategy<Value = ScoredBox> {
    // coarse scores produce ties; a small region produces overlaps
    (unit_box(0.05, 0.4), 0..20u32, 1..=class_count).prop_map(|(bbox, s, class_id)| ScoredBox {
        bbox,
        score: s as f64 / 20.0,
        class_id,
    })
}

fn annotation() -> impl Strategy<Value = Annotation> {
    (unit_box(0.05, 0.5), 0..6usize).prop_map(|(b, c)| Annotation::new(b, DefectClass::ALL[c]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn iou_is_symmetric_bounded_and_matches_raster(a in unit_box(0.01, 0.6), b in unit_box(0.01, 0.6)) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((ab - iou_raster(&a, &b, RASTER_GRID)).abs() < 5e-3);
    }

    #[test]
    fn iou_one_only_for_equal_boxes(a in unit_box(0.01, 0.6), b in unit_box(0.01, 0.6)) {
        if (iou(&a, &b).unwrap() - 1.0).abs() < 1e-9 {
            let (ca, cb) = (a.corners(), b.corners());
            prop_assert!(ca.iter().zip(&cb).all(|(x, y)| (x - y).abs() < 1e-6));
        }
    }

    #[test]
    fn center_corner_round_trip(b in unit_box(0.01, 0.9)) {
        let [x1, y1, x2, y2] = b.corners();
        prop_assert!(x1 < x2 && y1 < y2);
        let back = BBox::from_corners(x1, y1, x2, y2);
        for (p, q) in [(back.cx, b.cx), (back.cy, b.cy), (back.w, b.w), (back.h, b.h)] {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn match_forced_and_threshold_rules(
        grid in 1..=4usize,
        gts in prop::collection::vec(annotation(), 0..=5),
    ) {
        // at most 4*4 cells with one ratio, below the 20-anchor bound
        let anchors = generate_anchors(&[(grid, grid)], &[0.3], &[1.0]).unwrap();
        let m = match_anchors(&anchors, &gts);
        let reference = match_reference(&anchors.anchors, &gts);
        for a in 0..anchors.len() {
            let got = m.matched_gt_of[a].map(|g| (g, m.forced[a]));
            prop_assert_eq!(got, reference[a], "anchor {}", a);
            if let Some(g) = m.matched_gt_of[a] {
                prop_assert_eq!(m.matched_class_of[a], gts[g].class_id);
                if !m.forced[a] {
                    // the set definition: overlap above one half and the best ground truth
                    let o = iou(&anchors.anchors[a], &gts[g].bbox).unwrap();
                    prop_assert!(o > 0.5);
                    prop_assert!(gts.iter().all(|h| iou(&anchors.anchors[a], &h.bbox).unwrap() <= o));
                }
            } else {
                prop_assert_eq!(m.matched_class_of[a], 0);
                prop_assert!(gts.iter().all(|h| iou(&anchors.anchors[a], &h.bbox).unwrap() <= 0.5));
            }
        }
        let forced = m.forced.iter().filter(|&&f| f).count();
        prop_assert_eq!(forced, gts.len().min(anchors.len()));
        if gts.len() <= anchors.len() {
            for g in 0..gts.len() {
                prop_assert!(m.matched_gt_of.contains(&Some(g)));
            }
        }
    }

    #[test]
    fn detection_matching_equals_exhaustive_search(
        dets in prop::collection::vec(scored(3), 0..15),
        gts in prop::collection::vec(annotation(), 0..8),
    ) {
        let gts: Vec<Annotation> = gts.into_iter().map(|mut g| { g.class_id = 1 + g.class_id % 3; g }).collect();
        prop_assert_eq!(match_detections(&dets, &gts, 0.33), match_detections_reference(&dets, &gts, 0.33));
    }

    #[test]
    fn ap_matches_reference_and_ignores_monotone_rescoring(
        flags in prop::collection::vec(any::<bool>(), 0..40),
        extra_gt in 0..5usize,
        seed in any::<u64>(),
    ) {
        // distinct scores in a shuffled order
        let n = flags.len();
        let mut scores: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n.max(1) as f64).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            scores.swap(i, (s >> 33) as usize % (i + 1));
        }
        let scored: Vec<(f64, bool)> = scores.iter().copied().zip(flags.iter().copied()).collect();
        let gt = flags.iter().filter(|&&f| f).count() + extra_gt;
        let ap = average_precision(&scored, gt);
        let reference = average_precision_reference(&scored, gt);
        match (ap, reference) {
            (Some(a), Some(r)) => prop_assert!((a - r).abs() < 1e-12, "{} vs {}", a, r),
            (a, r) => prop_assert_eq!(a, r),
        }
        let rescored: Vec<(f64, bool)> = scored.iter().map(|&(v, f)| ((3.0 * v).exp() - 7.0, f)).collect();
        prop_assert_eq!(average_precision(&rescored, gt), ap);
    }

    #[test]
    fn map_is_the_mean_of_class_aps(
        dets in prop::collection::vec(prop::collection::vec(scored(6), 0..8), 1..4),
        gts in prop::collection::vec(prop::collection::vec(annotation(), 0..5), 4),
    ) {
        let gts = &gts[..dets.len()];
        let report = evaluate_detections(&dets, gts, &EvalConfig::default());
        let aps: Vec<f64> = report.classes.iter().filter_map(|c| c.ap).collect();
        let mean = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
        prop_assert_eq!(report.map, mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn nms_equals_quadratic_reference(
        cands in prop::collection::vec(scored(3), 0..=50),
        thr in 0.1..0.9f64,
        max in 1..60usize,
    ) {
        let params = NmsParams { iou_threshold: thr, score_threshold: 0.1, max_detections: max };
        let kept = nms(&cands, &params);
        prop_assert_eq!(&kept, &nms_reference(&cands, &params));
        for (i, a) in kept.iter().enumerate() {
            prop_assert!(cands.contains(a));
            for b in &kept[i + 1..] {
                prop_assert!(a.score >= b.score);
                if a.class_id == b.class_id {
                    prop_assert!(iou(&a.bbox, &b.bbox).unwrap() <= thr);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_decode_are_inverse(d in unit_box(0.01, 0.9), g in unit_box(0.01, 0.9)) {
        let back = decode(&d, &encode(&d, &g));
        for (p, q) in [(back.cx, g.cx), (back.cy, g.cy), (back.w, g.w), (back.h, g.h)] {
            prop_assert!((p - q).abs() < 1e-9);
        }
        let t = encode(&d, &g);
        let again = encode(&d, &decode(&d, &t));
        prop_assert!(t.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
