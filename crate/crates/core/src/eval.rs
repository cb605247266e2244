//! Benchmark metrics: per-class AP and mAP, precision, recall and F-mean at
//! an operating threshold, the detections interchange file and a
//! throughput benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Annotation, DefectClass, ImagePair, Sample};
use crate::error::{Error, Result};
use crate::geometry::{iou_unchecked, BBox, DetectionSet, NmsParams, ScoredBox};
use crate::model::Detector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// A detection is correct when its overlap is strictly above this.
    pub iou_threshold: f64,
    /// Operating point for precision, recall and F-mean.
    pub score_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.33,
            score_threshold: 0.5,
        }
    }
}

/// Greedy matching by descending score: a detection is a true positive
/// when it overlaps some unclaimed ground truth of its class by more than
/// `iou_threshold`, claiming the highest-overlap one. Flags follow the input
/// order.
pub fn match_detections(dets: &[ScoredBox], gts: &[Annotation], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut claimed = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if claimed[j] || g.class_id != d.class_id {
                continue;
            }
            let o = iou_unchecked(&d.bbox, &g.bbox);
            if o > iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        if let Some((j, _)) = best {
            claimed[j] = true;
            flags[i] = true;
        }
    }
    flags
}

/// All-points interpolated average precision of scored TP/FP flags against
/// `gt_count` ground truths. `None` when there is no ground truth.
pub fn average_precision(scored: &[(f64, bool)], gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &i in &order {
        if scored[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Some(ap)
}

/// Counts at the operating point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truths: usize,
    /// Set when no detection passes the threshold; precision is then 0.
    pub no_detections: bool,
}

pub fn f_mean(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall and F-mean over images after dropping detections
/// scored below `score_threshold`.
pub fn precision_recall_f(dets: &[DetectionSet], gts: &[Vec<Annotation>], cfg: &EvalConfig) -> Prf {
    let mut out = Prf::default();
    for (d, g) in dets.iter().zip(gts) {
        let kept: Vec<ScoredBox> = d
            .iter()
            .filter(|b| b.score >= cfg.score_threshold)
            .copied()
            .collect();
        let flags = match_detections(&kept, g, cfg.iou_threshold);
        out.true_positives += flags.iter().filter(|&&f| f).count();
        out.false_positives += flags.iter().filter(|&&f| !f).count();
        out.ground_truths += g.len();
    }
    let n_det = out.true_positives + out.false_positives;
    out.no_detections = n_det == 0;
    out.precision = if n_det == 0 {
        0.0
    } else {
        out.true_positives as f64 / n_det as f64
    };
    out.recall = if out.ground_truths == 0 {
        0.0
    } else {
        out.true_positives as f64 / out.ground_truths as f64
    };
    out.f_mean = f_mean(out.precision, out.recall);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class_id: u8,
    pub name: String,
    /// `None` when the class has no ground truth; excluded from mAP.
    pub ap: Option<f64>,
    pub ground_truths: usize,
    pub detections: usize,
}

/// Throughput measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub fps: f64,
    pub runs: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassResult>,
    pub map: f64,
    pub operating_point: Prf,
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub images: usize,
    pub bench: Option<BenchReport>,
}

impl EvalReport {
    pub fn per_class_ap(&self) -> BTreeMap<u8, f64> {
        self.classes
            .iter()
            .filter_map(|c| c.ap.map(|ap| (c.class_id, ap)))
            .collect()
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images={}", self.images);
        let _ = writeln!(s, "iou_threshold={}", self.iou_threshold);
        let _ = writeln!(s, "score_threshold={}", self.score_threshold);
        let _ = writeln!(s, "map={:.6}", self.map);
        for c in &self.classes {
            match c.ap {
                Some(ap) => {
                    let _ = writeln!(s, "ap.{}={ap:.6}", c.name);
                }
                None => {
                    let _ = writeln!(s, "ap.{}=excluded", c.name);
                }
            }
            let _ = writeln!(s, "gt.{}={}", c.name, c.ground_truths);
            let _ = writeln!(s, "det.{}={}", c.name, c.detections);
        }
        let p = &self.operating_point;
        let _ = writeln!(s, "precision={:.6}", p.precision);
        let _ = writeln!(s, "recall={:.6}", p.recall);
        let _ = writeln!(s, "f_mean={:.6}", p.f_mean);
        let _ = writeln!(s, "true_positives={}", p.true_positives);
        let _ = writeln!(s, "false_positives={}", p.false_positives);
        if let Some(b) = &self.bench {
            let _ = writeln!(s, "fps={:.3}", b.fps);
            let _ = writeln!(s, "latency_p50_ms={:.3}", b.p50_ms);
            let _ = writeln!(s, "latency_p95_ms={:.3}", b.p95_ms);
        }
        s
    }

    /// Writes `<stem>.txt` and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.to_text())?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }
}

/// Scores detections against ground truth over a whole split.
pub fn evaluate_detections(
    dets: &[DetectionSet],
    gts: &[Vec<Annotation>],
    cfg: &EvalConfig,
) -> EvalReport {
    assert_eq!(dets.len(), gts.len(), "one detection set per image");
    let mut per_class: BTreeMap<u8, (Vec<(f64, bool)>, usize)> = BTreeMap::new();
    for (d, g) in dets.iter().zip(gts) {
        let flags = match_detections(d, g, cfg.iou_threshold);
        for (b, f) in d.iter().zip(flags) {
            per_class
                .entry(b.class_id)
                .or_default()
                .0
                .push((b.score, f));
        }
        for a in g {
            per_class.entry(a.class_id).or_default().1 += 1;
        }
    }
    let classes: Vec<ClassResult> = DefectClass::ALL
        .iter()
        .map(|&c| {
            let (scored, gt) = per_class.remove(&c.id()).unwrap_or_default();
            let ap = average_precision(&scored, gt);
            if ap.is_none() {
                log::warn!("class {c} has no ground truth; excluded from mAP");
            }
            ClassResult {
                class_id: c.id(),
                name: c.name().to_string(),
                ap,
                ground_truths: gt,
                detections: scored.len(),
            }
        })
        .collect();
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    EvalReport {
        classes,
        map,
        operating_point: precision_recall_f(dets, gts, cfg),
        iou_threshold: cfg.iou_threshold,
        score_threshold: cfg.score_threshold,
        images: dets.len(),
        bench: None,
    }
}

/// Runs the detector over `samples` and scores the result.
pub fn evaluate_model(
    det: &Detector<f32>,
    samples: &[Sample],
    nms: &NmsParams,
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<DetectionSet>)> {
    let dets = samples
        .iter()
        .map(|s| det.detect(&s.pair, nms))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<Vec<Annotation>> = samples.iter().map(|s| s.annotations.clone()).collect();
    Ok((evaluate_detections(&dets, &gts, cfg), dets))
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times single-pair detection, decode and suppression included, cycling
/// through `pairs`.
pub fn fps_benchmark(
    det: &Detector<f32>,
    pairs: &[ImagePair],
    warmup: usize,
    runs: usize,
    nms: &NmsParams,
) -> Result<BenchReport> {
    if pairs.is_empty() || runs == 0 {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one pair and one run".into(),
        ));
    }
    for i in 0..warmup {
        det.detect(&pairs[i % pairs.len()], nms)?;
    }
    let mut lat = Vec::with_capacity(runs);
    let start = Instant::now();
    for i in 0..runs {
        let t = Instant::now();
        det.detect(&pairs[i % pairs.len()], nms)?;
        lat.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let total = start.elapsed().as_secs_f64();
    lat.sort_by(f64::total_cmp);
    Ok(BenchReport {
        fps: runs as f64 / total,
        runs,
        warmup,
        mean_ms: lat.iter().sum::<f64>() / runs as f64,
        p50_ms: percentile(&lat, 50.0),
        p95_ms: percentile(&lat, 95.0),
    })
}

/// One line of a detections file, in pixel corners.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionLine {
    pub image_id: String,
    pub class_id: u8,
    pub score: f64,
    pub corners: [f64; 4],
}

impl DetectionLine {
    pub fn to_scored(&self, width: usize, height: usize) -> ScoredBox {
        let [x1, y1, x2, y2] = self.corners;
        ScoredBox {
            bbox: BBox::from_pixel_corners(x1, y1, x2, y2, width, height),
            score: self.score,
            class_id: self.class_id,
        }
    }
}

/// Formats detections as `image_id class_id score x1 y1 x2 y2` lines.
pub fn format_detections(
    image_id: &str,
    dets: &[ScoredBox],
    width: usize,
    height: usize,
) -> String {
    let mut s = String::new();
    for d in dets {
        let [x1, y1, x2, y2] = d.bbox.pixel_corners(width, height);
        let _ = writeln!(
            s,
            "{image_id} {} {:.6} {x1:.2} {y1:.2} {x2:.2} {y2:.2}",
            d.class_id, d.score
        );
    }
    s
}

pub fn parse_detections(text: &str, path: &Path) -> Result<Vec<DetectionLine>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", f.len())));
        }
        let class_id: u8 = f[1]
            .parse()
            .map_err(|_| err(format!("bad class id {:?}", f[1])))?;
        if DefectClass::from_id(class_id).is_none() {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                line: idx + 1,
                class_id: class_id as i64,
            });
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("bad number {s:?}")))
        };
        out.push(DetectionLine {
            image_id: f[0].to_string(),
            class_id,
            score: num(f[2])?,
            corners: [num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?],
        });
    }
    Ok(out)
}
