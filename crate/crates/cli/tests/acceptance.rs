//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed. The
//! desk-scale experiment (criteria 6 and 7) trains six models and takes
//! roughly half an hour on one CPU core; set `PCBGPP_SKIP_DESK=1` to report
//! those two criteria as skipped.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pcb_gpp::anchors::generate_anchors;
use pcb_gpp::data::deeppcb::{load_deeppcb, write_deeppcb};
use pcb_gpp::data::imageio::ReadOptions;
use pcb_gpp::data::synth::{generate_dataset, GeneratorConfig};
use pcb_gpp::data::{Annotation, DefectClass, ImagePair, Raster};
use pcb_gpp::eval::{
    average_precision, evaluate_detections, match_detections, parse_detections, EvalConfig,
};
use pcb_gpp::geometry::{iou, nms, BBox, NmsParams, ScoredBox};
use pcb_gpp::loss::{sample_background, smooth_l1, total_loss};
use pcb_gpp::model::checkpoint::Checkpoint;
use pcb_gpp::model::{
    decode_detections, AnchorOutputs, Detector, ModelConfig, Preset, NUM_CLASSES,
};
use pcb_gpp::nn::ParamKind;
use pcb_gpp::oracle::{iou_raster, loss_reference, match_reference, nms_reference, RASTER_GRID};
use pcb_gpp::targets::{decode, encode, match_anchors, MatchResult};
use pcb_gpp::trainer::{ablation_table, gradient_check, run_ablation, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of the desk-scale synthetic dataset.
const DESK_DATA_SEED: u64 = 2024;
/// Reduced-configuration CPU threshold for criterion 6.
const DESK_MIN_MAP: f64 = 0.60;

enum Outcome {
    Pass,
    Fail,
    Skip,
}

struct Line {
    id: usize,
    title: &'static str,
    outcome: Outcome,
    detail: String,
}

fn check(
    id: usize,
    title: &'static str,
    budget: Option<Duration>,
    f: impl FnOnce() -> Result<String, String>,
) -> Line {
    let t = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&*p))));
    let elapsed = t.elapsed();
    let (outcome, mut detail) = match result {
        Ok(d) => (Outcome::Pass, d),
        Err(d) => (Outcome::Fail, d),
    };
    if let Some(b) = budget {
        if elapsed > b && matches!(outcome, Outcome::Pass) {
            detail = format!(
                "{detail}; took {:.1}s, budget {}s",
                elapsed.as_secs_f64(),
                b.as_secs()
            );
            return finish(Line {
                id,
                title,
                outcome: Outcome::Fail,
                detail,
            });
        }
    }
    detail = format!("{detail} [{:.1}s]", elapsed.as_secs_f64());
    finish(Line {
        id,
        title,
        outcome,
        detail,
    })
}

fn finish(l: Line) -> Line {
    let tag = match l.outcome {
        Outcome::Pass => "PASS",
        Outcome::Fail => "FAIL",
        Outcome::Skip => "SKIP",
    };
    println!("criterion {} {tag}: {}: {}", l.id, l.title, l.detail);
    l
}

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit_box(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> BBox {
    let w = rng.random_range(lo..hi);
    let h = rng.random_range(lo..hi);
    let x = rng.random_range(0.0..1.0 - w);
    let y = rng.random_range(0.0..1.0 - h);
    BBox::from_corners(x, y, x + w, y + h)
}

fn random_class(rng: &mut ChaCha8Rng) -> DefectClass {
    DefectClass::ALL[rng.random_range(0..6)]
}

fn criterion_1() -> Result<String, String> {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).map_err(|e| format!("README: {e}"))?;
    ensure(text.contains("## Full reproduction"), || {
        "README has no full reproduction recipe".into()
    })?;
    Ok("paper-scale numbers are out of reach on a desk; full reproduction recipe documented in README".into())
}

fn criterion_2() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let a = unit_box(&mut rng, 0.01, 0.6);
        let b = unit_box(&mut rng, 0.01, 0.6);
        let ab = iou(&a, &b).map_err(|e| e.to_string())?;
        let ba = iou(&b, &a).map_err(|e| e.to_string())?;
        ensure(ab == ba, || format!("asymmetric iou {ab} vs {ba}"))?;
        ensure((0.0..=1.0).contains(&ab), || {
            format!("iou {ab} out of range")
        })?;
        let e = (ab - iou_raster(&a, &b, RASTER_GRID)).abs();
        worst = worst.max(e);
        ensure(e < 5e-3, || format!("raster oracle differs by {e}"))?;
    }
    for trial in 0..500 {
        let n = rng.random_range(0..=50);
        let cands: Vec<ScoredBox> = (0..n)
            .map(|_| ScoredBox {
                bbox: unit_box(&mut rng, 0.05, 0.4),
                score: rng.random_range(0..20) as f64 / 20.0,
                class_id: rng.random_range(1..=3),
            })
            .collect();
        let params = NmsParams {
            iou_threshold: rng.random_range(0.1..0.9),
            score_threshold: 0.1,
            max_detections: rng.random_range(1..60),
        };
        ensure(
            nms(&cands, &params) == nms_reference(&cands, &params),
            || format!("nms differs on trial {trial}"),
        )?;
    }
    Ok(format!(
        "200 iou pairs (worst raster gap {worst:.1e}), 500 nms trials identical"
    ))
}

fn criterion_3() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = unit_box(&mut rng, 0.01, 0.9);
        let g = unit_box(&mut rng, 0.01, 0.9);
        let back = decode(&d, &encode(&d, &g));
        for (p, q) in [
            (back.cx, g.cx),
            (back.cy, g.cy),
            (back.w, g.w),
            (back.h, g.h),
        ] {
            worst = worst.max((p - q).abs());
        }
    }
    ensure(worst < 1e-9, || format!("decode(encode) error {worst}"))?;
    for trial in 0..200 {
        let grid = rng.random_range(1..=4);
        let anchors =
            generate_anchors(&[(grid, grid)], &[0.3], &[1.0]).map_err(|e| e.to_string())?;
        let gts: Vec<Annotation> = (0..rng.random_range(0..=5))
            .map(|_| Annotation::new(unit_box(&mut rng, 0.05, 0.5), random_class(&mut rng)))
            .collect();
        let m = match_anchors(&anchors, &gts);
        let reference = match_reference(&anchors.anchors, &gts);
        for a in 0..anchors.len() {
            let got = m.matched_gt_of[a].map(|g| (g, m.forced[a]));
            ensure(got == reference[a], || {
                format!("trial {trial} anchor {a}: {got:?} vs {:?}", reference[a])
            })?;
            if let (Some(g), false) = (m.matched_gt_of[a], m.forced[a]) {
                let o = iou(&anchors.anchors[a], &gts[g].bbox).unwrap();
                let best = gts
                    .iter()
                    .map(|h| iou(&anchors.anchors[a], &h.bbox).unwrap())
                    .fold(0.0, f64::max);
                ensure(o > 0.5 && o == best, || {
                    format!("trial {trial}: non-forced pair breaks the set rule")
                })?;
            }
        }
    }
    Ok(format!("1000 encode/decode pairs (worst {worst:.1e}), 200 matching instances agree with brute force"))
}

fn random_outputs(rng: &mut ChaCha8Rng, n: usize) -> (AnchorOutputs, MatchResult) {
    let mut out = AnchorOutputs::zeros(n);
    let mut m = MatchResult {
        matched_gt_of: vec![None; n],
        matched_class_of: vec![0; n],
        regression_targets: vec![[0.0; 4]; n],
        forced: vec![false; n],
    };
    for i in 0..n {
        out.logits[i] = std::array::from_fn(|_| rng.random_range(-4.0..4.0));
        out.offsets[i] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        if rng.random_bool(0.2) {
            m.matched_gt_of[i] = Some(0);
            m.matched_class_of[i] = rng.random_range(1..=6);
            m.regression_targets[i] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        }
    }
    (out, m)
}

fn criterion_4() -> Result<String, String> {
    ensure(
        smooth_l1(0.5) == 0.125 && smooth_l1(1.0) == 0.5 && smooth_l1(2.0) == 1.5,
        || "smooth_l1 values".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..200 {
        let n = rng.random_range(1..=200);
        let (out, m) = random_outputs(&mut rng, n);
        let bg = sample_background(&m, trial);
        let (reg, cls) = loss_reference(&out, &m, &bg);
        let got = total_loss(&out, &m, &bg, 1.0);
        ensure((got.regression - reg).abs() < 1e-9, || {
            format!("regression {} vs {reg}", got.regression)
        })?;
        ensure((got.classification - cls).abs() < 1e-9, || {
            format!("classification {} vs {cls}", got.classification)
        })?;

        let matched = m.num_matched();
        let available = n - matched;
        let want = if matched == 0 { 16 } else { 3 * matched };
        ensure(bg.len() == want.min(available), || {
            format!("trial {trial}: sampled {} of {available}", bg.len())
        })?;

        let mut uniform = out.clone();
        uniform
            .logits
            .iter_mut()
            .for_each(|l| *l = [0.0; NUM_CLASSES]);
        let l = total_loss(&uniform, &m, &bg, 1.0);
        let expect = (matched + bg.len()) as f64 * 7f64.ln();
        ensure((l.classification - expect).abs() < 1e-6, || {
            format!("uniform logits {} vs {expect}", l.classification)
        })?;
    }
    Ok("smooth-L1 values exact, 200 random instances match the scalar oracle, sampling ratio exact".into())
}

fn random_raster(rng: &mut ChaCha8Rng, size: usize) -> Raster {
    let data = (0..size * size).map(|_| rng.random_range(0..2)).collect();
    Raster::from_vec(size, size, data).unwrap()
}

fn criterion_5() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let det = Detector::<f32>::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let pair = ImagePair::new(
        random_raster(&mut rng, 512),
        random_raster(&mut rng, 512),
        "p",
    )
    .unwrap();
    let (anchors, out) = det.predict(&pair).map_err(|e| e.to_string())?;
    ensure(
        anchors.grid_dims == vec![(32, 32), (16, 16), (8, 8)],
        || format!("grids {:?}", anchors.grid_dims),
    )?;
    ensure(anchors.len() == 4032 && out.len() == 4032, || {
        format!("{} anchor slots", anchors.len())
    })?;

    let samples =
        gradient_check(ModelConfig::tiny(), 20, &[1e-5, 1e-3], 5).map_err(|e| e.to_string())?;
    let worst_fine = samples.iter().map(|s| s.rel_error(0)).fold(0.0, f64::max);
    let coarse_ok = samples.iter().filter(|s| s.rel_error(1) < 1e-2).count();
    ensure(worst_fine < 1e-2, || {
        format!("gradient relative error {worst_fine:.2e} at step 1e-5")
    })?;

    let mut det = Detector::<f32>::new(ModelConfig::desk_scale()).map_err(|e| e.to_string())?;
    for p in det.params_mut() {
        if matches!(p.kind, ParamKind::NormShift | ParamKind::Bias)
            || p.name.ends_with("running_mean")
        {
            p.value
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    let a = random_raster(&mut rng, 128);
    let same = ImagePair::new(a.clone(), a, "same").unwrap();
    let nms = NmsParams::default();
    let direct = det.detect(&same, &nms).map_err(|e| e.to_string())?;
    let bias = det.bias_only_forward(32, 32).map_err(|e| e.to_string())?;
    let from_bias = decode_detections(
        &det.anchors_for(128, 128).unwrap(),
        &det.anchor_outputs(&bias, 0),
        &nms,
    );
    ensure(direct.len() == from_bias.len(), || {
        format!("{} vs {} detections", direct.len(), from_bias.len())
    })?;
    for (x, y) in direct.iter().zip(&from_bias) {
        ensure(
            x.class_id == y.class_id && (x.score - y.score).abs() < 1e-5,
            || "detect(A, A) differs".into(),
        )?;
    }
    Ok(format!(
        "grids 32/16/8 with 4032 slots; 20 gradients within {worst_fine:.1e} at step 1e-5 \
         ({coarse_ok}/20 within 1e-2 at step 1e-3); detect(A, A) equals the bias-only pass"
    ))
}

fn criteria_6_and_7() -> (Line, Line) {
    let titles = ("desk-scale end-to-end", "ablation direction");
    if std::env::var_os("PCBGPP_SKIP_DESK").is_some() {
        let skip = |id, title| {
            finish(Line {
                id,
                title,
                outcome: Outcome::Skip,
                detail: "PCBGPP_SKIP_DESK set".into(),
            })
        };
        return (skip(6, titles.0), skip(7, titles.1));
    }
    let t = Instant::now();
    let run = RunConfig::desk_scale();
    let generator = GeneratorConfig {
        seed: DESK_DATA_SEED,
        ..run.generator.clone()
    };
    let (train, test) = match generate_dataset(&generator, 200, 50) {
        Ok(d) => d,
        Err(e) => {
            let fail = |id, title| {
                finish(Line {
                    id,
                    title,
                    outcome: Outcome::Fail,
                    detail: e.to_string(),
                })
            };
            return (fail(6, titles.0), fail(7, titles.1));
        }
    };
    let rows = run_ablation(
        &[Preset::OursMp, Preset::NonGpp],
        &[0, 1, 2],
        &run,
        &train,
        &test,
        None,
        |p, s, m| {
            if m.epoch % 10 == 0 {
                eprintln!("  {p} seed {s} epoch {} loss {:.4}", m.epoch, m.loss);
            }
        },
    );
    for l in ablation_table(&rows).lines() {
        println!("  {l}");
    }
    let secs = t.elapsed().as_secs_f64();
    let map_of = |p: Preset, s: u64| {
        rows.iter()
            .find(|r| r.preset == p && r.seed == s)
            .and_then(|r| r.result.as_ref().ok())
            .map(|r| r.map)
    };
    let six = match map_of(Preset::OursMp, 0) {
        Some(m) if m >= DESK_MIN_MAP => (
            Outcome::Pass,
            format!("ours-MP seed 0 mAP {m:.4} >= {DESK_MIN_MAP}"),
        ),
        Some(m) => (
            Outcome::Fail,
            format!("ours-MP seed 0 mAP {m:.4} < {DESK_MIN_MAP}"),
        ),
        None => (Outcome::Fail, "ours-MP seed 0 run failed".into()),
    };
    let mean = |p: Preset| -> Option<f64> {
        let v: Option<Vec<f64>> = (0..3).map(|s| map_of(p, s)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let seven = match (mean(Preset::OursMp), mean(Preset::NonGpp)) {
        (Some(a), Some(b)) if a >= b => (
            Outcome::Pass,
            format!("mean mAP ours-MP {a:.4} >= non-GPP {b:.4}"),
        ),
        (Some(a), Some(b)) => (
            Outcome::Fail,
            format!("mean mAP ours-MP {a:.4} < non-GPP {b:.4}"),
        ),
        _ => (Outcome::Fail, "an ablation run failed".into()),
    };
    (
        finish(Line {
            id: 6,
            title: titles.0,
            outcome: six.0,
            detail: format!("{} [{secs:.0}s, shared]", six.1),
        }),
        finish(Line {
            id: 7,
            title: titles.1,
            outcome: seven.0,
            detail: format!("{} [shared]", seven.1),
        }),
    )
}

fn criterion_8() -> Result<String, String> {
    let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
    ensure(
        (ap - 0.8333).abs() < 1e-4 && (ap - 5.0 / 6.0).abs() < 1e-6,
        || format!("hand case AP {ap}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let scored: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random_range(0.0..1.0), rng.random_bool(0.5)))
            .collect();
        let gt = scored.iter().filter(|s| s.1).count() + rng.random_range(0..3);
        let moved: Vec<(f64, bool)> = scored
            .iter()
            .map(|&(s, f)| (10.0 * s.powi(3) - 2.0, f))
            .collect();
        ensure(
            average_precision(&scored, gt) == average_precision(&moved, gt),
            || "AP changed under rescoring".into(),
        )?;
    }

    for _ in 0..100 {
        let images = rng.random_range(1..5);
        let gts: Vec<Vec<Annotation>> = (0..images)
            .map(|_| {
                (0..rng.random_range(0..5))
                    .map(|_| Annotation::new(unit_box(&mut rng, 0.05, 0.4), random_class(&mut rng)))
                    .collect()
            })
            .collect();
        let dets: Vec<Vec<ScoredBox>> = gts
            .iter()
            .map(|g| {
                let mut d = Vec::new();
                for a in g {
                    if rng.random_bool(0.7) {
                        let class_id = random_class(&mut rng).id();
                        d.push(ScoredBox {
                            bbox: a.bbox,
                            score: rng.random_range(0.0..1.0),
                            class_id,
                        });
                    }
                }
                d.sort_by(|a, b| b.score.total_cmp(&a.score));
                d
            })
            .collect();
        let r = evaluate_detections(&dets, &gts, &EvalConfig::default());
        let aps: Vec<f64> = r.classes.iter().filter_map(|c| c.ap).collect();
        let mean = if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        };
        ensure(r.map == mean, || format!("mAP {} vs mean {mean}", r.map))?;
    }

    let b = BBox::new(0.5, 0.5, 0.2, 0.2);
    let wrong = ScoredBox {
        bbox: b,
        score: 0.9,
        class_id: DefectClass::Open.id(),
    };
    let flags = match_detections(&[wrong], &[Annotation::new(b, DefectClass::Short)], 0.33);
    ensure(flags == vec![false], || {
        "wrong-class detection counted as TP".into()
    })?;
    Ok(format!(
        "hand-case AP {ap:.6}; rescoring invariance, mAP mean and wrong-class FP hold"
    ))
}

fn criterion_9() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("data");
    let generator = GeneratorConfig {
        seed: 9,
        ..GeneratorConfig::desk_scale()
    };
    let (train, test) = generate_dataset(&generator, 6, 3).map_err(|e| e.to_string())?;
    write_deeppcb(&root, &train, &test).map_err(|e| e.to_string())?;
    let index = load_deeppcb(&root).map_err(|e| e.to_string())?;
    for (records, samples) in [(&index.train, &train), (&index.test, &test)] {
        ensure(records.len() == samples.len(), || {
            "split sizes changed".into()
        })?;
        for (r, s) in records.iter().zip(samples.iter()) {
            ensure(r.annotations == s.annotations, || {
                format!("{}: annotations changed", r.id)
            })?;
            let loaded = r.load(&ReadOptions::default()).map_err(|e| e.to_string())?;
            ensure(
                loaded.pair.template == s.pair.template && loaded.pair.tested == s.pair.tested,
                || format!("{}: pixels changed", r.id),
            )?;
        }
    }

    let det = Detector::<f32>::new(ModelConfig::desk_scale()).map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("model.ckpt");
    Checkpoint::from_detector(&det, serde_json::json!({}))
        .save(&ckpt)
        .map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_pcbgpp");
    let rec = &index.test[0];
    let out = dir.path().join("detect");
    let status = Command::new(bin)
        .args(["detect", "--checkpoint"])
        .arg(&ckpt)
        .arg("--template")
        .arg(&rec.template_path)
        .arg("--tested")
        .arg(&rec.tested_path)
        .arg("--out")
        .arg(&out)
        .args(["--set", "nms.score_threshold=0.0"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("detect failed: {}", String::from_utf8_lossy(&status.stderr))
    })?;
    let det_path = out.join("detections.txt");
    let text = std::fs::read_to_string(&det_path).map_err(|e| e.to_string())?;
    let lines = parse_detections(&text, &det_path).map_err(|e| e.to_string())?;
    ensure(!lines.is_empty(), || {
        "no detections at score threshold 0".into()
    })?;
    let overlay = image::open(out.join("overlay.png")).map_err(|e| format!("overlay: {e}"))?;
    ensure(overlay.width() as usize == rec.width, || {
        "overlay size".into()
    })?;

    let bench = Command::new(bin)
        .args(["bench", "--checkpoint"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&root)
        .args(["--runs", "10", "--warmup", "2"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(bench.status.success(), || {
        format!("bench failed: {}", String::from_utf8_lossy(&bench.stderr))
    })?;
    let stdout = String::from_utf8_lossy(&bench.stdout);
    let field = |k: &str| -> Option<f64> {
        stdout.split_whitespace().find_map(|kv| {
            kv.strip_prefix(&format!("{k}="))
                .and_then(|v| v.parse().ok())
        })
    };
    let mut shown = Vec::new();
    for k in ["fps", "p50_ms", "p95_ms"] {
        let v = field(k).ok_or_else(|| format!("bench output lacks {k}: {stdout}"))?;
        ensure(v.is_finite() && v > 0.0, || format!("{k} = {v}"))?;
        shown.push(format!("{k} {v:.2}"));
    }
    Ok(format!(
        "9 pairs round-trip exactly; detect wrote {} parseable lines and an overlay; bench {}",
        lines.len(),
        shown.join(", ")
    ))
}

fn main() {
    // a harness=false target still receives libtest flags such as --nocapture
    let minute = Some(Duration::from_secs(60));
    let mut lines = vec![
        check(1, "paper-number context", None, criterion_1),
        check(2, "geometry suite", minute, criterion_2),
        check(3, "target suite", minute, criterion_3),
        check(4, "loss suite", minute, criterion_4),
        check(
            5,
            "model shape and gradient suite",
            Some(Duration::from_secs(300)),
            criterion_5,
        ),
    ];
    let (six, seven) = criteria_6_and_7();
    lines.push(six);
    lines.push(seven);
    lines.push(check(8, "eval suite", None, criterion_8));
    lines.push(check(9, "pipeline integrity", None, criterion_9));
    lines.sort_by_key(|l| l.id);

    let failed: Vec<String> = lines
        .iter()
        .filter(|l| matches!(l.outcome, Outcome::Fail))
        .map(|l| format!("{} ({})", l.id, l.title))
        .collect();
    let skipped = lines
        .iter()
        .filter(|l| matches!(l.outcome, Outcome::Skip))
        .count();
    println!(
        "acceptance: {} passed, {} failed, {skipped} skipped",
        lines.len() - failed.len() - skipped,
        failed.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
