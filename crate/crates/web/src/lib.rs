//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The page can generate a synthetic board pair, drag a ground-truth box
//! over it to see which default boxes the matcher assigns, and run a
//! trained checkpoint on the pair. Results cross the boundary as JSON
//! strings and RGBA byte buffers.

use pcb_gpp::data::synth::{generate_sample, GeneratorConfig};
use pcb_gpp::data::{Annotation, DefectClass, Sample};
use pcb_gpp::geometry::{iou_unchecked, BBox, NmsParams};
use pcb_gpp::model::checkpoint::Checkpoint;
use pcb_gpp::model::{Detector, ModelConfig};
use pcb_gpp::targets::match_anchors;
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: pcb_gpp::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// A generated template/tested pair with its ground truth.
#[wasm_bindgen]
pub struct Board {
    sample: Sample,
}

#[wasm_bindgen]
impl Board {
    /// Desk-scale generator geometry at `size` pixels.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, size: usize) -> Result<Board, JsError> {
        make_board(seed, size).map_err(js_err)
    }

    pub fn width(&self) -> usize {
        self.sample.pair.width()
    }

    pub fn height(&self) -> usize {
        self.sample.pair.height()
    }

    /// RGBA pixels of "template", "tested" or "diff" (changed pixels red).
    pub fn rgba(&self, view: &str) -> Vec<u8> {
        let p = &self.sample.pair;
        let mut out = Vec::with_capacity(p.template.data.len() * 4);
        for (&t, &s) in p.template.data.iter().zip(&p.tested.data) {
            let px = match view {
                "template" => copper(t),
                "diff" if t != s => [230, 40, 40, 255],
                "diff" => {
                    let [r, g, b, a] = copper(s);
                    [r / 3, g / 3, b / 3, a]
                }
                _ => copper(s),
            };
            out.extend_from_slice(&px);
        }
        out
    }

    /// Ground truth as `[{class, name, corners: [x1, y1, x2, y2]}]` in pixels.
    pub fn annotations_json(&self) -> String {
        boxes_json(&self.sample.annotations, self.width(), self.height())
    }
}

fn copper(v: u8) -> [u8; 4] {
    if v != 0 {
        [214, 160, 70, 255]
    } else {
        [24, 48, 32, 255]
    }
}

pub fn make_board(seed: u64, size: usize) -> pcb_gpp::Result<Board> {
    let cfg = GeneratorConfig {
        image_size: size,
        seed,
        ..GeneratorConfig::desk_scale()
    };
    cfg.validate()?;
    Ok(Board {
        sample: generate_sample(&cfg, seed, format!("board{seed}"))?,
    })
}

fn boxes_json(anns: &[Annotation], w: usize, h: usize) -> String {
    let v: Vec<_> = anns
        .iter()
        .map(|a| {
            json!({
                "class": a.class_id,
                "name": a.class().map(|c| c.name()).unwrap_or("?"),
                "corners": a.bbox.pixel_corners(w, h),
            })
        })
        .collect();
    serde_json::Value::Array(v).to_string()
}

/// Default boxes the matcher assigns to one ground-truth box drawn in
/// pixel corners on a `size`×`size` image, using the desk-scale model's
/// tiling. Returns `{anchors: [{corners, iou, forced, group}], total}`.
#[wasm_bindgen]
pub fn match_box(x1: f64, y1: f64, x2: f64, y2: f64, size: usize) -> Result<String, JsError> {
    match_box_json(x1, y1, x2, y2, size).map_err(js_err)
}

pub fn match_box_json(x1: f64, y1: f64, x2: f64, y2: f64, size: usize) -> pcb_gpp::Result<String> {
    let det = Detector::<f32>::new(ModelConfig::desk_scale())?;
    let anchors = det.anchors_for(size, size)?;
    let (lo_x, hi_x) = (x1.min(x2), x1.max(x2));
    let (lo_y, hi_y) = (y1.min(y2), y1.max(y2));
    let gt = BBox::from_pixel_corners(
        lo_x,
        lo_y,
        hi_x.max(lo_x + 1.0),
        hi_y.max(lo_y + 1.0),
        size,
        size,
    );
    let m = match_anchors(&anchors, &[Annotation::new(gt, DefectClass::Short)]);
    let matched: Vec<_> = m
        .matched_indices()
        .map(|i| {
            let a = &anchors.anchors[i];
            json!({
                "corners": a.pixel_corners(size, size),
                "iou": iou_unchecked(a, &gt),
                "forced": m.forced[i],
                "group": anchors.group_of[i],
            })
        })
        .collect();
    Ok(json!({ "anchors": matched, "total": anchors.len() }).to_string())
}

/// A detector restored from checkpoint bytes.
#[wasm_bindgen]
pub struct DemoDetector {
    det: Detector<f32>,
}

#[wasm_bindgen]
impl DemoDetector {
    #[wasm_bindgen(constructor)]
    pub fn new(bytes: &[u8]) -> Result<DemoDetector, JsError> {
        let ck = Checkpoint::from_bytes(bytes).map_err(js_err)?;
        Ok(DemoDetector {
            det: ck.detector().map_err(js_err)?,
        })
    }

    /// The model configuration as JSON.
    pub fn config_json(&self) -> String {
        serde_json::to_string(&self.det.config).unwrap_or_default()
    }

    /// Detections on the board as `[{class, name, score, corners}]`.
    pub fn detect(&self, board: &Board, score_threshold: f64) -> Result<String, JsError> {
        detect_json(&self.det, board, score_threshold).map_err(js_err)
    }
}

pub fn detect_json(
    det: &Detector<f32>,
    board: &Board,
    score_threshold: f64,
) -> pcb_gpp::Result<String> {
    let nms = NmsParams {
        score_threshold,
        ..NmsParams::default()
    };
    let dets = det.detect(&board.sample.pair, &nms)?;
    let (w, h) = (board.width(), board.height());
    let v: Vec<_> = dets
        .iter()
        .map(|d| {
            json!({
                "class": d.class_id,
                "name": DefectClass::from_id(d.class_id).map(|c| c.name()).unwrap_or("?"),
                "score": d.score,
                "corners": d.bbox.pixel_corners(w, h),
            })
        })
        .collect();
    Ok(serde_json::Value::Array(v).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn board_views_have_rgba_size() {
        let b = make_board(3, 128).unwrap();
        for view in ["template", "tested", "diff"] {
            assert_eq!(b.rgba(view).len(), 128 * 128 * 4);
        }
        let anns: serde_json::Value = serde_json::from_str(&b.annotations_json()).unwrap();
        assert!(!anns.as_array().unwrap().is_empty());
    }

    #[test]
    fn drawn_box_gets_a_forced_match() {
        let v: serde_json::Value =
            serde_json::from_str(&match_box_json(40.0, 40.0, 52.0, 50.0, 128).unwrap()).unwrap();
        let anchors = v["anchors"].as_array().unwrap();
        assert!(anchors.iter().any(|a| a["forced"] == true));
        assert_eq!(v["total"], 4032);
    }

    #[test]
    fn untrained_checkpoint_detects_something_parseable() {
        let det = Detector::<f32>::new(ModelConfig::desk_scale()).unwrap();
        let bytes = Checkpoint::from_detector(&det, json!({}))
            .to_bytes()
            .unwrap();
        let restored = Checkpoint::from_bytes(&bytes).unwrap().detector().unwrap();
        let b = make_board(4, 128).unwrap();
        let out: serde_json::Value =
            serde_json::from_str(&detect_json(&restored, &b, 0.05).unwrap()).unwrap();
        assert!(out.is_array());
    }
}
