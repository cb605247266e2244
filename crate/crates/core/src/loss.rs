//! Smooth-L1 box regression plus softmax classification over matched
//! anchors and a random 3:1 sample of background anchors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{softmax, AnchorOutputs, NUM_CLASSES};
use crate::targets::{MatchResult, Offsets};

/// Probabilities are clamped to this before taking logs.
pub const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the regression term.
    pub reg_weight: f64,
    /// Background anchors sampled per matched anchor.
    pub bg_ratio: usize,
    /// Background anchors sampled from an image without any match.
    pub bg_floor: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            reg_weight: 1.0,
            bg_ratio: 3,
            bg_floor: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Unnormalized sum of smooth-L1 terms.
    pub regression: f64,
    /// Unnormalized sum of negative log probabilities.
    pub classification: f64,
    /// `(classification + reg_weight * regression) / max(num_matched, 1)`.
    pub total: f64,
    pub num_matched: usize,
    pub num_bg_sampled: usize,
}

impl LossBreakdown {
    /// Sums the parts of several images and renormalizes by their joint
    /// match count.
    pub fn combine(parts: &[LossBreakdown], reg_weight: f64) -> LossBreakdown {
        let mut out = LossBreakdown::default();
        for p in parts {
            out.regression += p.regression;
            out.classification += p.classification;
            out.num_matched += p.num_matched;
            out.num_bg_sampled += p.num_bg_sampled;
        }
        out.total =
            (out.classification + reg_weight * out.regression) / out.num_matched.max(1) as f64;
        out
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Sum of smooth-L1 over the four offset components of matched anchors.
pub fn regression_loss(predicted: &[Offsets], m: &MatchResult) -> f64 {
    m.matched_indices()
        .map(|i| {
            (0..4)
                .map(|k| smooth_l1(predicted[i][k] - m.regression_targets[i][k]))
                .sum::<f64>()
        })
        .sum()
}

/// Uniform sample without replacement of `min(3 * matched, backgrounds)`
/// background anchors, or `min(16, backgrounds)` when nothing matched.
pub fn sample_background(m: &MatchResult, seed: u64) -> Vec<usize> {
    sample_background_with(m, seed, &LossConfig::default())
}

/// [`sample_background`] with explicit ratio and floor. Indices ascend.
pub fn sample_background_with(m: &MatchResult, seed: u64, cfg: &LossConfig) -> Vec<usize> {
    let bg: Vec<usize> = m.background_indices().collect();
    let matched = m.num_matched();
    let want = if matched == 0 {
        cfg.bg_floor
    } else {
        cfg.bg_ratio * matched
    };
    let k = want.min(bg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = rand::seq::index::sample(&mut rng, bg.len(), k)
        .into_iter()
        .map(|i| bg[i])
        .collect();
    out.sort_unstable();
    out
}

fn neg_log(p: f64) -> f64 {
    -p.max(MIN_PROB).ln()
}

/// Negative log softmax probability of the assigned class over matched
/// anchors plus that of background over the sampled anchors.
pub fn classification_loss(
    logits: &[[f64; NUM_CLASSES]],
    m: &MatchResult,
    bg_sample: &[usize],
) -> f64 {
    let fg: f64 = m
        .matched_indices()
        .map(|i| neg_log(softmax(&logits[i])[m.matched_class_of[i] as usize]))
        .sum();
    let bg: f64 = bg_sample
        .iter()
        .map(|&i| neg_log(softmax(&logits[i])[0]))
        .sum();
    fg + bg
}

pub fn total_loss(
    out: &AnchorOutputs,
    m: &MatchResult,
    bg_sample: &[usize],
    reg_weight: f64,
) -> LossBreakdown {
    let regression = regression_loss(&out.offsets, m);
    let classification = classification_loss(&out.logits, m, bg_sample);
    let num_matched = m.num_matched();
    LossBreakdown {
        regression,
        classification,
        total: (classification + reg_weight * regression) / num_matched.max(1) as f64,
        num_matched,
        num_bg_sampled: bg_sample.len(),
    }
}

/// Gradient of `scale * (classification + reg_weight * regression)` with
/// respect to every anchor output; anchors outside the loss get zeros.
pub fn loss_gradient(
    out: &AnchorOutputs,
    m: &MatchResult,
    bg_sample: &[usize],
    reg_weight: f64,
    scale: f64,
) -> AnchorOutputs {
    let mut g = AnchorOutputs::zeros(out.len());
    let mut add_cls = |i: usize, class: usize| {
        let p = softmax(&out.logits[i]);
        for k in 0..NUM_CLASSES {
            let onehot = if k == class { 1.0 } else { 0.0 };
            g.logits[i][k] += scale * (p[k] - onehot);
        }
    };
    for i in m.matched_indices() {
        add_cls(i, m.matched_class_of[i] as usize);
    }
    for &i in bg_sample {
        add_cls(i, 0);
    }
    for i in m.matched_indices() {
        for k in 0..4 {
            g.offsets[i][k] =
                scale * reg_weight * smooth_l1_grad(out.offsets[i][k] - m.regression_targets[i][k]);
        }
    }
    g
}
