//! Finite-difference check of the full training gradient on the tiny
//! configuration, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_backward, batch_loss, ImageTargets};
use crate::data::{Annotation, DefectClass};
use crate::error::Result;
use crate::geometry::BBox;
use crate::loss::sample_background;
use crate::model::{Detector, ModelConfig};
use crate::nn::Tensor;
use crate::targets::match_anchors;

#[derive(Debug, Clone)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    /// Central differences, one per requested step.
    pub numeric: Vec<f64>,
}

impl GradSample {
    pub fn rel_error(&self, step: usize) -> f64 {
        let n = self.numeric[step];
        (n - self.analytic).abs() / n.abs().max(self.analytic.abs()).max(1e-4)
    }
}

/// Samples `count` trainable parameters uniformly over all trainable
/// scalars and compares their analytic gradient with central
/// differences at each of `steps`.
pub fn gradient_check(
    config: ModelConfig,
    count: usize,
    steps: &[f64],
    seed: u64,
) -> Result<Vec<GradSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.input_size;
    let mut det = Detector::<f32>::new(config)?.cast::<f64>();
    // two pairs of binary images: both templates, then both tested
    let input = Tensor::from_vec(
        4,
        1,
        size,
        size,
        (0..4 * size * size)
            .map(|_| rng.random_range(0..2) as f64)
            .collect(),
    );
    let anchors = det.anchors_for(size, size)?;
    let gts = [
        vec![
            Annotation::new(BBox::new(0.3, 0.3, 0.06, 0.05), DefectClass::Short),
            Annotation::new(BBox::new(0.7, 0.6, 0.15, 0.1), DefectClass::Spur),
        ],
        vec![Annotation::new(
            BBox::new(0.5, 0.5, 0.3, 0.2),
            DefectClass::PinHole,
        )],
    ];
    let targets: Vec<ImageTargets> = gts
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let matched = match_anchors(&anchors, g);
            let background = sample_background(&matched, seed + i as u64);
            ImageTargets {
                matched,
                background,
            }
        })
        .collect();

    det.zero_grad();
    batch_backward(&mut det, input.clone(), &targets, 1.0)?;
    let flat: Vec<(usize, usize)> = det
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind.is_trainable())
        .flat_map(|(i, p)| (0..p.value.len()).map(move |k| (i, k)))
        .collect();

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (pi, k) = flat[rng.random_range(0..flat.len())];
        let eval_at = |delta: f64| -> Result<f64> {
            let mut d = det.clone();
            d.params_mut()[pi].value[k] += delta;
            Ok(batch_loss(&mut d, input.clone(), &targets, 1.0)?.total)
        };
        let mut numeric = Vec::with_capacity(steps.len());
        for &h in steps {
            numeric.push((eval_at(h)? - eval_at(-h)?) / (2.0 * h));
        }
        let p = &det.params()[pi];
        out.push(GradSample {
            name: p.name.clone(),
            index: k,
            analytic: p.grad[k],
            numeric,
        });
    }
    Ok(out)
}
