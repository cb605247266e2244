//! Paired flip-and-crop augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{clip_box, BBox};

use super::{Annotation, ImagePair};

/// Minimum fraction of a box's area that must survive the crop.
pub const MIN_KEPT_AREA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub crop_size: usize,
    /// Probability of each of the horizontal and vertical flips.
    pub flip_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            crop_size: 512,
            flip_prob: 0.5,
        }
    }
}

/// Flips both images identically, takes the same random square crop from
/// both and moves the boxes along. Boxes keeping less than a quarter of their
/// area are dropped, the rest are clipped to the crop.
pub fn augment_pair(
    pair: &ImagePair,
    annotations: &[Annotation],
    seed: u64,
    params: &AugmentParams,
) -> Result<(ImagePair, Vec<Annotation>)> {
    let (w, h) = (pair.width(), pair.height());
    let c = params.crop_size;
    if c == 0 || c > w || c > h {
        return Err(Error::InvalidConfig(format!(
            "crop {c} does not fit a {w}x{h} image"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hflip = rng.random_bool(params.flip_prob.clamp(0.0, 1.0));
    let vflip = rng.random_bool(params.flip_prob.clamp(0.0, 1.0));
    let x0 = rng.random_range(0..=w - c);
    let y0 = rng.random_range(0..=h - c);

    let transform = |r: &super::Raster| -> Result<super::Raster> {
        let mut r = r.clone();
        if hflip {
            r = r.flip_horizontal();
        }
        if vflip {
            r = r.flip_vertical();
        }
        r.crop(x0, y0, c, c)
    };
    let template = transform(&pair.template)?;
    let tested = transform(&pair.tested)?;

    let mut out = Vec::with_capacity(annotations.len());
    for a in annotations {
        let mut b = a.bbox;
        if hflip {
            b.cx = 1.0 - b.cx;
        }
        if vflip {
            b.cy = 1.0 - b.cy;
        }
        let [x1, y1, x2, y2] = b.pixel_corners(w, h);
        let moved = BBox::from_pixel_corners(
            x1 - x0 as f64,
            y1 - y0 as f64,
            x2 - x0 as f64,
            y2 - y0 as f64,
            c,
            c,
        );
        let Ok(clipped) = clip_box(&moved) else {
            continue;
        };
        if clipped.area() >= MIN_KEPT_AREA * moved.area() {
            out.push(Annotation {
                bbox: clipped,
                class_id: a.class_id,
            });
        }
    }
    Ok((
        ImagePair::new(template, tested, pair.source_id.clone())?,
        out,
    ))
}
