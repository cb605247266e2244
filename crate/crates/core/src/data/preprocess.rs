//! Binarization and residual-translation alignment.

use super::Raster;

/// Maps every pixel to 1 if its intensity is at least `threshold`, else 0.
pub fn binarize(image: &Raster, threshold: u8) -> Raster {
    Raster {
        width: image.width,
        height: image.height,
        data: image
            .data
            .iter()
            .map(|&v| u8::from(v >= threshold))
            .collect(),
    }
}

/// Otsu's threshold for an 8-bit image: the level maximizing between-class
/// variance, returned as the smallest intensity of the upper class. Flat
/// images get 128.
pub fn otsu_threshold(image: &Raster) -> u8 {
    let mut hist = [0u64; 256];
    for &v in &image.data {
        hist[v as usize] += 1;
    }
    let total = image.data.len() as f64;
    if total == 0.0 {
        return 128;
    }
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best_t, mut best_var) = (0usize, -1.0);
    for t in 0..255usize {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    if best_var < 0.0 {
        // a flat image has no split; fall back to mid-range
        return 128;
    }
    (best_t + 1) as u8
}

/// Number of pixels where `template` and `tested` shifted by `(dx, dy)`
/// disagree, over the region where both are defined.
fn disagreement(template: &Raster, tested: &Raster, dx: i64, dy: i64) -> u64 {
    let (w, h) = (template.width as i64, template.height as i64);
    let (x0, x1) = (dx.max(0), (w + dx).min(w));
    let (y0, y1) = (dy.max(0), (h + dy).min(h));
    let mut count = 0u64;
    for y in y0..y1 {
        let trow = &template.data[(y * w) as usize..((y + 1) * w) as usize];
        let srow = &tested.data[((y - dy) * w) as usize..((y - dy + 1) * w) as usize];
        let t = &trow[x0 as usize..x1 as usize];
        let s = &srow[(x0 - dx) as usize..(x1 - dx) as usize];
        count += t.iter().zip(s).filter(|(a, b)| a != b).count() as u64;
    }
    count
}

/// Applies a translation with replicate padding: `out(x, y) = src(x - dx, y - dy)`.
pub fn shift(src: &Raster, dx: i64, dy: i64) -> Raster {
    let (w, h) = (src.width as i64, src.height as i64);
    let mut out = Raster::new(src.width, src.height);
    for y in 0..h {
        let sy = (y - dy).clamp(0, h - 1);
        for x in 0..w {
            let sx = (x - dx).clamp(0, w - 1);
            out.data[(y * w + x) as usize] = src.data[(sy * w + sx) as usize];
        }
    }
    out
}

/// Finds the integer translation in `[-max_shift, max_shift]^2` that best
/// aligns `tested` to `template` and returns the shifted tested image with
/// the chosen `(dx, dy)`.
///
/// Ties prefer the smaller shift magnitude, then smaller `dy`, then `dx`.
pub fn align(
    template: &Raster,
    tested: &Raster,
    max_shift: usize,
) -> crate::Result<(Raster, (i64, i64))> {
    if !template.same_shape(tested) {
        return Err(crate::Error::InvalidInput(
            "align needs rasters of equal size".into(),
        ));
    }
    let m = max_shift
        .min(template.width.saturating_sub(1))
        .min(template.height.saturating_sub(1)) as i64;
    let mut best = (u64::MAX, i64::MAX, 0i64, 0i64);
    for dy in -m..=m {
        for dx in -m..=m {
            let d = disagreement(template, tested, dx, dy);
            let key = (d, dx.abs() + dy.abs(), dy, dx);
            if key < best {
                best = key;
            }
        }
    }
    let (dx, dy) = (best.3, best.2);
    Ok((shift(tested, dx, dy), (dx, dy)))
}
