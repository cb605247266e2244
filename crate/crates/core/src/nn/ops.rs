//! Parameter-free tensor operations: pooling, bilinear resampling and
//! channel concatenation, each with its backward pass.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Average,
}

/// Output side of pooling `len` cells with window and stride `s`.
pub fn pooled_len(len: usize, s: usize) -> usize {
    len.div_ceil(s)
}

/// Result of a pooling pass. `argmax` holds, for max pooling, the flat
/// input index that produced each output value.
#[derive(Debug, Clone)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

/// Pools with an `s x s` window and stride `s`. Sizes that are not a
/// multiple of `s` round up; the missing cells replicate the last row or
/// column. Stride 1 returns the input unchanged.
pub fn pool<T: Scalar>(x: &Tensor<T>, s: usize, mode: PoolMode) -> Pooled<T> {
    assert!(s >= 1, "pool stride");
    if s == 1 {
        return Pooled {
            output: x.clone(),
            argmax: Vec::new(),
        };
    }
    let (oh, ow) = (pooled_len(x.h, s), pooled_len(x.w, s));
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let mut argmax = match mode {
        PoolMode::Max => vec![0u32; out.data.len()],
        PoolMode::Average => Vec::new(),
    };
    let inv_area = T::from_f64(1.0 / (s * s) as f64);
    for plane in 0..x.n * x.c {
        let base = plane * x.h * x.w;
        for oy in 0..oh {
            for ox in 0..ow {
                let o = (plane * oh + oy) * ow + ox;
                let mut best = T::ZERO;
                let mut best_idx = usize::MAX;
                let mut sum = T::ZERO;
                for dy in 0..s {
                    let y = (oy * s + dy).min(x.h - 1);
                    for dx in 0..s {
                        let xx = (ox * s + dx).min(x.w - 1);
                        let idx = base + y * x.w + xx;
                        let v = x.data[idx];
                        sum += v;
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                match mode {
                    PoolMode::Max => {
                        out.data[o] = best;
                        argmax[o] = best_idx as u32;
                    }
                    PoolMode::Average => out.data[o] = sum * inv_area,
                }
            }
        }
    }
    Pooled {
        output: out,
        argmax,
    }
}

/// Backward of [`pool`] for the input shape `like`.
pub fn pool_backward<T: Scalar>(
    like: [usize; 4],
    pooled: &Pooled<T>,
    dy: &Tensor<T>,
    s: usize,
    mode: PoolMode,
) -> Tensor<T> {
    if s == 1 {
        return dy.clone();
    }
    let [n, c, h, w] = like;
    let mut dx = Tensor::zeros(n, c, h, w);
    match mode {
        PoolMode::Max => {
            for (&idx, &g) in pooled.argmax.iter().zip(&dy.data) {
                dx.data[idx as usize] += g;
            }
        }
        PoolMode::Average => {
            let (oh, ow) = (dy.h, dy.w);
            let inv_area = T::from_f64(1.0 / (s * s) as f64);
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = dy.data[(plane * oh + oy) * ow + ox] * inv_area;
                        for dyy in 0..s {
                            let y = (oy * s + dyy).min(h - 1);
                            for dxx in 0..s {
                                let xx = (ox * s + dxx).min(w - 1);
                                dx.data[base + y * w + xx] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Linear interpolation taps for corner-aligned resampling of `src` cells
/// onto `dst` cells: `(lower index, upper index, upper weight)`.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize to `(oh, ow)` with corner-aligned sampling: output
/// corners coincide with input corners.
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    if (oh, ow) == (x.h, x.w) {
        return x.clone();
    }
    let ty = taps(x.h, oh);
    let tx = taps(x.w, ow);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    for plane in 0..x.n * x.c {
        let src = &x.data[plane * x.h * x.w..(plane + 1) * x.h * x.w];
        let dst = &mut out.data[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let a = src[y0 * x.w + x0].to_f64();
                let b = src[y0 * x.w + x1].to_f64();
                let c = src[y1 * x.w + x0].to_f64();
                let d = src[y1 * x.w + x1].to_f64();
                let top = a + (b - a) * fx;
                let bottom = c + (d - c) * fx;
                dst[oy * ow + ox] = T::from_f64(top + (bottom - top) * fy);
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`] back to `(h, w)`.
pub fn upsample_bilinear_backward<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    if (dy.h, dy.w) == (h, w) {
        return dy.clone();
    }
    let ty = taps(h, dy.h);
    let tx = taps(w, dy.w);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for plane in 0..dy.n * dy.c {
        let g = &dy.data[plane * dy.h * dy.w..(plane + 1) * dy.h * dy.w];
        let d = &mut dx.data[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * dy.w + ox].to_f64();
                d[y0 * w + x0] += T::from_f64(v * (1.0 - fy) * (1.0 - fx));
                d[y0 * w + x1] += T::from_f64(v * (1.0 - fy) * fx);
                d[y1 * w + x0] += T::from_f64(v * fy * (1.0 - fx));
                d[y1 * w + x1] += T::from_f64(v * fy * fx);
            }
        }
    }
    dx
}

/// Concatenates along channels; all parts share `n`, `h` and `w`.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Tensor<T> {
    let first = &parts[0];
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut out = Tensor::zeros(first.n, c, first.h, first.w);
    for i in 0..first.n {
        let dst = out.image_mut(i);
        let mut at = 0;
        for p in parts {
            assert_eq!(
                (p.n, p.h, p.w),
                (first.n, first.h, first.w),
                "channel concat shape"
            );
            let src = p.image(i);
            dst[at..at + src.len()].copy_from_slice(src);
            at += src.len();
        }
    }
    out
}

/// Inverse of [`concat_channels`] for the given channel counts.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    assert_eq!(channels.iter().sum::<usize>(), x.c, "channel split");
    let hw = x.plane();
    let mut parts: Vec<Tensor<T>> = channels
        .iter()
        .map(|&c| Tensor::zeros(x.n, c, x.h, x.w))
        .collect();
    for i in 0..x.n {
        let src = x.image(i);
        let mut at = 0;
        for p in &mut parts {
            let len = p.c * hw;
            p.image_mut(i).copy_from_slice(&src[at..at + len]);
            at += len;
        }
    }
    parts
}

/// Elementwise accumulation `acc += x`.
pub fn add_assign<T: Scalar>(acc: &mut Tensor<T>, x: &Tensor<T>) {
    assert_eq!(acc.shape(), x.shape(), "shape mismatch in accumulation");
    for (a, &b) in acc.data.iter_mut().zip(&x.data) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(
            n,
            c,
            h,
            w,
            (0..n * c * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn stride_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&mut rng, 1, 2, 5, 5);
        assert_eq!(pool(&x, 1, PoolMode::Max).output, x);
        assert_eq!(pool(&x, 1, PoolMode::Average).output, x);
    }

    #[test]
    fn ceil_division_with_replicate_padding() {
        // 3x3 input, stride 2 -> 2x2; the bottom-right cell sees only x[2][2]
        let x = Tensor::from_vec(1, 1, 3, 3, (1..=9).map(f64::from).collect());
        let m = pool(&x, 2, PoolMode::Max).output;
        assert_eq!(m.data, vec![5.0, 6.0, 8.0, 9.0]);
        let a = pool(&x, 2, PoolMode::Average).output;
        assert_eq!(a.data, vec![3.0, 4.5, 7.5, 9.0]);
        assert_eq!(pooled_len(32, 12), 3);
    }

    #[test]
    fn constant_map_stays_constant() {
        let x = Tensor::from_vec(1, 2, 32, 32, vec![0.37f64; 2 * 32 * 32]);
        for s in [1, 2, 4, 8, 12] {
            for mode in [PoolMode::Max, PoolMode::Average] {
                let p = pool(&x, s, mode).output;
                let u = upsample_bilinear(&p, 32, 32);
                assert!(p
                    .data
                    .iter()
                    .chain(&u.data)
                    .all(|&v| (v - 0.37).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn upsample_hits_corners() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let u = upsample_bilinear(&x, 3, 3);
        assert_eq!(u.data, vec![0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);
    }

    /// `<up(x), g> == <x, up^T(g)>` for the resampling adjoint.
    #[test]
    fn upsample_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (h, w, oh, ow) in [(3, 3, 8, 8), (1, 1, 4, 4), (3, 2, 7, 5)] {
            let x = random(&mut rng, 2, 2, h, w);
            let g = random(&mut rng, 2, 2, oh, ow);
            let lhs = dot(&upsample_bilinear(&x, oh, ow), &g);
            let rhs = dot(&x, &upsample_bilinear_backward(&g, h, w));
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn pool_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 1, 2, 7, 5);
        for s in [2, 3, 4] {
            for mode in [PoolMode::Max, PoolMode::Average] {
                let p = pool(&x, s, mode);
                let g = random(&mut rng, 1, 2, p.output.h, p.output.w);
                let dx = pool_backward(x.shape(), &p, &g, s, mode);
                // both modes are (locally) linear, so the adjoint identity holds
                assert!(
                    (dot(&p.output, &g) - dot(&x, &dx)).abs() < 1e-10,
                    "{mode:?} stride {s}"
                );
            }
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, 2, 1, 3, 3);
        let b = random(&mut rng, 2, 3, 3, 3);
        let cat = concat_channels(&[a.clone(), b.clone()]);
        assert_eq!(cat.c, 4);
        assert_eq!(cat.at(1, 2, 1, 1), b.at(1, 1, 1, 1));
        assert_eq!(split_channels(&cat, &[1, 3]), vec![a, b]);
    }
}
