//! Parameterized layers: 3x3 convolution, batch normalization and the
//! conv-BN-ReLU block.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::debug_check_finite;
use super::{Scalar, Tensor};

/// Role of a named tensor; decides optimizer treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    NormScale,
    NormShift,
    /// Batch-norm running statistics: persisted but not optimized.
    RunningStat,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        self != ParamKind::RunningStat
    }

    /// Only convolution weights receive weight decay.
    pub fn decays(self) -> bool {
        self == ParamKind::ConvWeight
    }
}

/// A named parameter tensor with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, kind: ParamKind, value: Vec<T>) -> Self {
        let len = shape.iter().product();
        assert_eq!(value.len(), len, "param value length");
        Self {
            name: name.into(),
            shape,
            kind,
            grad: vec![T::ZERO; len],
            value,
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, kind: ParamKind, v: T) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, kind, vec![v; len])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::ZERO);
    }
}

/// Fills `cols` (`(c * 9) x (h * w)`) with the zero-padded 3x3
/// neighbourhoods of one `c x h x w` image.
fn im2col<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::ZERO;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients into an image.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `out_ch x (in_ch * 9)`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// Weights drawn from `N(0, gain / fan_in)`, bias zero.
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        bias: bool,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_ch * 9) as f64;
        let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("valid std");
        let value = (0..out_ch * in_ch * 9)
            .map(|_| T::from_f64(normal.sample(rng)))
            .collect();
        Self {
            in_ch,
            out_ch,
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_ch, in_ch, 3, 3],
                ParamKind::ConvWeight,
                value,
            ),
            bias: bias.then(|| {
                Param::filled(
                    format!("{name}.bias"),
                    vec![out_ch],
                    ParamKind::Bias,
                    T::ZERO,
                )
            }),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.in_ch * 9;
        let mut out = Tensor::zeros(x.n, self.out_ch, h, w);
        let mut cols = vec![T::ZERO; k * hw];
        for i in 0..x.n {
            im2col(x.image(i), self.in_ch, h, w, &mut cols);
            let o = out.image_mut(i);
            T::gemm(
                self.out_ch,
                k,
                hw,
                T::ONE,
                &self.weight.value,
                (k as isize, 1),
                &cols,
                (hw as isize, 1),
                T::ZERO,
                o,
                (hw as isize, 1),
            );
            if let Some(b) = &self.bias {
                for (co, &bv) in b.value.iter().enumerate() {
                    o[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        debug_check_finite(&out, "conv");
        out
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let k = self.in_ch * 9;
        let mut cols = vec![T::ZERO; k * hw];
        let mut dcols = vec![T::ZERO; k * hw];
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.n, x.c, h, w));
        for i in 0..x.n {
            let g = dy.image(i);
            im2col(x.image(i), self.in_ch, h, w, &mut cols);
            // dW += dY * cols^T
            T::gemm(
                self.out_ch,
                hw,
                k,
                T::ONE,
                g,
                (hw as isize, 1),
                &cols,
                (1, hw as isize),
                T::ONE,
                &mut self.weight.grad,
                (k as isize, 1),
            );
            if let Some(b) = &mut self.bias {
                for (co, bg) in b.grad.iter_mut().enumerate() {
                    let mut s = T::ZERO;
                    for &v in &g[co * hw..(co + 1) * hw] {
                        s += v;
                    }
                    *bg += s;
                }
            }
            if let Some(dx) = dx.as_mut() {
                // dcols = W^T * dY
                T::gemm(
                    k,
                    self.out_ch,
                    hw,
                    T::ONE,
                    &self.weight.value,
                    (1, k as isize),
                    g,
                    (hw as isize, 1),
                    T::ZERO,
                    &mut dcols,
                    (hw as isize, 1),
                );
                col2im(&dcols, self.in_ch, h, w, dx.image_mut(i));
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref())
    }
}

/// Per-channel batch normalization over `N x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved activations of a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<f64>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(
                format!("{name}.gamma"),
                vec![channels],
                ParamKind::NormScale,
                T::ONE,
            ),
            beta: Param::filled(
                format!("{name}.beta"),
                vec![channels],
                ParamKind::NormShift,
                T::ZERO,
            ),
            running_mean: Param::filled(
                format!("{name}.running_mean"),
                vec![channels],
                ParamKind::RunningStat,
                T::ZERO,
            ),
            running_var: Param::filled(
                format!("{name}.running_var"),
                vec![channels],
                ParamKind::RunningStat,
                T::ONE,
            ),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Normalizes with batch statistics and updates the running averages.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let (n, c, hw) = (x.n, x.c, x.plane());
        assert_eq!(c, self.channels(), "batch norm channels");
        let count = (n * hw) as f64;
        let mut xhat = Tensor::zeros(n, c, x.h, x.w);
        let mut y = Tensor::zeros(n, c, x.h, x.w);
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            for i in 0..n {
                for &v in &x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    sum += v.to_f64();
                }
            }
            let mean = sum / count;
            let mut var = 0.0;
            for i in 0..n {
                for &v in &x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    let d = v.to_f64() - mean;
                    var += d * d;
                }
            }
            var /= count;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            let (g, b) = (self.gamma.value[ch].to_f64(), self.beta.value[ch].to_f64());
            for i in 0..n {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for ((xh, yv), &v) in xhat.data[r.clone()]
                    .iter_mut()
                    .zip(&mut y.data[r.clone()])
                    .zip(&x.data[r])
                {
                    let z = (v.to_f64() - mean) * istd;
                    *xh = T::from_f64(z);
                    *yv = T::from_f64(g * z + b);
                }
            }
            let m = self.momentum;
            let unbiased = if count > 1.0 {
                var * count / (count - 1.0)
            } else {
                var
            };
            let rm = &mut self.running_mean.value[ch];
            *rm = T::from_f64((1.0 - m) * rm.to_f64() + m * mean);
            let rv = &mut self.running_var.value[ch];
            *rv = T::from_f64((1.0 - m) * rv.to_f64() + m * unbiased);
        }
        debug_check_finite(&y, "batch norm");
        (y, BnCache { xhat, inv_std })
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let (c, hw) = (x.c, x.plane());
        let mut y = x.clone();
        for ch in 0..c {
            let istd = 1.0 / (self.running_var.value[ch].to_f64() + self.eps).sqrt();
            let scale = self.gamma.value[ch].to_f64() * istd;
            let shift = self.beta.value[ch].to_f64() - self.running_mean.value[ch].to_f64() * scale;
            let (scale, shift) = (T::from_f64(scale), T::from_f64(shift));
            for i in 0..x.n {
                for v in &mut y.data[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        debug_check_finite(&y, "batch norm");
        y
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (n, c, hw) = (dy.n, dy.c, dy.plane());
        let count = (n * hw) as f64;
        let mut dx = Tensor::zeros(n, c, dy.h, dy.w);
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for i in 0..n {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for (&g, &xh) in dy.data[r.clone()].iter().zip(&cache.xhat.data[r]) {
                    sum_dy += g.to_f64();
                    sum_dy_xhat += g.to_f64() * xh.to_f64();
                }
            }
            self.gamma.grad[ch] += T::from_f64(sum_dy_xhat);
            self.beta.grad[ch] += T::from_f64(sum_dy);
            let k = self.gamma.value[ch].to_f64() * cache.inv_std[ch] / count;
            for i in 0..n {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for ((d, &g), &xh) in dx.data[r.clone()]
                    .iter_mut()
                    .zip(&dy.data[r.clone()])
                    .zip(&cache.xhat.data[r])
                {
                    *d = T::from_f64(k * (count * g.to_f64() - sum_dy - xh.to_f64() * sum_dy_xhat));
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        [
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
        .into_iter()
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        [
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
        ]
        .into_iter()
    }
}

/// Convolution (no bias) followed by batch normalization and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnRelu<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

/// Saved activations of a [`ConvBnRelu`] training pass.
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    pub input: Tensor<T>,
    pub bn: BnCache<T>,
    pub output: Tensor<T>,
}

fn relu_in_place<T: Scalar>(t: &mut Tensor<T>) {
    for v in &mut t.data {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(&format!("{name}.conv"), in_ch, out_ch, false, 2.0, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), out_ch),
        }
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
        let z = self.conv.forward(&x);
        let (mut y, bn) = self.bn.forward_train(&z);
        relu_in_place(&mut y);
        let cache = BlockCache {
            input: x,
            bn,
            output: y.clone(),
        };
        (y, cache)
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let z = self.conv.forward(x);
        let mut y = self.bn.forward_eval(&z);
        relu_in_place(&mut y);
        y
    }

    pub fn backward(
        &mut self,
        cache: &BlockCache<T>,
        mut dy: Tensor<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        for (g, &y) in dy.data.iter_mut().zip(&cache.output.data) {
            if y <= T::ZERO {
                *g = T::ZERO;
            }
        }
        let dz = self.bn.backward(&cache.bn, &dy);
        self.conv.backward(&cache.input, &dz, need_input_grad)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.conv.params_mut().chain(self.bn.params_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.conv.params().chain(self.bn.params())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct 3x3 convolution as the reference for the im2col route.
    fn naive_conv(x: &Tensor<f64>, conv: &Conv2d<f64>) -> Tensor<f64> {
        let mut out = Tensor::zeros(x.n, conv.out_ch, x.h, x.w);
        for n in 0..x.n {
            for co in 0..conv.out_ch {
                for y in 0..x.h {
                    for xx in 0..x.w {
                        let mut s = conv.bias.as_ref().map_or(0.0, |b| b.value[co]);
                        for ci in 0..conv.in_ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (sy, sx) = (
                                        y as isize + ky as isize - 1,
                                        xx as isize + kx as isize - 1,
                                    );
                                    if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize
                                    {
                                        continue;
                                    }
                                    s += conv.weight.value
                                        [((co * conv.in_ch + ci) * 3 + ky) * 3 + kx]
                                        * x.at(n, ci, sy as usize, sx as usize);
                                }
                            }
                        }
                        out.data[((n * conv.out_ch + co) * x.h + y) * x.w + xx] = s;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(
            shape[0],
            shape[1],
            shape[2],
            shape[3],
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::new("c", 3, 4, true, 2.0, &mut rng);
        conv.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3, 0.0];
        let x = random_tensor(&mut rng, [2, 3, 5, 6]);
        let a = conv.forward(&x);
        let b = naive_conv(&x, &conv);
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    /// Finite differences of `sum(dy * f(x))` against the analytic backward.
    #[test]
    fn conv_and_bn_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut block = ConvBnRelu::<f64>::new("b", 2, 3, &mut rng);
        let x = random_tensor(&mut rng, [2, 2, 4, 5]);
        let dy = random_tensor(&mut rng, [2, 3, 4, 5]);
        let objective = |blk: &mut ConvBnRelu<f64>, x: &Tensor<f64>| {
            let (y, _) = blk.forward_train(x.clone());
            y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = block.forward_train(x.clone());
        let dx = block.backward(&cache, dy.clone(), true).unwrap();
        let h = 1e-6;
        for idx in [0, 7, 19, 33] {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let fd = (objective(&mut block.clone(), &xp) - objective(&mut block.clone(), &xm))
                / (2.0 * h);
            assert!(
                (fd - dx.data[idx]).abs() < 1e-6 * (1.0 + fd.abs()),
                "dx[{idx}]: {fd} vs {}",
                dx.data[idx]
            );
        }
        for idx in [0, 5, 20, 53] {
            let mut bp = block.clone();
            bp.conv.weight.value[idx] += h;
            let mut bm = block.clone();
            bm.conv.weight.value[idx] -= h;
            let fd = (objective(&mut bp, &x) - objective(&mut bm, &x)) / (2.0 * h);
            let an = block.conv.weight.grad[idx];
            assert!(
                (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                "dw[{idx}]: {fd} vs {an}"
            );
        }
        for ch in 0..3 {
            let mut bp = block.clone();
            bp.bn.gamma.value[ch] += h;
            let mut bm = block.clone();
            bm.bn.gamma.value[ch] -= h;
            let fd = (objective(&mut bp, &x) - objective(&mut bm, &x)) / (2.0 * h);
            assert!((fd - block.bn.gamma.grad[ch]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new("n", 1);
        bn.running_mean.value[0] = 2.0;
        bn.running_var.value[0] = 4.0 - 1e-5;
        bn.gamma.value[0] = 3.0;
        bn.beta.value[0] = 1.0;
        let x = Tensor::from_vec(1, 1, 1, 2, vec![2.0, 4.0]);
        let y = bn.forward_eval(&x);
        assert!((y.data[0] - 1.0).abs() < 1e-12);
        assert!((y.data[1] - 4.0).abs() < 1e-9);
    }
}
