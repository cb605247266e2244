//! The siamese detector: shared backbone, feature difference, group pyramid
//! pooling and one prediction head per scale group.
//!
//! Head channel layout (part of the checkpoint contract): for every ratio
//! `r` in anchor order the head emits 7 class logits followed by 4 box
//! offsets, so channel `r * 11 + k` holds value `k` of ratio `r`.

pub mod checkpoint;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::{generate_anchors_anisotropic, AnchorSet, DEFAULT_RATIOS, DEFAULT_SCALES};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::geometry::{nms, DetectionSet, NmsParams, ScoredBox};
use crate::nn::layers::BlockCache;
use crate::nn::ops::{
    add_assign, concat_channels, pool, pool_backward, pooled_len, split_channels,
    upsample_bilinear, upsample_bilinear_backward, PoolMode, Pooled,
};
use crate::nn::{Conv2d, ConvBnRelu, Param, Scalar, Tensor};
use crate::targets::{decode_clipped, Offsets};

/// Background plus the six defect classes.
pub const NUM_CLASSES: usize = 7;
/// Values per anchor slot: class logits then offsets.
pub const SLOT_LEN: usize = NUM_CLASSES + 4;

/// Network shape. GPP groups list stride values, each of which must appear
/// in `gpp_pool_strides`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Reference crop side; anchor scales are fractions of it.
    pub input_size: usize,
    /// Width of each backbone stage; every stage ends in 2x2 max pooling.
    pub backbone_channels: Vec<usize>,
    pub convs_per_stage: usize,
    pub gpp_pool_strides: Vec<usize>,
    pub gpp_groups: Vec<Vec<usize>>,
    pub pool_mode: PoolMode,
    pub num_classes: usize,
    pub fuse_channels: usize,
    /// One box side per group.
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 512,
            backbone_channels: vec![32, 64, 128, 256],
            convs_per_stage: 2,
            gpp_pool_strides: vec![1, 2, 4, 8, 12],
            gpp_groups: vec![vec![1, 2, 4], vec![2, 4, 8], vec![4, 8, 12]],
            pool_mode: PoolMode::Max,
            num_classes: NUM_CLASSES,
            fuse_channels: 256,
            anchor_scales: DEFAULT_SCALES.to_vec(),
            anchor_ratios: DEFAULT_RATIOS.to_vec(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small network for CPU runs on 128 px crops: two stages, `/4`
    /// stride, so the default strides still leave 32, 16 and 8 cell grids.
    pub fn desk_scale() -> Self {
        Self {
            input_size: 128,
            backbone_channels: vec![8, 16],
            fuse_channels: 16,
            ..Self::default()
        }
    }

    /// The configuration used by the gradient check: 64 px input, four
    /// stages, and strides that fit the resulting 4x4 map.
    pub fn tiny() -> Self {
        Self {
            input_size: 64,
            backbone_channels: vec![4, 8, 8, 8],
            fuse_channels: 8,
            gpp_pool_strides: vec![1, 2, 4],
            gpp_groups: vec![vec![1, 2, 4], vec![2, 4], vec![4]],
            ..Self::default()
        }
    }

    /// Total backbone downsampling factor.
    pub fn backbone_stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    pub fn head_channels(&self) -> usize {
        self.anchor_ratios.len() * SLOT_LEN
    }

    /// Distinct strides used by at least one group, ascending.
    pub fn used_strides(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.gpp_groups.iter().flatten().copied().collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes != NUM_CLASSES {
            return bad(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            ));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone_channels must be non-empty and positive".into());
        }
        if self.convs_per_stage == 0 || self.fuse_channels == 0 {
            return bad("convs_per_stage and fuse_channels must be positive".into());
        }
        if self.gpp_groups.is_empty() {
            return bad("at least one GPP group is required".into());
        }
        for g in &self.gpp_groups {
            if g.is_empty() {
                return bad("GPP groups must not be empty".into());
            }
            if let Some(s) = g.iter().find(|s| !self.gpp_pool_strides.contains(s)) {
                return bad(format!(
                    "group stride {s} is not in gpp_pool_strides {:?}",
                    self.gpp_pool_strides
                ));
            }
            if g.iter().any(|&s| s < g[0]) {
                return bad(format!("group {g:?} must start with its smallest stride"));
            }
        }
        if self.gpp_pool_strides.contains(&0) {
            return bad("pool strides must be positive".into());
        }
        if self.anchor_scales.len() != self.gpp_groups.len() {
            return bad(format!(
                "{} anchor scales for {} groups",
                self.anchor_scales.len(),
                self.gpp_groups.len()
            ));
        }
        if self.input_size == 0 || self.input_size % self.backbone_stride() != 0 {
            return bad(format!(
                "input_size {} is not divisible by the backbone stride {}",
                self.input_size,
                self.backbone_stride()
            ));
        }
        let feat = self.input_size / self.backbone_stride();
        if let Some(&s) = self.used_strides().iter().find(|&&s| s > feat) {
            return bad(format!(
                "pool stride {s} exceeds the {feat}x{feat} feature map"
            ));
        }
        // Validates ratios and scale ordering.
        self.grid_dims(feat, feat)
            .and_then(|dims| {
                generate_anchors_anisotropic(
                    &dims,
                    &self.anchor_scales,
                    &self.anchor_scales,
                    &self.anchor_ratios,
                )
            })
            .map(|_| ())
    }

    /// Prediction grid of every group for a feature map of `fh x fw`.
    pub fn grid_dims(&self, fh: usize, fw: usize) -> Result<Vec<(usize, usize)>> {
        if let Some(&s) = self.used_strides().iter().find(|&&s| s > fh.min(fw)) {
            return Err(Error::InvalidConfig(format!(
                "pool stride {s} exceeds the {fh}x{fw} feature map"
            )));
        }
        Ok(self
            .gpp_groups
            .iter()
            .map(|g| (pooled_len(fh, g[0]), pooled_len(fw, g[0])))
            .collect())
    }
}

/// Named ablation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "ours-MP")]
    OursMp,
    #[serde(rename = "ours-AP")]
    OursAp,
    #[serde(rename = "non-GPP")]
    NonGpp,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::OursMp, Preset::OursAp, Preset::NonGpp];

    pub fn name(self) -> &'static str {
        match self {
            Preset::OursMp => "ours-MP",
            Preset::OursAp => "ours-AP",
            Preset::NonGpp => "non-GPP",
        }
    }

    /// Applies the preset's pooling mode and grouping to `base`.
    ///
    /// `non-GPP` keeps one stride per group: the first, middle and last of
    /// the base stride set (1, 4 and 12 by default) with max pooling.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Preset::OursMp => c.pool_mode = PoolMode::Max,
            Preset::OursAp => c.pool_mode = PoolMode::Average,
            Preset::NonGpp => {
                c.pool_mode = PoolMode::Max;
                let s = &base.gpp_pool_strides;
                let n = base.gpp_groups.len();
                c.gpp_groups = (0..n)
                    .map(|g| {
                        let idx = if n == 1 {
                            0
                        } else {
                            g * (s.len() - 1) / (n - 1)
                        };
                        vec![s[idx]]
                    })
                    .collect();
            }
        }
        c
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown preset {s:?}; expected ours-MP, ours-AP or non-GPP"
                ))
            })
    }
}

/// Per-anchor logits and offsets of one image, in anchor order. Also used
/// for the matching gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorOutputs {
    pub logits: Vec<[f64; NUM_CLASSES]>,
    pub offsets: Vec<Offsets>,
}

impl AnchorOutputs {
    pub fn zeros(len: usize) -> Self {
        Self {
            logits: vec![[0.0; NUM_CLASSES]; len],
            offsets: vec![[0.0; 4]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|l| (l - max).exp());
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

/// Elementwise `f_template - f_tested`.
pub fn feature_difference<T: Scalar>(
    f_template: &Tensor<T>,
    f_tested: &Tensor<T>,
) -> Result<Tensor<T>> {
    if f_template.shape() != f_tested.shape() {
        return Err(Error::InvalidInput(format!(
            "feature shapes differ: {:?} vs {:?}",
            f_template.shape(),
            f_tested.shape()
        )));
    }
    Ok(f_template.sub(f_tested))
}

/// Activations kept by a training forward pass.
#[derive(Debug)]
pub struct TrainCache<T> {
    batch: usize,
    stages: Vec<StageCache<T>>,
    diff_shape: [usize; 4],
    pooled: BTreeMap<usize, Pooled<T>>,
    groups: Vec<GroupCache<T>>,
}

#[derive(Debug)]
struct StageCache<T> {
    blocks: Vec<BlockCache<T>>,
    pre_pool_shape: [usize; 4],
    pooled: Pooled<T>,
}

#[derive(Debug)]
struct GroupCache<T> {
    fuse: BlockCache<T>,
    head_input: Tensor<T>,
}

/// Detector parameters and configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector<T> {
    pub config: ModelConfig,
    /// `convs_per_stage` blocks per stage, in order.
    pub backbone: Vec<ConvBnRelu<T>>,
    pub fuse: Vec<ConvBnRelu<T>>,
    pub heads: Vec<Conv2d<T>>,
}

impl<T: Scalar> Detector<T> {
    /// Builds a randomly initialized network (seeded by `config.seed`).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut backbone = Vec::new();
        let mut in_ch = 1;
        for (s, &w) in config.backbone_channels.iter().enumerate() {
            for k in 0..config.convs_per_stage {
                backbone.push(ConvBnRelu::new(
                    &format!("backbone.{s}.{k}"),
                    in_ch,
                    w,
                    &mut rng,
                ));
                in_ch = w;
            }
        }
        let feat_ch = in_ch;
        let mut fuse = Vec::new();
        let mut heads = Vec::new();
        for (g, members) in config.gpp_groups.iter().enumerate() {
            fuse.push(ConvBnRelu::new(
                &format!("gpp.{g}.fuse"),
                feat_ch * members.len(),
                config.fuse_channels,
                &mut rng,
            ));
            heads.push(Conv2d::new(
                &format!("head.{g}"),
                config.fuse_channels,
                config.head_channels(),
                true,
                1.0,
                &mut rng,
            ));
        }
        Ok(Self {
            config,
            backbone,
            fuse,
            heads,
        })
    }

    /// All parameters in a fixed order (backbone, fuse, heads).
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        for b in self.backbone.iter().chain(&self.fuse) {
            v.extend(b.params());
        }
        for h in &self.heads {
            v.extend(h.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        for b in self.backbone.iter_mut().chain(self.fuse.iter_mut()) {
            v.extend(b.params_mut());
        }
        for h in &mut self.heads {
            v.extend(h.params_mut());
        }
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Detector<U> {
        let mut out = Detector::<U>::new(self.config.clone()).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.iter().map(|v| U::from_f64(v.to_f64())).collect();
        }
        out
    }

    fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let s = self.config.backbone_stride();
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::InvalidInput(format!(
                "input {w}x{h} is not divisible by {s}"
            )));
        }
        Ok(())
    }

    /// Stacks templates then tested images into one `2B x 1 x H x W` batch.
    pub fn pair_input(pairs: &[&ImagePair]) -> Result<Tensor<T>> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (w, h) = (first.width(), first.height());
        let mut data = Vec::with_capacity(2 * pairs.len() * w * h);
        for side in 0..2 {
            for p in pairs {
                if (p.width(), p.height()) != (w, h) {
                    return Err(Error::InvalidInput(
                        "pairs in a batch must share one size".into(),
                    ));
                }
                let r = if side == 0 { &p.template } else { &p.tested };
                if !r.is_binary() {
                    return Err(Error::InvalidInput(format!(
                        "pair {} is not binarized",
                        p.source_id
                    )));
                }
                data.extend(r.data.iter().map(|&v| T::from_f64(v as f64)));
            }
        }
        Ok(Tensor::from_vec(2 * pairs.len(), 1, h, w, data))
    }

    /// Runs the backbone on a batch of single-channel images (eval mode).
    pub fn backbone_forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.c != 1 {
            return Err(Error::InvalidInput(format!(
                "expected one channel, got {}",
                x.c
            )));
        }
        self.check_input_size(x.h, x.w)?;
        let per = self.config.convs_per_stage;
        let mut cur = x.clone();
        for stage in self.backbone.chunks(per) {
            for b in stage {
                cur = b.forward_eval(&cur);
            }
            cur = pool(&cur, 2, PoolMode::Max).output;
        }
        Ok(cur)
    }

    fn pool_members(&self, diff: &Tensor<T>) -> Result<BTreeMap<usize, Pooled<T>>> {
        self.config.grid_dims(diff.h, diff.w)?;
        Ok(self
            .config
            .used_strides()
            .into_iter()
            .map(|s| (s, pool(diff, s, self.config.pool_mode)))
            .collect())
    }

    fn group_input(&self, g: usize, pooled: &BTreeMap<usize, Pooled<T>>) -> Tensor<T> {
        let members = &self.config.gpp_groups[g];
        let target = &pooled[&members[0]].output;
        let parts: Vec<Tensor<T>> = members
            .iter()
            .map(|s| upsample_bilinear(&pooled[s].output, target.h, target.w))
            .collect();
        concat_channels(&parts)
    }

    /// Pools the difference map at every stride and fuses each group at the
    /// resolution of its first member (eval mode).
    pub fn gpp_forward(&self, diff: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let pooled = self.pool_members(diff)?;
        Ok((0..self.fuse.len())
            .map(|g| self.fuse[g].forward_eval(&self.group_input(g, &pooled)))
            .collect())
    }

    pub fn head_forward(&self, group: usize, feature: &Tensor<T>) -> Tensor<T> {
        self.heads[group].forward(feature)
    }

    /// Full eval-mode pass on a `2B` batch from [`Self::pair_input`];
    /// returns one raw prediction tensor per group.
    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let b = input.n / 2;
        let f = self.backbone_forward(input)?;
        let diff = feature_difference(&f.slice_batch(0, b), &f.slice_batch(b, b))?;
        let groups = self.gpp_forward(&diff)?;
        Ok(groups
            .iter()
            .enumerate()
            .map(|(g, x)| self.head_forward(g, x))
            .collect())
    }

    /// Raw predictions for an all-zero difference map, computed from the
    /// fuse normalization shifts and head biases alone: every fuse input
    /// is zero, so each fuse channel is the constant
    /// `relu(beta - gamma * mean / sqrt(var + eps))`.
    pub fn bias_only_forward(&self, feature_h: usize, feature_w: usize) -> Result<Vec<Tensor<T>>> {
        let dims = self.config.grid_dims(feature_h, feature_w)?;
        Ok(dims
            .iter()
            .enumerate()
            .map(|(g, &(m, n))| {
                let bn = &self.fuse[g].bn;
                let mut x = Tensor::zeros(1, self.config.fuse_channels, m, n);
                for ch in 0..self.config.fuse_channels {
                    let istd = 1.0 / (bn.running_var.value[ch].to_f64() + bn.eps).sqrt();
                    let v = bn.beta.value[ch].to_f64()
                        - bn.gamma.value[ch].to_f64() * bn.running_mean.value[ch].to_f64() * istd;
                    let v = T::from_f64(v.max(0.0));
                    x.data[ch * m * n..(ch + 1) * m * n]
                        .iter_mut()
                        .for_each(|c| *c = v);
                }
                self.head_forward(g, &x)
            })
            .collect())
    }

    /// Training-mode pass: batch statistics, activations cached for
    /// [`Self::backward`].
    pub fn forward_train(&mut self, input: Tensor<T>) -> Result<(Vec<Tensor<T>>, TrainCache<T>)> {
        if input.c != 1 || input.n % 2 != 0 || input.n == 0 {
            return Err(Error::InvalidInput(
                "training input must be a 2B x 1 x H x W batch".into(),
            ));
        }
        self.check_input_size(input.h, input.w)?;
        let b = input.n / 2;
        let per = self.config.convs_per_stage;
        let mut stages = Vec::new();
        let mut cur = input;
        for stage in self.backbone.chunks_mut(per) {
            let mut blocks = Vec::with_capacity(per);
            for blk in stage {
                let (y, c) = blk.forward_train(cur);
                blocks.push(c);
                cur = y;
            }
            let pre_pool_shape = cur.shape();
            let pooled = pool(&cur, 2, PoolMode::Max);
            cur = pooled.output.clone();
            stages.push(StageCache {
                blocks,
                pre_pool_shape,
                pooled,
            });
        }
        let diff = feature_difference(&cur.slice_batch(0, b), &cur.slice_batch(b, b))?;
        let pooled = self.pool_members(&diff)?;
        let mut groups = Vec::new();
        let mut raw = Vec::new();
        for g in 0..self.fuse.len() {
            let x = self.group_input(g, &pooled);
            let (y, fuse) = self.fuse[g].forward_train(x);
            raw.push(self.heads[g].forward(&y));
            groups.push(GroupCache {
                fuse,
                head_input: y,
            });
        }
        Ok((
            raw,
            TrainCache {
                batch: b,
                stages,
                diff_shape: diff.shape(),
                pooled,
                groups,
            },
        ))
    }

    /// Back-propagates raw-prediction gradients, accumulating into every
    /// parameter's `grad`.
    pub fn backward(&mut self, cache: TrainCache<T>, d_raw: &[Tensor<T>]) {
        let [_, fc, fh, fw] = cache.diff_shape;
        let mut d_pooled: BTreeMap<usize, Tensor<T>> = cache
            .pooled
            .iter()
            .map(|(&s, p)| {
                (
                    s,
                    Tensor::zeros(p.output.n, p.output.c, p.output.h, p.output.w),
                )
            })
            .collect();
        for (g, gc) in cache.groups.iter().enumerate() {
            let d_fused = self.heads[g]
                .backward(&gc.head_input, &d_raw[g], true)
                .expect("input gradient requested");
            let d_cat = self.fuse[g]
                .backward(&gc.fuse, d_fused, true)
                .expect("input gradient requested");
            let members = &self.config.gpp_groups[g];
            let parts = split_channels(&d_cat, &vec![fc; members.len()]);
            for (s, d) in members.iter().zip(parts) {
                let p = &cache.pooled[s].output;
                add_assign(
                    d_pooled.get_mut(s).expect("stride pooled"),
                    &upsample_bilinear_backward(&d, p.h, p.w),
                );
            }
        }
        let mut d_diff = Tensor::zeros(cache.batch, fc, fh, fw);
        for (s, d) in &d_pooled {
            add_assign(
                &mut d_diff,
                &pool_backward(
                    cache.diff_shape,
                    &cache.pooled[s],
                    d,
                    *s,
                    self.config.pool_mode,
                ),
            );
        }
        let neg = Tensor::from_vec(
            d_diff.n,
            d_diff.c,
            d_diff.h,
            d_diff.w,
            d_diff.data.iter().map(|&v| -v).collect(),
        );
        let mut d = Tensor::concat_batch(&[&d_diff, &neg]);
        let per = self.config.convs_per_stage;
        for (si, sc) in cache.stages.iter().enumerate().rev() {
            d = pool_backward(sc.pre_pool_shape, &sc.pooled, &d, 2, PoolMode::Max);
            for (k, bc) in sc.blocks.iter().enumerate().rev() {
                let first = si == 0 && k == 0;
                let blk = &mut self.backbone[si * per + k];
                // the first block needs no input gradient, ending the pass
                match blk.backward(bc, d, !first) {
                    Some(dx) => d = dx,
                    None => return,
                }
            }
        }
    }

    /// Default boxes for an `h x w` input. Scales are relative to
    /// `input_size`, so at other sizes they are rescaled per axis to keep
    /// their pixel size.
    pub fn anchors_for(&self, h: usize, w: usize) -> Result<AnchorSet> {
        self.check_input_size(h, w)?;
        let s = self.config.backbone_stride();
        let dims = self.config.grid_dims(h / s, w / s)?;
        let kx = self.config.input_size as f64 / w as f64;
        let ky = self.config.input_size as f64 / h as f64;
        let sx: Vec<f64> = self.config.anchor_scales.iter().map(|v| v * kx).collect();
        let sy: Vec<f64> = self.config.anchor_scales.iter().map(|v| v * ky).collect();
        generate_anchors_anisotropic(&dims, &sx, &sy, &self.config.anchor_ratios)
    }

    /// Gathers image `b` of the raw predictions into anchor order.
    pub fn anchor_outputs(&self, raw: &[Tensor<T>], b: usize) -> AnchorOutputs {
        let ratios = self.config.anchor_ratios.len();
        let total: usize = raw.iter().map(|t| t.plane() * ratios).sum();
        let mut out = AnchorOutputs::zeros(total);
        let mut idx = 0;
        for t in raw {
            let hw = t.plane();
            let img = t.image(b);
            for cell in 0..hw {
                for r in 0..ratios {
                    let at = |k: usize| img[(r * SLOT_LEN + k) * hw + cell].to_f64();
                    for k in 0..NUM_CLASSES {
                        out.logits[idx][k] = at(k);
                    }
                    for k in 0..4 {
                        out.offsets[idx][k] = at(NUM_CLASSES + k);
                    }
                    idx += 1;
                }
            }
        }
        out
    }

    /// Scatters per-image anchor gradients back into raw-prediction shape
    /// (the adjoint of [`Self::anchor_outputs`]).
    pub fn raw_gradients(&self, like: &[Tensor<T>], grads: &[AnchorOutputs]) -> Vec<Tensor<T>> {
        let ratios = self.config.anchor_ratios.len();
        let mut offset = 0;
        like.iter()
            .map(|t| {
                let hw = t.plane();
                let mut d = Tensor::zeros(t.n, t.c, t.h, t.w);
                for (b, g) in grads.iter().enumerate() {
                    let img = d.image_mut(b);
                    for cell in 0..hw {
                        for r in 0..ratios {
                            let a = offset + cell * ratios + r;
                            for k in 0..NUM_CLASSES {
                                img[(r * SLOT_LEN + k) * hw + cell] = T::from_f64(g.logits[a][k]);
                            }
                            for k in 0..4 {
                                img[(r * SLOT_LEN + NUM_CLASSES + k) * hw + cell] =
                                    T::from_f64(g.offsets[a][k]);
                            }
                        }
                    }
                }
                offset += hw * ratios;
                d
            })
            .collect()
    }

    /// Anchors and per-anchor outputs for one pair, before suppression.
    pub fn predict(&self, pair: &ImagePair) -> Result<(AnchorSet, AnchorOutputs)> {
        let anchors = self.anchors_for(pair.height(), pair.width())?;
        let input = Self::pair_input(&[pair])?;
        let raw = self.forward_eval(&input)?;
        let out = self.anchor_outputs(&raw, 0);
        debug_assert_eq!(out.len(), anchors.len());
        Ok((anchors, out))
    }

    /// Detects defects in an aligned, binarized pair.
    pub fn detect(&self, pair: &ImagePair, params: &NmsParams) -> Result<DetectionSet> {
        let (anchors, out) = self.predict(pair)?;
        Ok(decode_detections(&anchors, &out, params))
    }
}

/// Turns per-anchor outputs into suppressed detections. An anchor yields a
/// candidate when some defect class beats the background probability; the
/// candidate takes the most probable defect class and its probability.
pub fn decode_detections(
    anchors: &AnchorSet,
    out: &AnchorOutputs,
    params: &NmsParams,
) -> DetectionSet {
    let mut candidates = Vec::new();
    for (i, d) in anchors.anchors.iter().enumerate() {
        let p = softmax(&out.logits[i]);
        let (cls, &best) = p[1..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("six defect classes");
        if best <= p[0] {
            continue;
        }
        if let Ok(bbox) = decode_clipped(d, &out.offsets[i]) {
            candidates.push(ScoredBox {
                bbox,
                score: best,
                class_id: cls as u8 + 1,
            });
        }
    }
    nms(&candidates, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Raster;

    fn random_pair(size: usize, seed: u64) -> ImagePair {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Raster::new(size, size);
        let mut u = Raster::new(size, size);
        for v in t.data.iter_mut().chain(u.data.iter_mut()) {
            *v = rng.random_range(0..2);
        }
        ImagePair::new(t, u, "r").unwrap()
    }

    #[test]
    fn default_config_is_valid_and_groups_overlap() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        for w in c.gpp_groups.windows(2) {
            assert!(w[0].iter().any(|s| w[1].contains(s)));
        }
        assert_eq!(c.head_channels(), 33);
        ModelConfig::desk_scale().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn config_errors() {
        let mut c = ModelConfig::default();
        c.num_classes = 6;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.gpp_groups[1] = vec![4, 2];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny();
        c.gpp_pool_strides = vec![1, 2, 8];
        c.gpp_groups = vec![vec![1], vec![2], vec![8]];
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = ModelConfig::default();
        c.input_size = 500;
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets() {
        let base = ModelConfig::default();
        assert_eq!(Preset::OursAp.apply(&base).pool_mode, PoolMode::Average);
        let ng = Preset::NonGpp.apply(&base);
        assert_eq!(ng.gpp_groups, vec![vec![1], vec![4], vec![12]]);
        ng.validate().unwrap();
        assert_eq!("non-gpp".parse::<Preset>().unwrap(), Preset::NonGpp);
        assert!("ours".parse::<Preset>().is_err());
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[3.0; NUM_CLASSES]);
        assert!(p.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn feature_difference_properties() {
        let a = Tensor::from_vec(1, 1, 1, 3, vec![1.0f64, 2.0, 3.0]);
        let b = Tensor::from_vec(1, 1, 1, 3, vec![0.5f64, -2.0, 3.0]);
        let d = feature_difference(&a, &b).unwrap();
        let e = feature_difference(&b, &a).unwrap();
        assert!(d.data.iter().zip(&e.data).all(|(x, y)| *x == -*y));
        assert!(feature_difference(&a, &a)
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
        assert!(feature_difference(&a, &Tensor::zeros(1, 1, 1, 2)).is_err());
    }

    #[test]
    fn desk_shapes_and_layout() {
        let det = Detector::<f32>::new(ModelConfig::desk_scale()).unwrap();
        let pair = random_pair(128, 1);
        let input = Detector::<f32>::pair_input(&[&pair]).unwrap();
        let f = det.backbone_forward(&input).unwrap();
        assert_eq!(f.shape(), [2, 16, 32, 32]);
        let raw = det.forward_eval(&input).unwrap();
        let dims: Vec<_> = raw.iter().map(|t| (t.c, t.h, t.w)).collect();
        assert_eq!(dims, vec![(33, 32, 32), (33, 16, 16), (33, 8, 8)]);
        let (anchors, out) = det.predict(&pair).unwrap();
        assert_eq!(anchors.len(), 4032);
        assert_eq!(out.len(), 4032);
        // anchor 5 of group 1 = cell 1, ratio 2
        let k = anchors.group_offsets()[1] + 5;
        let hw = 16 * 16;
        assert_eq!(
            out.logits[k][3],
            raw[1].data[(2 * SLOT_LEN + 3) * hw + 1] as f64
        );
        assert_eq!(
            out.offsets[k][1],
            raw[1].data[(2 * SLOT_LEN + 8) * hw + 1] as f64
        );
        // scattering is the adjoint of gathering
        let back = det.raw_gradients(&raw, &[out]);
        assert_eq!(back, raw);
    }

    #[test]
    fn rejects_bad_inputs() {
        let det = Detector::<f32>::new(ModelConfig::desk_scale()).unwrap();
        let odd = random_pair(130, 2);
        assert!(matches!(
            det.detect(&odd, &NmsParams::default()),
            Err(Error::InvalidInput(_))
        ));
        let mut gray = random_pair(128, 3);
        gray.tested.data[0] = 200;
        assert!(det.detect(&gray, &NmsParams::default()).is_err());
    }

    #[test]
    fn identical_images_give_identical_features() {
        let det = Detector::<f32>::new(ModelConfig::desk_scale()).unwrap();
        let p = random_pair(64, 4);
        let same = ImagePair::new(p.template.clone(), p.template.clone(), "s").unwrap();
        let input = Detector::<f32>::pair_input(&[&same]).unwrap();
        let f = det.backbone_forward(&input).unwrap();
        assert_eq!(f.image(0), f.image(1));
    }

    #[test]
    fn detect_runs_and_boxes_are_clipped() {
        let det = Detector::<f32>::new(ModelConfig::desk_scale()).unwrap();
        let dets = det
            .detect(&random_pair(128, 5), &NmsParams::default())
            .unwrap();
        for d in &dets {
            assert!(d.bbox.is_valid());
            let [x1, y1, x2, y2] = d.bbox.corners();
            assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 + 1e-12 && y2 <= 1.0 + 1e-12);
            assert!((1..=6).contains(&d.class_id));
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let det = Detector::<f32>::new(ModelConfig::desk_scale()).unwrap();
        let input = Detector::<f32>::pair_input(&[&random_pair(64, 6)]).unwrap();
        assert_eq!(
            det.forward_eval(&input).unwrap(),
            det.forward_eval(&input).unwrap()
        );
        let again = Detector::<f32>::new(ModelConfig::desk_scale()).unwrap();
        assert_eq!(det, again);
    }
}
