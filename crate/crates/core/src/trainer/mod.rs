//! Training loop, learning-rate schedule, optimizer, checkpoints and the
//! ablation harness.

pub mod config;
mod gradcheck;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
pub use gradcheck::{gradient_check, GradSample};

use crate::anchors::AnchorSet;
use crate::data::augment::{augment_pair, AugmentParams};
use crate::data::{ImagePair, Sample};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalReport};
use crate::loss::{loss_gradient, sample_background_with, total_loss, LossBreakdown, LossConfig};
use crate::model::checkpoint::Checkpoint;
use crate::model::{Detector, ModelConfig, Preset};
use crate::nn::{Scalar, Tensor};
use crate::targets::{match_anchors, MatchResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 penalty added to the gradient of convolution weights only.
    pub weight_decay: f64,
    pub epochs: usize,
    /// Image pairs per step.
    pub batch_size: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Drives initialization, data order, augmentation and sampling.
    pub seed: u64,
    pub preset: Preset,
    pub crop_size: usize,
    pub flip_prob: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            epochs: 500,
            batch_size: 16,
            lr_decay_factor: 0.33,
            lr_decay_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            preset: Preset::OursMp,
            crop_size: 512,
            flip_prob: 0.5,
            checkpoint_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.lr_decay_every == 0 || self.crop_size == 0 {
            return bad("batch_size, lr_decay_every and crop_size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("Adam betas must lie in [0, 1) and adam_eps must be positive");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 1]");
        }
        Ok(())
    }

    /// Rate used during the epoch with zero-based index `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate
            * self
                .lr_decay_factor
                .powi((epoch / self.lr_decay_every) as i32)
    }
}

/// Adam moments for every parameter, in [`Detector::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(det: &Detector<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = det
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update from the accumulated gradients. Weight decay is added to
    /// the gradient of decaying parameters; running statistics are skipped.
    pub fn update(&mut self, det: &mut Detector<f32>, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for ((p, m), v) in det
            .params_mut()
            .into_iter()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if !p.kind.is_trainable() {
                continue;
            }
            let wd = if p.kind.decays() {
                cfg.weight_decay
            } else {
                0.0
            };
            for i in 0..p.value.len() {
                let w = p.value[i] as f64;
                let g = p.grad[i] as f64 + wd * w;
                let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * g;
                let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                p.value[i] = (w - lr * (mi / c1) / ((vi / c2).sqrt() + cfg.adam_eps)) as f32;
            }
        }
    }
}

/// Ground truth of one image of a batch.
#[derive(Debug, Clone)]
pub struct ImageTargets {
    pub matched: MatchResult,
    pub background: Vec<usize>,
}

/// Training-mode loss of a batch without touching gradients. `input` is
/// a `2B` batch as built by [`Detector::pair_input`].
pub fn batch_loss<T: Scalar>(
    det: &mut Detector<T>,
    input: Tensor<T>,
    targets: &[ImageTargets],
    reg_weight: f64,
) -> Result<LossBreakdown> {
    let (raw, _) = det.forward_train(input)?;
    let parts: Vec<LossBreakdown> = targets
        .iter()
        .enumerate()
        .map(|(b, t)| {
            total_loss(
                &det.anchor_outputs(&raw, b),
                &t.matched,
                &t.background,
                reg_weight,
            )
        })
        .collect();
    Ok(LossBreakdown::combine(&parts, reg_weight))
}

/// Forward and backward pass of a batch. Gradients of the batch total
/// (normalized by the batch's total match count) are added to every
/// parameter's `grad`.
pub fn batch_backward<T: Scalar>(
    det: &mut Detector<T>,
    input: Tensor<T>,
    targets: &[ImageTargets],
    reg_weight: f64,
) -> Result<LossBreakdown> {
    let (raw, cache) = det.forward_train(input)?;
    let outputs: Vec<_> = (0..targets.len())
        .map(|b| det.anchor_outputs(&raw, b))
        .collect();
    let parts: Vec<LossBreakdown> = outputs
        .iter()
        .zip(targets)
        .map(|(o, t)| total_loss(o, &t.matched, &t.background, reg_weight))
        .collect();
    let loss = LossBreakdown::combine(&parts, reg_weight);
    if !loss.total.is_finite() {
        return Ok(loss);
    }
    let scale = 1.0 / loss.num_matched.max(1) as f64;
    let grads: Vec<_> = outputs
        .iter()
        .zip(targets)
        .map(|(o, t)| loss_gradient(o, &t.matched, &t.background, reg_weight, scale))
        .collect();
    let d_raw = det.raw_gradients(&raw, &grads);
    det.backward(cache, &d_raw);
    Ok(loss)
}

/// Per-epoch log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Number of completed epochs.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean batch total.
    pub loss: f64,
    /// Regression and classification sums divided by all matches.
    pub regression: f64,
    pub classification: f64,
    pub num_matched: usize,
    pub num_bg_sampled: usize,
    pub steps: usize,
    pub seconds: f64,
}

pub struct Trainer {
    pub det: Detector<f32>,
    pub adam: Adam,
    pub config: TrainConfig,
    pub loss: LossConfig,
    /// Completed epochs.
    pub epoch: usize,
    anchors: AnchorSet,
}

const META_FORMAT: &str = "pcb-gpp-train";

impl Trainer {
    /// Fresh run. The preset shapes the network and `config.seed` seeds
    /// its initialization.
    pub fn new(model: &ModelConfig, config: TrainConfig, loss: LossConfig) -> Result<Self> {
        config.validate()?;
        let mut mc = config.preset.apply(model);
        mc.seed = config.seed;
        let det = Detector::new(mc)?;
        Self::assemble(det, None, config, loss, 0)
    }

    fn assemble(
        det: Detector<f32>,
        adam: Option<Adam>,
        config: TrainConfig,
        loss: LossConfig,
        epoch: usize,
    ) -> Result<Self> {
        let anchors = det.anchors_for(config.crop_size, config.crop_size)?;
        Ok(Self {
            adam: adam.unwrap_or_else(|| Adam::new(&det)),
            det,
            config,
            loss,
            epoch,
            anchors,
        })
    }

    /// Resumes from a checkpoint written by [`Self::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let det = ck.detector()?;
        let meta = &ck.meta;
        if meta.get("format").and_then(|v| v.as_str()) != Some(META_FORMAT) {
            return Err(Error::Checkpoint("not a training checkpoint".into()));
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing {k}")))
        };
        let config: TrainConfig = serde_json::from_value(field("train")?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let loss: LossConfig =
            serde_json::from_value(field("loss")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let epoch = field("epoch")?
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("bad epoch".into()))? as usize;
        let step = field("adam_step")?
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("bad adam_step".into()))?;
        let mut adam = Adam::new(&det);
        adam.step = step;
        for (i, p) in det.params().iter().enumerate() {
            if !p.kind.is_trainable() {
                continue;
            }
            for (slot, which) in [(&mut adam.m[i], "m"), (&mut adam.v[i], "v")] {
                let t = ck.aux(&format!("adam/{which}/{}", p.name)).ok_or_else(|| {
                    Error::Checkpoint(format!("missing optimizer state for {}", p.name))
                })?;
                if t.data.len() != slot.len() {
                    return Err(Error::Checkpoint(format!(
                        "optimizer state size mismatch for {}",
                        p.name
                    )));
                }
                slot.clone_from(&t.data);
            }
        }
        Self::assemble(det, Some(adam), config, loss, epoch)
    }

    /// Network, optimizer state and configuration echo.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "format": META_FORMAT,
            "epoch": self.epoch,
            "adam_step": self.adam.step,
            "train": self.config,
            "loss": self.loss,
        });
        let mut ck = Checkpoint::from_detector(&self.det, meta);
        for (i, p) in self.det.params().iter().enumerate() {
            if p.kind.is_trainable() {
                ck.push_aux(
                    &format!("adam/m/{}", p.name),
                    p.shape.clone(),
                    self.adam.m[i].clone(),
                );
                ck.push_aux(
                    &format!("adam/v/{}", p.name),
                    p.shape.clone(),
                    self.adam.v[i].clone(),
                );
            }
        }
        ck
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    /// Matches and samples backgrounds for already augmented samples.
    pub fn targets(&self, batch: &[Sample], bg_seeds: &[u64]) -> Vec<ImageTargets> {
        batch
            .iter()
            .zip(bg_seeds)
            .map(|(s, &seed)| {
                let matched = match_anchors(&self.anchors, &s.annotations);
                let background = sample_background_with(&matched, seed, &self.loss);
                ImageTargets {
                    matched,
                    background,
                }
            })
            .collect()
    }

    /// One optimizer step on crop-sized samples.
    pub fn step(&mut self, batch: &[Sample], bg_seeds: &[u64], lr: f64) -> Result<LossBreakdown> {
        let targets = self.targets(batch, bg_seeds);
        let pairs: Vec<&ImagePair> = batch.iter().map(|s| &s.pair).collect();
        let input = Detector::<f32>::pair_input(&pairs)?;
        self.det.zero_grad();
        let loss = batch_backward(&mut self.det, input, &targets, self.loss.reg_weight)?;
        if loss.total.is_finite() {
            self.adam.update(&mut self.det, lr, &self.config);
        }
        Ok(loss)
    }

    /// Trains one epoch. The epoch's shuffling, augmentation and sampling
    /// come from a stream keyed by (seed, epoch), so a resumed run repeats
    /// an uninterrupted one.
    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training data is empty".into()));
        }
        let started = Instant::now();
        let epoch = self.epoch;
        let lr = self.config.learning_rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let aug = AugmentParams {
            crop_size: self.config.crop_size,
            flip_prob: self.config.flip_prob,
        };
        let mut parts = Vec::new();
        let mut loss_sum = 0.0;
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut bg_seeds = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &data[i];
                let (pair, annotations) =
                    augment_pair(&s.pair, &s.annotations, rng.random(), &aug)?;
                batch.push(Sample { pair, annotations });
                bg_seeds.push(rng.random());
            }
            let loss = self.step(&batch, &bg_seeds, lr)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    batch_ids: chunk
                        .iter()
                        .map(|&i| data[i].pair.source_id.clone())
                        .collect(),
                });
            }
            loss_sum += loss.total;
            parts.push(loss);
        }
        self.epoch += 1;
        let all = LossBreakdown::combine(&parts, self.loss.reg_weight);
        let norm = all.num_matched.max(1) as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            learning_rate: lr,
            loss: loss_sum / parts.len() as f64,
            regression: all.regression / norm,
            classification: all.classification / norm,
            num_matched: all.num_matched,
            num_bg_sampled: all.num_bg_sampled,
            steps: parts.len(),
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Runs the remaining epochs. With an output directory, appends to
    /// `metrics.jsonl`, checkpoints every `checkpoint_every` epochs under
    /// `checkpoints/` and writes `model.ckpt` at the end.
    pub fn fit(
        &mut self,
        data: &[Sample],
        out_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let mut log = Vec::new();
        let mut metrics_file = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(
                    fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(dir.join("metrics.jsonl"))?,
                )
            }
            None => None,
        };
        while self.epoch < self.config.epochs {
            let m = self.run_epoch(data)?;
            on_epoch(&m);
            if let (Some(dir), Some(f)) = (out_dir, metrics_file.as_mut()) {
                writeln!(
                    f,
                    "{}",
                    serde_json::to_string(&m).expect("metrics serialize")
                )?;
                let k = self.config.checkpoint_every;
                if k > 0 && self.epoch % k == 0 {
                    self.checkpoint().save(&checkpoint_path(dir, self.epoch))?;
                }
            }
            log.push(m);
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join("model.ckpt"))?;
        }
        Ok(log)
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("epoch-{epoch:04}.ckpt"))
}

/// Outcome of one ablation run.
#[derive(Debug)]
pub struct AblationRow {
    pub preset: Preset,
    pub seed: u64,
    pub result: Result<EvalReport>,
}

/// Trains and evaluates every preset for every seed on identical data.
/// A failing run is recorded and the others continue.
pub fn run_ablation(
    presets: &[Preset],
    seeds: &[u64],
    run: &RunConfig,
    train: &[Sample],
    test: &[Sample],
    out_dir: Option<&Path>,
    mut progress: impl FnMut(Preset, u64, &EpochMetrics),
) -> Vec<AblationRow> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for &preset in presets {
            let result = (|| {
                let cfg = TrainConfig {
                    preset,
                    seed,
                    ..run.train.clone()
                };
                let mut t = Trainer::new(&run.model, cfg, run.loss.clone())?;
                let dir = out_dir.map(|d| d.join(format!("{}-seed{seed}", preset.name())));
                t.fit(train, dir.as_deref(), |m| progress(preset, seed, m))?;
                let (report, _) = evaluate_model(&t.det, test, &run.nms, &run.eval)?;
                if let Some(d) = &dir {
                    report.write(d, "eval")?;
                }
                Ok(report)
            })();
            if let Err(e) = &result {
                log::error!("{preset} seed {seed} failed: {e}");
            }
            rows.push(AblationRow {
                preset,
                seed,
                result,
            });
        }
    }
    rows
}

/// Side-by-side table: one row per run plus per-preset means.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<8} {:>6} {:>8} {:>9} {:>8} {:>8}\n",
        "preset", "seed", "mAP", "precision", "recall", "F-mean"
    );
    for r in rows {
        match &r.result {
            Ok(rep) => {
                let p = &rep.operating_point;
                s += &format!(
                    "{:<8} {:>6} {:>8.4} {:>9.4} {:>8.4} {:>8.4}\n",
                    r.preset.name(),
                    r.seed,
                    rep.map,
                    p.precision,
                    p.recall,
                    p.f_mean
                );
            }
            Err(e) => s += &format!("{:<8} {:>6} failed: {e}\n", r.preset.name(), r.seed),
        }
    }
    let mut presets: Vec<Preset> = rows.iter().map(|r| r.preset).collect();
    presets.sort();
    presets.dedup();
    for p in presets {
        let maps: Vec<f64> = rows
            .iter()
            .filter(|r| r.preset == p)
            .filter_map(|r| r.result.as_ref().ok().map(|rep| rep.map))
            .collect();
        if !maps.is_empty() {
            s += &format!(
                "{:<8} {:>6} {:>8.4}\n",
                p.name(),
                "mean",
                maps.iter().sum::<f64>() / maps.len() as f64
            );
        }
    }
    s
}
