use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pcb_gpp::data::deeppcb::{load_deeppcb, write_deeppcb, PairRecord};
use pcb_gpp::data::imageio::{binary_to_rgb, read_binary, write_rgb_png, ReadOptions};
use pcb_gpp::data::synth::generate_dataset;
use pcb_gpp::data::{ImagePair, Sample};
use pcb_gpp::eval::{
    evaluate_detections, evaluate_model, format_detections, fps_benchmark, parse_detections,
};
use pcb_gpp::geometry::DetectionSet;
use pcb_gpp::model::checkpoint::Checkpoint;
use pcb_gpp::model::{Detector, Preset};
use pcb_gpp::trainer::{ablation_table, run_ablation, EpochMetrics, RunConfig, Trainer};

mod overlay;

#[derive(Parser)]
#[command(
    name = "pcbgpp",
    version,
    about = "Pairwise PCB defect detection with group pyramid pooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset in DeepPCB layout.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a detector on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a training checkpoint; its configuration wins.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        read: ReadArgs,
    },
    /// Score a checkpoint, or an external detections file, on a split.
    Eval {
        #[arg(
            long,
            conflicts_with = "detections",
            required_unless_present = "detections"
        )]
        checkpoint: Option<PathBuf>,
        /// Detections file in "image_id class_id score x1 y1 x2 y2" lines.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        read: ReadArgs,
    },
    /// Detect defects on one template/tested pair.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        tested: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Image id written into the detections file; defaults to the tested file stem.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        read: ReadArgs,
    },
    /// Time single-pair inference.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        /// Also write bench.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        read: ReadArgs,
    },
    /// Train and evaluate several presets over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "ours-MP,ours-AP,non-GPP")]
        presets: Vec<Preset>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        read: ReadArgs,
    },
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set train.epochs=10 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Start from the CPU-sized defaults instead of the full-size ones.
    #[arg(long)]
    desk: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let base = if self.desk {
            RunConfig::desk_scale()
        } else {
            RunConfig::default()
        };
        RunConfig::load(self.config.as_deref(), &base, &self.overrides)
            .context("loading configuration")
    }
}

#[derive(Args, Clone, Copy)]
struct ReadArgs {
    /// Accept JPEG inputs, as in the published dataset.
    #[arg(long)]
    allow_lossy: bool,
    /// Fixed binarization threshold instead of Otsu's method.
    #[arg(long)]
    threshold: Option<u8>,
}

impl ReadArgs {
    fn options(self) -> ReadOptions {
        ReadOptions {
            allow_lossy: self.allow_lossy,
            threshold: self.threshold,
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate {
            out,
            train,
            test,
            cfg,
        } => generate(&out, train, test, &cfg.load()?),
        Command::Train {
            data,
            out,
            resume,
            cfg,
            read,
        } => train(&data, &out, resume.as_deref(), &cfg.load()?, read),
        Command::Eval {
            checkpoint,
            detections,
            data,
            split,
            out,
            cfg,
            read,
        } => {
            let run = cfg.load()?;
            let samples = load_split(&data, &split, read)?;
            let (report, dets) = match (checkpoint, detections) {
                (Some(ck), _) => {
                    evaluate_model(&load_detector(&ck)?, &samples, &run.nms, &run.eval)?
                }
                (None, Some(file)) => {
                    let dets = read_detections(&file, &samples)?;
                    let gts: Vec<_> = samples.iter().map(|s| s.annotations.clone()).collect();
                    (evaluate_detections(&dets, &gts, &run.eval), dets)
                }
                (None, None) => bail!("either --checkpoint or --detections is required"),
            };
            fs::create_dir_all(&out)?;
            report.write(&out, "eval")?;
            write_detections(&out.join("detections.txt"), &samples, &dets)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Detect {
            checkpoint,
            template,
            tested,
            out,
            id,
            cfg,
            read,
        } => {
            let run = cfg.load()?;
            let det = load_detector(&checkpoint)?;
            let opts = read.options();
            let id = id.unwrap_or_else(|| {
                tested
                    .file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            });
            let pair = ImagePair::new(
                read_binary(&template, &opts)?,
                read_binary(&tested, &opts)?,
                id.clone(),
            )?;
            let dets = det.detect(&pair, &run.nms)?;
            fs::create_dir_all(&out)?;
            let (w, h) = (pair.width(), pair.height());
            fs::write(
                out.join("detections.txt"),
                format_detections(&id, &dets, w, h),
            )?;
            write_rgb_png(
                &overlay::render(&binary_to_rgb(&pair.tested), &dets),
                &out.join("overlay.png"),
            )?;
            println!("{} detections written to {}", dets.len(), out.display());
            Ok(())
        }
        Command::Bench {
            checkpoint,
            data,
            split,
            warmup,
            runs,
            out,
            cfg,
            read,
        } => {
            let run = cfg.load()?;
            let det = load_detector(&checkpoint)?;
            let pairs: Vec<ImagePair> = load_split(&data, &split, read)?
                .into_iter()
                .map(|s| s.pair)
                .collect();
            let b = fps_benchmark(&det, &pairs, warmup, runs, &run.nms)?;
            println!(
                "fps={:.3} mean_ms={:.3} p50_ms={:.3} p95_ms={:.3} runs={} warmup={}",
                b.fps, b.mean_ms, b.p50_ms, b.p95_ms, b.runs, b.warmup
            );
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&b)?)?;
            }
            Ok(())
        }
        Command::Ablate {
            data,
            out,
            presets,
            seeds,
            cfg,
            read,
        } => {
            let run = cfg.load()?;
            let train = load_split(&data, "train", read)?;
            let test = load_split(&data, "test", read)?;
            fs::create_dir_all(&out)?;
            let rows = run_ablation(
                &presets,
                &seeds,
                &run,
                &train,
                &test,
                Some(&out),
                |p, s, m| log_epoch(&format!("{p} seed {s}"), m),
            );
            let table = ablation_table(&rows);
            fs::write(out.join("ablation.txt"), &table)?;
            print!("{table}");
            let failed = rows.iter().filter(|r| r.result.is_err()).count();
            if failed > 0 {
                bail!("{failed} of {} runs failed", rows.len());
            }
            Ok(())
        }
    }
}

fn generate(out: &Path, train: usize, test: usize, run: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let (tr, te) = generate_dataset(&run.generator, train, test)?;
    let index = write_deeppcb(out, &tr, &te)?;
    let defects: usize = tr.iter().chain(&te).map(|s| s.annotations.len()).sum();
    println!(
        "wrote {} train and {} test pairs ({defects} defects) to {} in {:.1}s",
        index.train.len(),
        index.test.len(),
        index.root.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn train(
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    run: &RunConfig,
    read: ReadArgs,
) -> Result<()> {
    let samples = load_split(data, "train", read)?;
    let mut trainer = match resume {
        Some(ck) => Trainer::from_checkpoint(&Checkpoint::load(ck)?)?,
        None => Trainer::new(&run.model, run.train.clone(), run.loss.clone())?,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), run.to_toml()?)?;
    log::info!(
        "training {} on {} pairs from epoch {} to {}",
        trainer.config.preset,
        samples.len(),
        trainer.epoch,
        trainer.config.epochs
    );
    trainer.fit(&samples, Some(out), |m| log_epoch("train", m))?;
    println!("model written to {}", out.join("model.ckpt").display());
    Ok(())
}

fn log_epoch(tag: &str, m: &EpochMetrics) {
    log::info!(
        "{tag} epoch {} lr {:.2e} loss {:.4} (reg {:.4} cls {:.4}) matched {} in {:.1}s",
        m.epoch,
        m.learning_rate,
        m.loss,
        m.regression,
        m.classification,
        m.num_matched,
        m.seconds
    );
}

fn load_detector(path: &Path) -> Result<Detector<f32>> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ck.detector()?)
}

fn load_split(root: &Path, split: &str, read: ReadArgs) -> Result<Vec<Sample>> {
    let index = load_deeppcb(root)?;
    let records: &[PairRecord] = match split {
        "train" | "trainval" => &index.train,
        "test" => &index.test,
        other => bail!("unknown split {other:?}; expected train or test"),
    };
    if records.is_empty() {
        bail!("the {split} split of {} is empty", root.display());
    }
    let opts = read.options();
    Ok(records
        .iter()
        .map(|r| r.load(&opts))
        .collect::<pcb_gpp::Result<Vec<_>>>()?)
}

/// Groups a detections file by image id in split order.
fn read_detections(path: &Path, samples: &[Sample]) -> Result<Vec<DetectionSet>> {
    let lines = parse_detections(&fs::read_to_string(path)?, path)?;
    let mut out = vec![Vec::new(); samples.len()];
    for l in &lines {
        let Some(i) = samples.iter().position(|s| s.pair.source_id == l.image_id) else {
            bail!("{}: unknown image id {:?}", path.display(), l.image_id);
        };
        out[i].push(l.to_scored(samples[i].pair.width(), samples[i].pair.height()));
    }
    for d in &mut out {
        d.sort_by(|a, b| b.score.total_cmp(&a.score));
    }
    Ok(out)
}

fn write_detections(path: &Path, samples: &[Sample], dets: &[DetectionSet]) -> Result<()> {
    let mut text = String::new();
    for (s, d) in samples.iter().zip(dets) {
        text += &format_detections(&s.pair.source_id, d, s.pair.width(), s.pair.height());
    }
    fs::write(path, text)?;
    Ok(())
}
