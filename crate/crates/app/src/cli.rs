use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use deco_core::model::Variant;
use deco_core::sampler::Solver;
use deco_core::spectral::{feature_cluster_map, highfreq_fraction};
use deco_core::{Scalar, Tensor};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, Precision, RunConfig};
use crate::data;
use crate::export;
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "deco", version, about = "Frequency-decoupled pixel diffusion on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model, appending metrics and writing checkpoints.
    Train(TrainArgs),
    /// Generate an image grid from a checkpoint's EMA weights.
    Sample(SampleArgs),
    /// DCT energy spectra of dumped DiT outputs or velocities.
    AnalyzeSpectrum(SpectrumArgs),
    /// K-means maps of dumped DiT outputs over sampling time.
    ClusterFeatures(ClusterArgs),
    /// Write the synthetic dataset as PNG files.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub quality: Option<i64>,
    /// Continue from this checkpoint up to the configured step count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Solver steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long = "cfg-scale")]
    pub cfg_scale: Option<f64>,
    #[arg(long)]
    pub solver: Option<Solver>,
    /// Store the DiT output grid and the velocity of every conditional evaluation.
    #[arg(long = "dump-features")]
    pub dump_features: bool,
    /// Defaults to the latest checkpoint in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Sample with the raw weights instead of the EMA shadow.
    #[arg(long = "no-ema")]
    pub no_ema: bool,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Dump files written by `sample --dump-features`.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// `features` (DiT outputs) or `velocity`.
    #[arg(long, default_value = "features")]
    pub array: String,
    /// Analysis block size; lower it when the token grid is smaller than 8.
    #[arg(long, default_value_t = 8)]
    pub block: usize,
    /// Zigzag index where the high band starts; half the coefficients by default.
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    /// Which trajectory of the batch to visualize.
    #[arg(long = "sample-index", default_value_t = 0)]
    pub sample_index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub scale: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
}

fn base_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => train(args),
        Command::Sample(args) => sample(args),
        Command::AnalyzeSpectrum(args) => analyze_spectrum(args),
        Command::ClusterFeatures(args) => cluster_features(args),
        Command::GenData(args) => gen_data(args),
    }
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(seed) = args.common.seed {
        cfg.training.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.training.steps = steps;
    }
    if let Some(v) = args.variant {
        cfg.model.variant = v;
    }
    if let Some(q) = args.quality {
        cfg.training.quality = q;
    }
    cfg.validate()?;
    let dataset = run::load_dataset(&cfg)?;
    let resume = args.resume.as_deref();
    let checkpoints = match cfg.precision {
        Precision::F32 => train_with::<f32>(&cfg, &dataset, resume)?,
        Precision::F64 => train_with::<f64>(&cfg, &dataset, resume)?,
    };
    let mut artifacts = checkpoints;
    artifacts.push(cfg.output_dir.join("metrics.jsonl"));
    artifacts.retain(|p| p.exists());
    run::write_manifest(&cfg, "train", cfg.training.seed, &artifacts)
}

fn train_with<T: Scalar>(cfg: &RunConfig, dataset: &data::LabeledImages, resume: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let outcome = run::train::<T>(cfg, dataset, resume)?;
    if let Some(last) = outcome.reports.last() {
        println!(
            "step {} fm {:.5} freqfm {:.5} total {:.5}",
            last.step, last.fm, last.freqfm, last.total
        );
    }
    Ok(outcome.checkpoints)
}

#[derive(Debug, Serialize)]
struct SampleLog {
    steps: usize,
    solver: Solver,
    cfg_scale: f64,
    guidance_interval: [f64; 2],
    seed: u64,
    samples: usize,
    nfe: usize,
}

fn sample(args: SampleArgs) -> anyhow::Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(seed) = args.common.seed {
        cfg.sampling.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.sampling.steps = steps;
    }
    if let Some(v) = args.variant {
        cfg.model.variant = v;
    }
    if let Some(s) = args.cfg_scale {
        cfg.sampling.cfg_scale = s;
    }
    if let Some(s) = args.solver {
        cfg.sampling.solver = s;
    }
    cfg.validate()?;
    let ckpt_path = args.checkpoint.clone().unwrap_or_else(|| run::latest_checkpoint(&cfg.output_dir));
    let ckpt = Checkpoint::load(&ckpt_path).with_context(|| format!("loading {}", ckpt_path.display()))?;
    let artifacts = match cfg.precision {
        Precision::F32 => sample_with::<f32>(&cfg, &ckpt, &args)?,
        Precision::F64 => sample_with::<f64>(&cfg, &ckpt, &args)?,
    };
    run::write_manifest(&cfg, "sample", cfg.sampling.seed, &artifacts)
}

fn sample_with<T: Scalar>(cfg: &RunConfig, ckpt: &Checkpoint, args: &SampleArgs) -> anyhow::Result<Vec<PathBuf>> {
    let (model, params) = run::params_from_checkpoint::<T>(&cfg.model, ckpt, !args.no_ema)?;
    let labels = run::cyclic_labels(cfg.sample_count, cfg.model.dit.num_classes);
    let result = run::run_sampler(&model, &params, &labels, &cfg.sampling, args.dump_features)?;
    let dir = cfg.output_dir.join("samples");
    std::fs::create_dir_all(&dir)?;

    let (w, h, rgb) = export::image_grid(&result.images, cfg.model.dit.num_classes);
    let grid = dir.join("grid.png");
    export::write_png_u8(&grid, w, h, rgb)?;

    let mut dump = Checkpoint::new(ckpt.step);
    dump.push("images", &result.images);
    dump.push("labels", &Tensor::<f64>::from_f64([labels.len()], &labels.iter().map(|&l| l as f64).collect::<Vec<_>>())?);
    let images = dir.join("samples.bin");
    dump.save(&images)?;
    let mut artifacts = vec![grid, images];

    if let (Some(f), Some(v)) = (&result.features, &result.velocities) {
        let mut d = Checkpoint::new(ckpt.step);
        d.push("features", f);
        d.push("velocity", v);
        let path = dir.join("features.bin");
        d.save(&path)?;
        artifacts.push(path);
    }
    run::append_jsonl(
        &dir.join("sample_log.jsonl"),
        &SampleLog {
            steps: cfg.sampling.steps,
            solver: cfg.sampling.solver,
            cfg_scale: cfg.sampling.cfg_scale,
            guidance_interval: cfg.sampling.guidance_interval,
            seed: cfg.sampling.seed,
            samples: labels.len(),
            nfe: result.nfe,
        },
    )?;
    println!("{} samples, {} model evaluations", labels.len(), result.nfe);
    Ok(artifacts)
}

#[derive(Debug, Serialize)]
struct SpectrumRecord {
    index: usize,
    value: f64,
    energy: f64,
}

#[derive(Debug, Serialize)]
struct SpectrumSummary {
    input: String,
    array: String,
    block: usize,
    blocks: usize,
    cutoff: usize,
    highfreq_fraction: Option<f64>,
}

fn dump_array(ckpt: &Checkpoint, name: &str) -> anyhow::Result<Tensor<f64>> {
    let arr = ckpt.get(name).with_context(|| format!("dump has no `{name}` array"))?;
    Ok(match arr.dtype {
        deco_core::DType::F32 => arr.to_tensor::<f32>()?.cast(),
        deco_core::DType::F64 => arr.to_tensor::<f64>()?,
    })
}

fn analyze_spectrum(args: SpectrumArgs) -> anyhow::Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let cutoff = args.cutoff.unwrap_or(args.block * args.block / 2);
    for input in &args.input {
        let ckpt = Checkpoint::load(input).with_context(|| format!("loading {}", input.display()))?;
        let stack = dump_array(&ckpt, &args.array)?;
        let spectrum = run::spectrum_of_stack(&stack, args.block)?;
        // `<run>/samples/features.bin` is named after its run directory
        let file_stem = input.file_stem();
        let run_dir = input.parent().and_then(|p| p.parent()).and_then(|p| p.file_name());
        let stem = match file_stem {
            Some(f) if f == "features" => run_dir.or(file_stem),
            _ => file_stem,
        }
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".to_string());
        let path = args.out.join(format!("spectrum_{stem}_{}.jsonl", args.array));
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        for (index, (&value, &energy)) in spectrum.values.iter().zip(&spectrum.energies).enumerate() {
            run::append_jsonl(&path, &SpectrumRecord { index, value, energy })?;
        }
        let hf = highfreq_fraction(&spectrum.energies, cutoff).ok();
        let summary = SpectrumSummary {
            input: input.display().to_string(),
            array: args.array.clone(),
            block: args.block,
            blocks: spectrum.blocks,
            cutoff,
            highfreq_fraction: hf,
        };
        run::append_jsonl(&args.out.join("spectrum_summary.jsonl"), &summary)?;
        match hf {
            Some(f) => println!("{stem}: {} blocks, high-frequency fraction {f:.4}", spectrum.blocks),
            None => println!("{stem}: {} blocks, zero energy", spectrum.blocks),
        }
    }
    Ok(())
}

fn cluster_features(args: ClusterArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&args.input).with_context(|| format!("loading {}", args.input.display()))?;
    let features = dump_array(&ckpt, "features")?;
    let s = features.shape().to_vec();
    let seq = match s.len() {
        5 => {
            if args.sample_index >= s[1] {
                bail!("sample index {} out of range for batch {}", args.sample_index, s[1]);
            }
            let per: usize = s[2..].iter().product();
            let mut data = Vec::with_capacity(s[0] * per);
            for e in 0..s[0] {
                let start = (e * s[1] + args.sample_index) * per;
                data.extend_from_slice(&features.data()[start..start + per]);
            }
            Tensor::new([s[0], s[2], s[3], s[4]], data)?
        }
        4 => features,
        _ => bail!("expected [T, H, W, C] or [T, B, H, W, C] features, got {s:?}"),
    };
    let frames = feature_cluster_map(&seq, args.k, args.frames, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    for f in &frames {
        let rgb = export::upscale(&f.rgb, f.width, f.height, args.scale.max(1));
        let path = args.out.join(format!("cluster_t{:03}.png", f.frame));
        export::write_png_u8(&path, f.width * args.scale.max(1), f.height * args.scale.max(1), rgb)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<()> {
    let mut cfg = base_config(&args.common)?;
    let DataSource::Synthetic(spec) = &mut cfg.data.source else {
        bail!("gen-data needs a synthetic data source");
    };
    if let Some(seed) = args.common.seed {
        spec.seed = seed;
    }
    let spec = spec.clone();
    cfg.validate()?;
    let set = data::generate_synthetic(&spec)?;
    let root = cfg.output_dir.join("data");
    let files = data::write_image_directory(&set, &root)?;
    println!("{} images in {}", files.len(), root.display());
    run::write_manifest(&cfg, "gen-data", spec.seed, &[])
}
