//! Training, sampling and analysis drivers shared by the CLI and tests.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use deco_core::flow::{LossReport, Trainer};
use deco_core::model::{Generator, ModelConfig};
use deco_core::params::ParamStore;
use deco_core::sampler::{self, GeneratorModel, SamplerConfig};
use deco_core::spectral::{EnergySpectrum, SpectrumAccumulator};
use deco_core::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::data::{self, LabeledImages};

pub fn load_dataset(cfg: &RunConfig) -> anyhow::Result<LabeledImages> {
    match &cfg.data.source {
        DataSource::Synthetic(spec) => data::generate_synthetic(spec),
        DataSource::Directory { path } => data::load_image_directory(path, cfg.data.image_size),
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Appends one JSON record per line, flushing after each.
pub fn append_jsonl<S: Serialize>(path: &Path, record: &S) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct ManifestRecord<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    artifacts: Vec<Artifact>,
}

/// Records the resolved config, seed and artifact hashes of one CLI run.
pub fn write_manifest(cfg: &RunConfig, command: &str, seed: u64, artifacts: &[PathBuf]) -> anyhow::Result<()> {
    let artifacts = artifacts
        .iter()
        .map(|p| {
            Ok(Artifact {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    append_jsonl(
        &cfg.output_dir.join("manifest.jsonl"),
        &ManifestRecord {
            command,
            seed,
            config: cfg,
            artifacts,
        },
    )
}

#[derive(Debug, Serialize)]
struct MetricsRecord {
    step: u64,
    fm: f64,
    freqfm: f64,
    total: f64,
    wall_time: f64,
}

/// Batch indices for `step`, drawn with replacement from a stream that
/// depends only on the seed and the step.
pub fn batch_indices(seed: u64, step: u64, dataset_len: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6261_7463_6865_7321);
    rng.set_stream(step);
    (0..batch).map(|_| rng.random_range(0..dataset_len)).collect()
}

/// Saves parameters, EMA shadow and AdamW moments.
pub fn trainer_checkpoint<T: Scalar>(trainer: &Trainer<T>) -> Checkpoint {
    let mut c = Checkpoint::new(trainer.step_count());
    for (i, (name, value)) in trainer.params.iter().enumerate() {
        c.push(format!("param/{name}"), value);
        c.push(format!("ema/{name}"), &trainer.ema.shadow[i]);
        c.push(format!("adam_m/{name}"), &trainer.optimizer.m[i]);
        c.push(format!("adam_v/{name}"), &trainer.optimizer.v[i]);
    }
    c
}

pub fn restore_trainer<T: Scalar>(trainer: &mut Trainer<T>, ckpt: &Checkpoint) -> anyhow::Result<()> {
    let names: Vec<String> = trainer.params.iter().map(|(n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let p: Tensor<T> = ckpt.tensor(&format!("param/{name}"))?;
        trainer.params.set(name, p)?;
        let shape = trainer.params.values()[i].shape().to_vec();
        for (prefix, slot) in [
            ("ema", &mut trainer.ema.shadow[i]),
            ("adam_m", &mut trainer.optimizer.m[i]),
            ("adam_v", &mut trainer.optimizer.v[i]),
        ] {
            let t: Tensor<T> = ckpt.tensor(&format!("{prefix}/{name}"))?;
            if t.shape() != shape.as_slice() {
                bail!("{prefix}/{name}: shape {:?} does not match parameter {:?}", t.shape(), shape);
            }
            *slot = t;
        }
    }
    trainer.optimizer.step = ckpt.step;
    Ok(())
}

/// Parameters for sampling: the EMA shadow when present, else the raw weights.
pub fn params_from_checkpoint<T: Scalar>(model_cfg: &ModelConfig, ckpt: &Checkpoint, ema: bool) -> anyhow::Result<(Generator<T>, ParamStore<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (model, mut params) = Generator::<T>::new(model_cfg, &mut rng)?;
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let prefix = if ema { "ema" } else { "param" };
    for name in names {
        let t: Tensor<T> = ckpt.tensor(&format!("{prefix}/{name}"))?;
        params.set(&name, t)?;
    }
    Ok((model, params))
}

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join("checkpoints").join(format!("step_{step:08}.ckpt"))
}

pub fn latest_checkpoint(out: &Path) -> PathBuf {
    out.join("checkpoints").join("latest.ckpt")
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub trainer: Trainer<T>,
    pub reports: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Runs training steps until `cfg.training.steps` (an absolute step count),
/// optionally continuing from a checkpoint. Metrics and checkpoints go to
/// `cfg.output_dir`.
pub fn train<T: Scalar>(cfg: &RunConfig, dataset: &LabeledImages, resume: Option<&Path>) -> anyhow::Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut trainer = Trainer::<T>::new(&cfg.model, &cfg.training)?;
    if let Some(path) = resume {
        let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        restore_trainer(&mut trainer, &ckpt)?;
    }
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let metrics = out.join("metrics.jsonl");
    let every = cfg.training.checkpoint_every;
    let start = Instant::now();
    let mut reports = Vec::new();
    let mut checkpoints = Vec::new();
    while trainer.step_count() < cfg.training.steps {
        let idx = batch_indices(cfg.training.seed, trainer.step_count(), dataset.len(), cfg.training.batch_size);
        let (x, y) = dataset.batch(&idx);
        let report = trainer.step(&x.cast(), &y)?;
        append_jsonl(
            &metrics,
            &MetricsRecord {
                step: report.step,
                fm: report.fm,
                freqfm: report.freqfm,
                total: report.total,
                wall_time: start.elapsed().as_secs_f64(),
            },
        )?;
        reports.push(report);
        let step = trainer.step_count();
        if step % every == 0 || step == cfg.training.steps {
            let ckpt = trainer_checkpoint(&trainer);
            let path = checkpoint_path(out, step);
            ckpt.save(&path)?;
            ckpt.save(&latest_checkpoint(out))?;
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome {
        trainer,
        reports,
        checkpoints,
    })
}

/// Labels `0, 1, …, K−1, 0, 1, …` for `count` samples.
pub fn cyclic_labels(count: usize, num_classes: usize) -> Vec<usize> {
    (0..count).map(|i| i % num_classes).collect()
}

#[derive(Debug, Clone)]
pub struct SampleRun<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub nfe: usize,
    /// `[E, B, H/p, W/p, D]` over conditional evaluations, when captured.
    pub features: Option<Tensor<T>>,
    /// `[E, B, H, W, C]`, when captured.
    pub velocities: Option<Tensor<T>>,
}

pub fn run_sampler<T: Scalar>(
    model: &Generator<T>,
    params: &ParamStore<T>,
    labels: &[usize],
    config: &SamplerConfig,
    capture: bool,
) -> anyhow::Result<SampleRun<T>> {
    let dit = &model.dit().config;
    let mut vm = GeneratorModel::new(model, params);
    vm.capture = capture;
    let out = sampler::sample(&mut vm, labels, [dit.image_height, dit.image_width, dit.channels], config)?;
    let (features, velocities) = if capture {
        (Some(Tensor::stack(&vm.features)?), Some(Tensor::stack(&vm.velocities)?))
    } else {
        (None, None)
    };
    Ok(SampleRun {
        images: out.images,
        labels: labels.to_vec(),
        nfe: out.nfe,
        features,
        velocities,
    })
}

/// Splits an `[E, B, H, W, C]` (or `[N, H, W, C]`) stack into `[H, W, C]`
/// items and accumulates their spectrum.
pub fn spectrum_of_stack<T: Scalar>(stack: &Tensor<T>, block: usize) -> anyhow::Result<EnergySpectrum> {
    let s = stack.shape();
    if s.len() < 3 {
        bail!("expected at least [H, W, C], got {s:?}");
    }
    let item = &s[s.len() - 3..];
    let per: usize = item.iter().product();
    let mut acc = SpectrumAccumulator::new(block)?;
    for chunk in stack.data().chunks_exact(per.max(1)) {
        acc.add(&Tensor::new(item.to_vec(), chunk.to_vec())?)?;
    }
    Ok(acc.finish())
}
