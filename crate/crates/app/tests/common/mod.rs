#![allow(dead_code)]

use std::path::Path;

use deco_app::config::{DataConfig, DataSource, Precision, RunConfig};
use deco_app::data::SyntheticSpec;
use deco_core::flow::TrainConfig;
use deco_core::model::{DecoderConfig, DiTConfig, ModelConfig, Variant};
use deco_core::sampler::SamplerConfig;

/// An 8×8, 3-class run small enough to train in milliseconds per step.
pub fn tiny_config(out: &Path, variant: Variant) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            variant,
            dit: DiTConfig {
                depth: 1,
                hidden_dim: 16,
                heads: 2,
                patch_size: 4,
                num_classes: 3,
                image_height: 8,
                image_width: 8,
                channels: 3,
                ffn_hidden: 0,
                time_freq_dim: 16,
            },
            decoder: DecoderConfig {
                hidden_dim: 8,
                depth: 1,
                pos_dim: 8,
                time_freq_dim: 16,
                ..DecoderConfig::default()
            },
        },
        training: TrainConfig {
            batch_size: 4,
            steps: 20,
            lr: 1e-3,
            checkpoint_every: 10,
            ema_decay: 0.9,
            ..TrainConfig::default()
        },
        sampling: SamplerConfig {
            steps: 4,
            ..SamplerConfig::default()
        },
        data: DataConfig {
            source: DataSource::Synthetic(SyntheticSpec {
                num_classes: 3,
                image_size: 8,
                count: 24,
                noise: 0.05,
                seed: 1,
            }),
            image_size: 8,
            num_classes: 3,
        },
        output_dir: out.to_path_buf(),
        precision: Precision::F64,
        sample_count: 6,
    }
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.to_toml()).unwrap();
}
