use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use deco_core::flow::TrainConfig;
use deco_core::model::ModelConfig;
use deco_core::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub image_size: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub sampling: SamplerConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    /// Images generated by `sample`.
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
}

fn default_sample_count() -> usize {
    64
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let size = model.dit.image_height;
        let classes = model.dit.num_classes;
        RunConfig {
            model,
            training: TrainConfig::default(),
            sampling: SamplerConfig::default(),
            data: DataConfig {
                source: DataSource::Synthetic(SyntheticSpec {
                    num_classes: classes,
                    image_size: size,
                    ..SyntheticSpec::default()
                }),
                image_size: size,
                num_classes: classes,
            },
            output_dir: PathBuf::from("runs/default"),
            precision: Precision::F32,
            sample_count: 64,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.model.violations();
        out.extend(self.training.violations());
        out.extend(self.sampling.violations());
        let dit = &self.model.dit;
        let size = self.data.image_size;
        if size == 0 || !size.is_multiple_of(8) {
            out.push(format!("data.image_size ({size}) must be a positive multiple of 8"));
        }
        if dit.image_height != size || dit.image_width != size {
            out.push(format!(
                "model.dit image extents {}x{} must equal data.image_size ({size})",
                dit.image_height, dit.image_width
            ));
        }
        if dit.num_classes != self.data.num_classes {
            out.push(format!(
                "model.dit.num_classes ({}) must equal data.num_classes ({})",
                dit.num_classes, self.data.num_classes
            ));
        }
        if dit.channels != 3 {
            out.push(format!("model.dit.channels must be 3, got {}", dit.channels));
        }
        match &self.data.source {
            DataSource::Synthetic(spec) => {
                if spec.image_size != size {
                    out.push(format!("synthetic image_size ({}) must equal data.image_size ({size})", spec.image_size));
                }
                if spec.num_classes != self.data.num_classes {
                    out.push(format!(
                        "synthetic num_classes ({}) must equal data.num_classes ({})",
                        spec.num_classes, self.data.num_classes
                    ));
                }
                out.extend(spec.violations());
            }
            DataSource::Directory { path } => {
                if !path.is_dir() {
                    out.push(format!("data directory {} does not exist", path.display()));
                }
            }
        }
        if self.sample_count == 0 {
            out.push("sample_count must be positive".to_string());
        }
        out
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let v = self.violations();
        if v.is_empty() {
            return Ok(());
        }
        let list: Vec<String> = v.iter().map(|s| format!("  - {s}")).collect();
        bail!("invalid configuration:\n{}", list.join("\n"))
    }
}
