//! Flat key/value configuration shared by every command.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use camsig_core::encoders::ModelConfig;
use camsig_core::exif::{TagOrder, TextFormat};
use camsig_core::probe::{Preprocess, ProbeConfig};
use camsig_core::train::{Schedule, SupervisionMode, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbePreprocess {
    Crop,
    Resize,
}

/// Every tunable, one namespace. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,

    // model
    pub patch_side: usize,
    pub embed_dim: usize,

    // training
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    /// `full-exif`, `description`, `cropclr` or `tag:<name>`.
    pub supervision: String,
    pub tag_order: TagOrder,
    pub tag_names: bool,
    /// Stop after this many optimizer steps; 0 runs the full schedule.
    pub max_steps: u64,
    pub eval_batches: usize,
    /// Share of manifest rows (by id hash) kept out of training.
    pub eval_fraction: f64,

    // analysis
    pub grid: usize,
    /// Scoring temperature; 0 uses the checkpoint's.
    pub analyze_tau: f64,
    pub use_cache: bool,

    // probes
    pub probe_preprocess: ProbePreprocess,
    pub probe_side: u32,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    pub probe_holdout: f64,
    /// Tags to probe; empty means every registry tag.
    pub probe_tags: Vec<String>,
    pub distortion_copies: usize,

    // synthetic data
    pub per_camera: usize,
    pub image_size: u32,
    pub composites: usize,
    pub pristine: usize,
    pub composite_size: u32,
    pub splice_min: f64,
    pub splice_max: f64,
}

impl Default for Config {
    fn default() -> Self {
        let train = TrainConfig::default();
        let model = ModelConfig::default();
        let probe = ProbeConfig::default();
        Config {
            seed: 0,
            patch_side: model.patch.patch_side,
            embed_dim: model.patch.embed_dim,
            tau: train.tau,
            batch_size: train.batch_size,
            epochs: train.epochs,
            lr: train.lr,
            weight_decay: train.weight_decay,
            schedule: train.schedule,
            supervision: "full-exif".into(),
            tag_order: TagOrder::Fixed,
            tag_names: true,
            max_steps: 0,
            eval_batches: train.eval_batches,
            eval_fraction: 0.1,
            grid: camsig_core::patch::DEFAULT_GRID_LONGEST,
            analyze_tau: 0.0,
            use_cache: true,
            probe_preprocess: ProbePreprocess::Crop,
            probe_side: 96,
            probe_epochs: probe.epochs,
            probe_lr: probe.lr,
            probe_batch: probe.batch_size,
            probe_holdout: probe.holdout,
            probe_tags: Vec::new(),
            distortion_copies: 4,
            per_camera: 16,
            image_size: 128,
            composites: 0,
            pristine: 0,
            composite_size: 192,
            splice_min: 0.05,
            splice_max: 0.40,
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML literal, falling
/// back to a bare string.
fn literal(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Config {
    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| UsageError(format!("override {o:?} is not key=value")))?;
            table.insert(k.trim().to_string(), literal(v.trim()));
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(format!("config: {}", e.message())))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        self.supervision_mode()?;
        if !(0.0..1.0).contains(&self.eval_fraction) {
            bail!(UsageError("eval_fraction must be in [0, 1)".into()));
        }
        if self.patch_side == 0 || self.grid == 0 || self.probe_side == 0 {
            bail!(UsageError(
                "patch_side, grid and probe_side must be positive".into()
            ));
        }
        Ok(())
    }

    /// Every accepted key.
    pub fn keys() -> std::collections::BTreeSet<String> {
        toml::Table::try_from(Config::default())
            .expect("config serializes")
            .keys()
            .cloned()
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 8 hex digits of the SHA-256 of the effective config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))[..8].to_string()
    }

    pub fn supervision_mode(&self) -> Result<SupervisionMode> {
        Ok(match self.supervision.as_str() {
            "full-exif" => SupervisionMode::FullExif,
            "description" => SupervisionMode::Description,
            "cropclr" => SupervisionMode::CropClr,
            s => match s.strip_prefix("tag:") {
                Some(t) if !t.trim().is_empty() => SupervisionMode::SingleTag(t.trim().to_string()),
                _ => return Err(anyhow!(UsageError(format!("unknown supervision {s:?}")))),
            },
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            tau: self.tau,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            schedule: self.schedule,
            supervision: self.supervision_mode()?,
            text_format: TextFormat {
                order: self.tag_order,
                names: self.tag_names,
            },
            seed: self.seed,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
            eval_batches: self.eval_batches,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = ModelConfig::default();
        m.patch.patch_side = self.patch_side;
        m.patch.embed_dim = self.embed_dim;
        m.text.embed_dim = self.embed_dim;
        m.tau = self.tau;
        m
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            lr: self.probe_lr,
            batch_size: self.probe_batch,
            epochs: self.probe_epochs,
            holdout: self.probe_holdout,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn preprocess(&self) -> Preprocess {
        match self.probe_preprocess {
            ProbePreprocess::Crop => Preprocess::CenterCrop(self.probe_side),
            ProbePreprocess::Resize => Preprocess::Resize(self.probe_side),
        }
    }
}
