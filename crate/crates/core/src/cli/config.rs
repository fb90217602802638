//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::objective::{LossWeights, TrainConfig};
use crate::sdidnet::{parse_num, ModelConfig};
use crate::synthdata::{DataConfig, ImageKind};

/// Everything a run needs: architecture, schedule, dataset, paths and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub batch: usize,
    pub crop: usize,
    pub steps: u64,
    pub lr_main: f64,
    pub lr_gen: f64,
    pub lr_min: f64,
    pub weights: LossWeights,
    pub clip: f64,
    /// Draw new noise for every training crop instead of reusing the stored noisy image.
    pub fresh_noise: bool,
    pub val_interval: u64,
    pub ckpt_interval: u64,
    pub log_interval: u64,
    pub val_samples: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub image_size: usize,
    pub kind: ImageKind,
    /// Noise levels on the 0–255 scale.
    pub sigmas: Vec<f64>,
    pub seed: u64,
    pub data: PathBuf,
    pub out: PathBuf,
}

/// Every key with its meaning, in rendering order.
pub const KEYS: &[(&str, &str)] = &[
    ("in_channels", "image channels (1 gray, 3 color)"),
    ("base_channels", "encoder width C at full resolution"),
    (
        "num_scales",
        "down/up stages s; bottleneck is C*2^s at H/2^s",
    ),
    ("window", "attention window M"),
    ("heads", "attention heads"),
    ("mlp_ratio", "hidden width multiplier of the attention MLP"),
    ("style_dim", "style vector length"),
    ("gen_input_dim", "latent size of the style generator"),
    ("sc_blocks", "AdaIN blocks N in style conversion"),
    ("sc_reduce", "channel reduction inside style conversion"),
    ("gap_dim", "extractor width before pooling"),
    ("eps", "normalization epsilon"),
    ("batch", "training batch size"),
    (
        "crop",
        "training crop size, a multiple of window*2^num_scales",
    ),
    ("steps", "total optimizer steps"),
    ("lr_main", "peak learning rate of the main optimizer"),
    ("lr_gen", "peak learning rate of the generator optimizer"),
    ("lr_min", "final learning rate of the cosine schedule"),
    ("lambda1", "weight of the three identity terms"),
    ("lambda2", "weight of the two denoising terms"),
    ("lambda_sty", "weight of the style regression"),
    ("clip", "global gradient norm cap, 0 disables"),
    (
        "fresh_noise",
        "redraw noise for every training crop (true/false)",
    ),
    ("val_interval", "steps between validation PSNR evaluations"),
    ("ckpt_interval", "steps between numbered checkpoints"),
    ("log_interval", "steps between metrics rows"),
    ("val_samples", "validation images used for the logged PSNR"),
    ("train_count", "training images in a generated dataset"),
    ("val_count", "validation images in a generated dataset"),
    ("image_size", "side of generated images"),
    ("kind", "content: gradient, shapes, sinusoid or mixed"),
    ("sigmas", "noise levels on the 0-255 scale, comma separated"),
    (
        "seed",
        "seed of data generation, initialization and training",
    ),
    (
        "data",
        "training archive; validation is read from its .val.sdat sibling",
    ),
    ("out", "output file or directory"),
];

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small grayscale setting for CPU runs.
    pub fn desk() -> Self {
        let t = TrainConfig::default();
        let d = DataConfig::default();
        RunConfig {
            model: ModelConfig::desk(),
            batch: t.batch,
            crop: t.crop,
            steps: t.steps,
            lr_main: t.lr_main,
            lr_gen: t.lr_gen,
            lr_min: t.lr_min,
            weights: t.weights,
            clip: t.clip,
            fresh_noise: true,
            val_interval: t.val_interval,
            ckpt_interval: t.ckpt_interval,
            log_interval: t.log_interval,
            val_samples: t.val_samples,
            train_count: d.train_count,
            val_count: d.val_count,
            image_size: d.image_size,
            kind: d.kind,
            sigmas: d.sigmas,
            seed: 0,
            data: PathBuf::from("data.sdat"),
            out: PathBuf::from("run"),
        }
    }

    /// Full-size color setting.
    pub fn paper() -> Self {
        RunConfig {
            model: ModelConfig::paper(),
            batch: 6,
            crop: 128,
            lr_gen: 1e-6,
            image_size: 160,
            ..Self::desk()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            crop: self.crop,
            steps: self.steps,
            lr_main: self.lr_main,
            lr_gen: self.lr_gen,
            lr_min: self.lr_min,
            seed: self.seed,
            sigmas: if self.fresh_noise {
                self.sigmas.clone()
            } else {
                Vec::new()
            },
            weights: self.weights,
            clip: self.clip,
            val_interval: self.val_interval,
            ckpt_interval: self.ckpt_interval,
            log_interval: self.log_interval,
            val_samples: self.val_samples,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            train_count: self.train_count,
            val_count: self.val_count,
            image_size: self.image_size,
            channels: self.model.in_channels,
            kind: self.kind,
            sigmas: self.sigmas.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train_config().validate(self.model.size_multiple())?;
        if self.sigmas.is_empty() {
            return Err(Error::Config("sigmas must list at least one level".into()));
        }
        if self.image_size < self.crop {
            return Err(Error::Config(format!(
                "image_size {} smaller than crop {}",
                self.image_size, self.crop
            )));
        }
        Ok(())
    }

    /// Assign one key; unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let v = value.trim();
        match key {
            "batch" => self.batch = parse_num(key, v)?,
            "crop" => self.crop = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "lr_main" => self.lr_main = parse_num(key, v)?,
            "lr_gen" => self.lr_gen = parse_num(key, v)?,
            "lr_min" => self.lr_min = parse_num(key, v)?,
            "lambda1" => self.weights.lambda1 = parse_num(key, v)?,
            "lambda2" => self.weights.lambda2 = parse_num(key, v)?,
            "lambda_sty" => self.weights.lambda_sty = parse_num(key, v)?,
            "clip" => self.clip = parse_num(key, v)?,
            "fresh_noise" => self.fresh_noise = parse_num(key, v)?,
            "val_interval" => self.val_interval = parse_num(key, v)?,
            "ckpt_interval" => self.ckpt_interval = parse_num(key, v)?,
            "log_interval" => self.log_interval = parse_num(key, v)?,
            "val_samples" => self.val_samples = parse_num(key, v)?,
            "train_count" => self.train_count = parse_num(key, v)?,
            "val_count" => self.val_count = parse_num(key, v)?,
            "image_size" => self.image_size = parse_num(key, v)?,
            "kind" => self.kind = v.parse()?,
            "sigmas" => {
                self.sigmas = v
                    .split(',')
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?
            }
            "seed" => self.seed = parse_num(key, v)?,
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = self.model.get(key) {
            return Some(v);
        }
        Some(match key {
            "batch" => self.batch.to_string(),
            "crop" => self.crop.to_string(),
            "steps" => self.steps.to_string(),
            "lr_main" => format!("{:?}", self.lr_main),
            "lr_gen" => format!("{:?}", self.lr_gen),
            "lr_min" => format!("{:?}", self.lr_min),
            "lambda1" => format!("{:?}", self.weights.lambda1),
            "lambda2" => format!("{:?}", self.weights.lambda2),
            "lambda_sty" => format!("{:?}", self.weights.lambda_sty),
            "clip" => format!("{:?}", self.clip),
            "fresh_noise" => self.fresh_noise.to_string(),
            "val_interval" => self.val_interval.to_string(),
            "ckpt_interval" => self.ckpt_interval.to_string(),
            "log_interval" => self.log_interval.to_string(),
            "val_samples" => self.val_samples.to_string(),
            "train_count" => self.train_count.to_string(),
            "val_count" => self.val_count.to_string(),
            "image_size" => self.image_size.to_string(),
            "kind" => self.kind.name().to_string(),
            "sigmas" => self
                .sigmas
                .iter()
                .map(|s| format!("{s:?}"))
                .collect::<Vec<_>>()
                .join(","),
            "seed" => self.seed.to_string(),
            "data" => self.data.display().to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Parse config text over the desk defaults. A `preset = desk|paper` line,
    /// if present, must come first and selects the base values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::desk();
        let mut seen_key = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                if seen_key {
                    return Err(Error::Config("preset must be the first key".into()));
                }
                cfg = match v {
                    "desk" => RunConfig::desk(),
                    "paper" => RunConfig::paper(),
                    _ => return Err(Error::Config(format!("unknown preset {v:?}"))),
                };
            } else {
                cfg.set(k, v)
                    .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
            }
            seen_key = true;
        }
        Ok(cfg)
    }

    /// Every key with a comment line; [`RunConfig::parse`] inverts it.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, doc) in KEYS {
            let v = self.get(k).expect("listed key");
            let _ = writeln!(s, "# {doc}\n{k} = {v}");
        }
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
