use crate::error::{Error, Result};
use crate::swin::SwinConfig;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub num_scales: usize,
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub style_dim: usize,
    pub gen_input_dim: usize,
    pub sc_blocks: usize,
    pub sc_reduce: usize,
    pub gap_dim: usize,
    pub eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            in_channels: 1,
            base_channels: 16,
            num_scales: 2,
            window: 4,
            heads: 2,
            mlp_ratio: 2,
            style_dim: 64,
            gen_input_dim: 16,
            sc_blocks: 8,
            sc_reduce: 2,
            gap_dim: 256,
            eps: 1e-5,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            in_channels: 3,
            base_channels: 32,
            num_scales: 3,
            window: 8,
            heads: 4,
            style_dim: 256,
            gen_input_dim: 32,
            gap_dim: 2048,
            ..Self::desk()
        }
    }

    /// Bottleneck width `C·2^s`.
    pub fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.num_scales
    }

    /// Channels inside the style-conversion blocks.
    pub fn sc_channels(&self) -> usize {
        self.bottleneck_channels() / self.sc_reduce
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        self.window << self.num_scales
    }

    pub fn swin(&self) -> SwinConfig {
        SwinConfig {
            window: self.window,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("base_channels", self.base_channels),
            ("num_scales", self.num_scales),
            ("window", self.window),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("style_dim", self.style_dim),
            ("gen_input_dim", self.gen_input_dim),
            ("sc_blocks", self.sc_blocks),
            ("sc_reduce", self.sc_reduce),
            ("gap_dim", self.gap_dim),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if !self.style_dim.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "style_dim {} not divisible by 4",
                self.style_dim
            )));
        }
        if !self.bottleneck_channels().is_multiple_of(self.sc_reduce) {
            return Err(Error::Config(format!(
                "bottleneck width {} not divisible by sc_reduce {}",
                self.bottleneck_channels(),
                self.sc_reduce
            )));
        }
        if !self.base_channels.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "base_channels {} not divisible by heads {}",
                self.base_channels, self.heads
            )));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 12] = [
        "in_channels",
        "base_channels",
        "num_scales",
        "window",
        "heads",
        "mlp_ratio",
        "style_dim",
        "gen_input_dim",
        "sc_blocks",
        "sc_reduce",
        "gap_dim",
        "eps",
    ];

    /// Assign one `key=value` setting; `Ok(false)` for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let slot = match key {
            "in_channels" => &mut self.in_channels,
            "base_channels" => &mut self.base_channels,
            "num_scales" => &mut self.num_scales,
            "window" => &mut self.window,
            "heads" => &mut self.heads,
            "mlp_ratio" => &mut self.mlp_ratio,
            "style_dim" => &mut self.style_dim,
            "gen_input_dim" => &mut self.gen_input_dim,
            "sc_blocks" => &mut self.sc_blocks,
            "sc_reduce" => &mut self.sc_reduce,
            "gap_dim" => &mut self.gap_dim,
            "eps" => {
                self.eps = parse_num(key, value)?;
                return Ok(true);
            }
            _ => return Ok(false),
        };
        *slot = parse_num(key, value)?;
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "in_channels" => self.in_channels.to_string(),
            "base_channels" => self.base_channels.to_string(),
            "num_scales" => self.num_scales.to_string(),
            "window" => self.window.to_string(),
            "heads" => self.heads.to_string(),
            "mlp_ratio" => self.mlp_ratio.to_string(),
            "style_dim" => self.style_dim.to_string(),
            "gen_input_dim" => self.gen_input_dim.to_string(),
            "sc_blocks" => self.sc_blocks.to_string(),
            "sc_reduce" => self.sc_reduce.to_string(),
            "gap_dim" => self.gap_dim.to_string(),
            "eps" => format!("{:?}", self.eps),
            _ => return None,
        })
    }
}

pub(crate) fn parse_num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}
