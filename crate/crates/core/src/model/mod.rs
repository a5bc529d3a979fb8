//! Multi-resolution encoder-decoder captioner.

mod beam;
mod captioner;
pub mod layers;

pub use beam::{beam_search, greedy, sample, BeamConfig, Hypothesis, NextToken};
pub use captioner::{Captioner, Decoding, Fused, Memory, ModelInput};
pub use layers::{positional_encoding, soft_route};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::ModelError;

/// How the per-resolution token sets are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// Method 1: concatenate all token sets, one shared encoder, one decoder.
    Concat,
    /// Method 2: one encoder per resolution, outputs concatenated, one decoder.
    StackedEncoders,
    /// Method 3: one shared encoder, one decoder per resolution, soft-routed.
    SharedEncoderRouted,
    /// Method 4: one encoder and one decoder per resolution, soft-routed.
    PerResolutionRouted,
}

impl Fusion {
    pub const ALL: [Fusion; 4] =
        [Fusion::Concat, Fusion::StackedEncoders, Fusion::SharedEncoderRouted, Fusion::PerResolutionRouted];

    pub fn flag(self) -> &'static str {
        match self {
            Fusion::Concat => "m1",
            Fusion::StackedEncoders => "m2",
            Fusion::SharedEncoderRouted => "m3",
            Fusion::PerResolutionRouted => "m4",
        }
    }

    pub fn from_flag(s: &str) -> Result<Self, ModelError> {
        Self::ALL
            .into_iter()
            .find(|f| f.flag() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown fusion method {s:?} (expected m1..m4)")))
    }

    pub fn per_resolution_encoders(self) -> bool {
        matches!(self, Fusion::StackedEncoders | Fusion::PerResolutionRouted)
    }

    pub fn routed(self) -> bool {
        matches!(self, Fusion::SharedEncoderRouted | Fusion::PerResolutionRouted)
    }

    pub fn encoder_count(self, resolutions: usize) -> usize {
        if self.per_resolution_encoders() {
            resolutions
        } else {
            1
        }
    }

    pub fn decoder_count(self, resolutions: usize) -> usize {
        if self.routed() {
            resolutions
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    /// Equal to the region feature dimension; features enter without projection.
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub resolutions: Vec<usize>,
    pub fusion: Fusion,
    pub use_global: bool,
    /// Maximum caption length in words.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 8,
            d_model: 512,
            d_ff: 2048,
            vocab_size: 10_000,
            resolutions: alloc::vec![10, 25],
            fusion: Fusion::StackedEncoders,
            use_global: true,
            max_len: 20,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return fail("d_model must be a positive multiple of heads");
        }
        if self.vocab_size < 4 {
            return fail("vocab_size must cover the four special tokens");
        }
        if self.d_ff == 0 {
            return fail("d_ff must be positive");
        }
        if self.resolutions.is_empty() || self.resolutions.contains(&0) {
            return fail("resolutions must be a non-empty list of positive K");
        }
        if self.max_len == 0 {
            return fail("max_len must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let res: Vec<String> = self.resolutions.iter().map(ToString::to_string).collect();
        format!(
            "layers={}\nheads={}\nd_model={}\nd_ff={}\nvocab_size={}\nresolutions={}\nfusion={}\nuse_global={}\nmax_len={}\n",
            self.layers,
            self.heads,
            self.d_model,
            self.d_ff,
            self.vocab_size,
            res.join(","),
            self.fusion.flag(),
            self.use_global,
            self.max_len
        )
    }

    /// Parses [`ModelConfig::to_kv`] output. Missing keys keep their defaults; blank
    /// lines and `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut cfg = Self::default();
        let bad = |k: &str, v: &str| ModelError::Config(format!("bad value {v:?} for {k}"));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || v.parse::<usize>().map_err(|_| bad(k, v));
            match k {
                "layers" => cfg.layers = num()?,
                "heads" => cfg.heads = num()?,
                "d_model" => cfg.d_model = num()?,
                "d_ff" => cfg.d_ff = num()?,
                "vocab_size" => cfg.vocab_size = num()?,
                "max_len" => cfg.max_len = num()?,
                "fusion" => cfg.fusion = Fusion::from_flag(v)?,
                "use_global" => cfg.use_global = v.parse().map_err(|_| bad(k, v))?,
                "resolutions" => {
                    cfg.resolutions = v
                        .split(',')
                        .map(|s| s.trim().parse::<usize>().map_err(|_| bad(k, v)))
                        .collect::<Result<_, _>>()?
                }
                _ => return Err(ModelError::Config(format!("unknown key {k:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
