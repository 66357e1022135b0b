use std::fmt;
use std::str::FromStr;

use crate::assembled::CoeffNormalization;
use crate::error::{Error, Result};
use crate::nn::InitScheme;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvMode {
    /// Ordinary learned 3x3 convolutions.
    Plain,
    /// Whole-kernel mixing with one coefficient vector per sample.
    Dynamic,
    /// Per-output-channel mixing of shared candidate kernels.
    #[default]
    Assembled,
}

impl FromStr for ConvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ConvMode::Plain),
            "dynamic" => Ok(ConvMode::Dynamic),
            "assembled" => Ok(ConvMode::Assembled),
            other => Err(Error::InvalidArgument(format!(
                "unknown conv_mode `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ConvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvMode::Plain => "plain",
            ConvMode::Dynamic => "dynamic",
            ConvMode::Assembled => "assembled",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    None,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "none" => Ok(Activation::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::None => "none",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Upscaling factor; only 2 is supported.
    pub scale: usize,
    /// Pixel-unshuffle factor `r` applied to the input, 1 to 4.
    pub unshuffle_factor: usize,
    pub channels: usize,
    pub num_blocks: usize,
    /// Candidate kernels per adaptive convolution (`E`).
    pub num_bases: usize,
    pub kernel_size: usize,
    pub conv_mode: ConvMode,
    /// Biases on the head, block and tail convolutions.
    pub bias_enabled: bool,
    /// Adds each block's input to its output.
    pub residual_in_block: bool,
    pub coeff_normalization: CoeffNormalization,
    pub activation: Activation,
    /// One control module per block feeding all three convolutions, rather
    /// than one per convolution.
    pub shared_coefficients: bool,
    /// Bias on the control modules, independent of `bias_enabled`.
    pub control_bias: bool,
    /// Adds the repeat-upscaled input before the final shuffle.
    pub global_skip: bool,
    pub init: InitScheme,
    /// Start the tail convolution at zero, so a fresh model is exactly the
    /// skip path.
    pub zero_init_tail: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 2,
            unshuffle_factor: 2,
            channels: 32,
            num_blocks: 1,
            num_bases: 16,
            kernel_size: 3,
            conv_mode: ConvMode::Assembled,
            bias_enabled: false,
            residual_in_block: false,
            coeff_normalization: CoeffNormalization::None,
            activation: Activation::Relu,
            shared_coefficients: true,
            control_bias: true,
            global_skip: true,
            init: InitScheme::HeNormal,
            zero_init_tail: true,
        }
    }
}

pub(crate) fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    /// One assembled block of 32 channels.
    pub fn asconvsr() -> Self {
        ModelConfig::default()
    }

    /// Two assembled blocks of 128 channels with 128 candidate kernels.
    pub fn asconvsr_l() -> Self {
        ModelConfig {
            channels: 128,
            num_blocks: 2,
            num_bases: 128,
            ..ModelConfig::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "asconvsr" => Ok(Self::asconvsr()),
            "asconvsr-l" | "asconvsr_l" => Ok(Self::asconvsr_l()),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (expected asconvsr or asconvsr-l)"
            ))),
        }
    }

    /// Channels produced by the tail convolution: `3 * (scale * r)^2`,
    /// i.e. 48 for scale 2 and `r = 2`.
    pub fn tail_channels(&self) -> usize {
        3 * (self.scale * self.unshuffle_factor).pow(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.scale != 2 {
            return bad(format!("scale {} unsupported (only 2)", self.scale));
        }
        if !(1..=4).contains(&self.unshuffle_factor) {
            return bad(format!(
                "unshuffle_factor {} outside 1..=4",
                self.unshuffle_factor
            ));
        }
        if self.channels == 0 || self.num_blocks == 0 || self.num_bases == 0 {
            return bad("channels, num_blocks and num_bases must be >= 1".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        Ok(())
    }

    /// Flat `key = value` view, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("scale", self.scale.to_string()),
            ("unshuffle_factor", self.unshuffle_factor.to_string()),
            ("channels", self.channels.to_string()),
            ("num_blocks", self.num_blocks.to_string()),
            ("num_bases", self.num_bases.to_string()),
            ("kernel_size", self.kernel_size.to_string()),
            ("conv_mode", self.conv_mode.to_string()),
            ("bias_enabled", self.bias_enabled.to_string()),
            ("residual_in_block", self.residual_in_block.to_string()),
            ("coeff_normalization", self.coeff_normalization.to_string()),
            ("activation", self.activation.to_string()),
            ("shared_coefficients", self.shared_coefficients.to_string()),
            ("control_bias", self.control_bias.to_string()),
            ("global_skip", self.global_skip.to_string()),
            ("init", self.init.to_string()),
            ("zero_init_tail", self.zero_init_tail.to_string()),
        ]
    }

    /// Sets one field by name. Returns `Ok(false)` for keys this config
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "scale" => self.scale = parse(key, value)?,
            "unshuffle_factor" => self.unshuffle_factor = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "num_blocks" => self.num_blocks = parse(key, value)?,
            "num_bases" => self.num_bases = parse(key, value)?,
            "kernel_size" => self.kernel_size = parse(key, value)?,
            "conv_mode" => self.conv_mode = value.parse()?,
            "bias_enabled" => self.bias_enabled = parse(key, value)?,
            "residual_in_block" => self.residual_in_block = parse(key, value)?,
            "coeff_normalization" => self.coeff_normalization = value.parse()?,
            "activation" => self.activation = value.parse()?,
            "shared_coefficients" => self.shared_coefficients = parse(key, value)?,
            "control_bias" => self.control_bias = parse(key, value)?,
            "global_skip" => self.global_skip = parse(key, value)?,
            "init" => self.init = value.parse()?,
            "zero_init_tail" => self.zero_init_tail = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let s = ModelConfig::asconvsr();
        assert_eq!(
            (s.unshuffle_factor, s.channels, s.num_blocks, s.conv_mode),
            (2, 32, 1, ConvMode::Assembled)
        );
        let l = ModelConfig::asconvsr_l();
        assert_eq!(
            (l.unshuffle_factor, l.channels, l.num_blocks, l.num_bases),
            (2, 128, 2, 128)
        );
        assert_eq!(l.tail_channels(), 48);
        assert!(ModelConfig::preset("nope").is_err());
    }

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig::asconvsr_l();
        cfg.conv_mode = ConvMode::Dynamic;
        cfg.coeff_normalization = CoeffNormalization::Softmax;
        cfg.init = InitScheme::ResidualEquivalent;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.to_pairs() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, cfg);
        assert!(!back.set("lr0", "1").unwrap());
        assert!(back.set("channels", "many").is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.unshuffle_factor = 5;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig {
            scale: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
