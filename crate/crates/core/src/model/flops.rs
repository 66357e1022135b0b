//! Operation counts.
//!
//! A convolution without bias producing an `H x W x C_o` map from `C_i`
//! channels with a `K x K` kernel costs `C_i*K^2` multiplications and
//! `C_i*K^2 - 1` additions per output element:
//!
//! ```text
//! flops = (C_i*K^2 + C_i*K^2 - 1) * H * W * C_o
//! ```
//!
//! A bias adds one more addition per output element. The report also gives
//! the multiply-accumulate count (`C_i*K^2*H*W*C_o`), the other convention in
//! common use. Work that only exists because kernels are generated at run
//! time (the control module and the kernel assembly) is reported separately
//! as dynamic overhead; it does not scale with the image size apart from the
//! pooling.

use serde::Serialize;

use super::{layer_graph, LayerRecord, ModelConfig};
use crate::error::{Error, Result};

/// Multiplications plus additions of one convolution layer.
pub fn conv_flops(c_in: u64, c_out: u64, k: u64, h: u64, w: u64, bias: bool) -> u64 {
    let per_output = 2 * c_in * k * k - 1 + u64::from(bias);
    per_output * h * w * c_out
}

/// Multiply-accumulates of one convolution layer.
pub fn conv_macs(c_in: u64, c_out: u64, k: u64, h: u64, w: u64) -> u64 {
    c_in * k * k * h * w * c_out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerFlops {
    pub name: String,
    /// `conv`, `adaptive_conv`, `control` or `assembly`.
    pub kind: &'static str,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub height: usize,
    pub width: usize,
    pub flops: u64,
    pub macs: u64,
}

impl LayerFlops {
    pub fn is_overhead(&self) -> bool {
        matches!(self.kind, "control" | "assembly")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerFlops>,
    pub conv_flops: u64,
    pub conv_macs: u64,
    pub overhead_flops: u64,
    pub overhead_macs: u64,
    pub total_flops: u64,
    pub total_macs: u64,
}

/// Per-layer and total operation counts for one `height x width` RGB input
/// (batch size 1).
pub fn flops_estimate(config: &ModelConfig, height: usize, width: usize) -> Result<FlopsReport> {
    config.validate()?;
    let r = config.unshuffle_factor;
    for (what, value) in [("height", height), ("width", width)] {
        if value == 0 || value % r != 0 {
            return Err(Error::Divisibility {
                op: "flops_estimate",
                what,
                value,
                divisor: r,
            });
        }
    }
    let (h, w) = (height / r, width / r);
    let (h64, w64) = (h as u64, w as u64);
    let mut layers = Vec::new();
    for rec in layer_graph(config) {
        match rec {
            LayerRecord::Conv {
                name,
                c_in,
                c_out,
                k,
                bias,
            } => layers.push(LayerFlops {
                name,
                kind: "conv",
                c_in,
                c_out,
                k,
                height: h,
                width: w,
                flops: conv_flops(c_in as u64, c_out as u64, k as u64, h64, w64, bias),
                macs: conv_macs(c_in as u64, c_out as u64, k as u64, h64, w64),
            }),
            LayerRecord::Control {
                name,
                c_in,
                outputs,
                bias,
            } => {
                let pool = (c_in * h * w) as u64;
                layers.push(LayerFlops {
                    name,
                    kind: "control",
                    c_in,
                    c_out: outputs,
                    k: 1,
                    height: 1,
                    width: 1,
                    flops: pool + conv_flops(c_in as u64, outputs as u64, 1, 1, 1, bias),
                    macs: pool + conv_macs(c_in as u64, outputs as u64, 1, 1, 1),
                });
            }
            LayerRecord::AdaptiveConv {
                name,
                c_in,
                c_out,
                k,
                num_bases,
                bias,
                ..
            } => {
                // [M, E] x [E, N] with M*N = C_o*C_i*K^2 in both mixing modes.
                let e = num_bases as u64;
                let mn = (c_out * c_in * k * k) as u64;
                layers.push(LayerFlops {
                    name: format!("{name}.assembly"),
                    kind: "assembly",
                    c_in,
                    c_out,
                    k,
                    height: 1,
                    width: 1,
                    flops: (2 * e - 1) * mn,
                    macs: e * mn,
                });
                layers.push(LayerFlops {
                    name,
                    kind: "adaptive_conv",
                    c_in,
                    c_out,
                    k,
                    height: h,
                    width: w,
                    flops: conv_flops(c_in as u64, c_out as u64, k as u64, h64, w64, bias),
                    macs: conv_macs(c_in as u64, c_out as u64, k as u64, h64, w64),
                });
            }
            LayerRecord::PixelUnshuffle { .. }
            | LayerRecord::PixelShuffle { .. }
            | LayerRecord::Activation
            | LayerRecord::AddRepeatUpscaled { .. } => {}
        }
    }
    let sum = |overhead: bool, f: fn(&LayerFlops) -> u64| -> u64 {
        layers
            .iter()
            .filter(|l| l.is_overhead() == overhead)
            .map(f)
            .sum()
    };
    let conv_flops_total = sum(false, |l| l.flops);
    let conv_macs_total = sum(false, |l| l.macs);
    let overhead_flops = sum(true, |l| l.flops);
    let overhead_macs = sum(true, |l| l.macs);
    Ok(FlopsReport {
        input_height: height,
        input_width: width,
        conv_flops: conv_flops_total,
        conv_macs: conv_macs_total,
        overhead_flops,
        overhead_macs,
        total_flops: conv_flops_total + overhead_flops,
        total_macs: conv_macs_total + overhead_macs,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConvMode;

    #[test]
    fn hand_evaluated_counts() {
        assert_eq!(conv_flops(1, 1, 1, 1, 1, false), 1);
        assert_eq!(conv_flops(3, 1, 1, 1, 1, false), 5);
        assert_eq!(conv_flops(12, 32, 3, 540, 960, false), 3_566_592_000);
        assert_eq!(conv_flops(1, 1, 1, 1, 1, true), 2);
    }

    #[test]
    fn head_of_small_preset_at_full_hd() {
        let rep = flops_estimate(&ModelConfig::asconvsr(), 1080, 1920).unwrap();
        let head = rep.layers.iter().find(|l| l.name == "head").unwrap();
        assert_eq!(head.flops, 3_566_592_000);
        assert_eq!(head.macs, 12 * 9 * 540 * 960 * 32);
    }

    #[test]
    fn conv_counts_scale_with_area() {
        let cfg = ModelConfig::asconvsr_l();
        let full = flops_estimate(&cfg, 1080, 1920).unwrap();
        let half = flops_estimate(&cfg, 540, 960).unwrap();
        for (a, b) in full.layers.iter().zip(&half.layers) {
            match a.kind {
                "conv" | "adaptive_conv" => assert_eq!(a.macs, 4 * b.macs),
                "assembly" => assert_eq!(a.flops, b.flops),
                _ => {}
            }
        }
    }

    #[test]
    fn plain_mode_has_no_overhead() {
        let cfg = ModelConfig {
            conv_mode: ConvMode::Plain,
            ..ModelConfig::asconvsr()
        };
        let rep = flops_estimate(&cfg, 64, 64).unwrap();
        assert_eq!(rep.overhead_flops, 0);
        assert_eq!(rep.layers.len(), 5);
    }

    #[test]
    fn divisibility() {
        assert!(flops_estimate(&ModelConfig::asconvsr(), 63, 64).is_err());
    }
}
