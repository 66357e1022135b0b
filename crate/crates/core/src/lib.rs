//! AsConvSR: a real-time single-image super-resolution network built around
//! assembled convolutions, with everything needed to train it at desk scale
//! and measure it.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense arrays, convolution, matmul, pooling and their gradients.
//! * [`nn`]: pixel (un)shuffle, repeat upscaling, parameter storage, plain
//!   convolution layers and initialisation.
//! * [`assembled`]: the control module, kernel assembly and per-sample
//!   grouped convolution, plus the dynamic-convolution baseline.
//! * [`model`]: the full network, its parameter counter and FLOPs estimator.
//! * [`train`]: Charbonnier loss, Adam, patch sampling, the training loop and
//!   checkpoints.
//! * [`metrics`]: PSNR, SSIM, bicubic resampling, the efficiency score and
//!   the latency harness.

pub mod assembled;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use metrics::{bicubic_resize, efficiency_score, psnr_rgb, ssim_rgb, BenchConfig, BenchReport};
pub use model::{flops_estimate, AsConvSr, FlopsReport, ModelConfig};
pub use rng::{Rng, RngState};
pub use tensor::{DType, Element, Tensor};
pub use train::{Checkpoint, PairSet, TrainConfig, TrainRecord, Trainer};
