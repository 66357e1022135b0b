//! Shared fixtures for the criterion benchmarks in `benches/`.

use asconvsr_core::train::procedural_image;
use asconvsr_core::{AsConvSr, ModelConfig, Rng, Tensor};

/// Seed used by every fixture.
pub const SEED: u64 = 2024;

/// Uniform `[0, 1)` tensor of the given shape.
pub fn random_input(shape: &[usize]) -> Tensor<f32> {
    Rng::new(SEED)
        .uniform(shape, 0.0, 1.0)
        .expect("valid shape")
}

/// Normal tensor with standard deviation `std`.
pub fn random_weights(shape: &[usize], std: f64) -> Tensor<f32> {
    Rng::new(SEED + 1)
        .normal(shape, 0.0, std)
        .expect("valid shape")
}

/// Preset model with a trained-looking (non-zero) tail.
pub fn model(preset: &str) -> AsConvSr<f32> {
    let cfg = ModelConfig {
        zero_init_tail: false,
        ..ModelConfig::preset(preset).expect("known preset")
    };
    AsConvSr::new(cfg, &mut Rng::new(SEED)).expect("valid preset")
}

/// `[1, 3, h, w]` procedural RGB image.
pub fn image(h: usize, w: usize) -> Tensor<f32> {
    procedural_image(&mut Rng::new(SEED), h, w).expect("valid size")
}
