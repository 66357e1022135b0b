//! Training: Charbonnier loss, Adam with a step-halving schedule, aligned
//! patch sampling with dihedral augmentation, the training loop and
//! checkpoints.

mod checkpoint;
mod data;
mod optim;
mod synth;
mod trainer;

pub use checkpoint::{AdamSnapshot, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{
    augment_pair, dihedral, sample_batch, sample_patch_pair, DatasetEntry, DatasetIndex, PairSet,
};
pub use optim::{adam_step, charbonnier_loss, AdamParams, AdamState};
pub use synth::procedural_image;
pub use trainer::{mean_psnr, TrainRecord, Trainer, SAMPLING_STREAM};

use crate::error::{Error, Result};
use crate::model::parse_value as parse;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Iterations between learning-rate halvings.
    pub halve_every: usize,
    pub total_iters: usize,
    pub batch_size: usize,
    pub hr_patch: usize,
    pub lr_patch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub charbonnier_eps: f64,
    pub seed: u64,
    pub augment: bool,
    /// Evaluate PSNR every this many iterations and after the last one;
    /// 0 disables periodic evaluation.
    pub eval_every: usize,
}

/// Desk-scale defaults.
impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-4,
            halve_every: 2_000,
            total_iters: 5_000,
            batch_size: 8,
            hr_patch: 256,
            lr_patch: 128,
            beta1: 0.9,
            beta2: 0.9999,
            adam_eps: 1e-8,
            charbonnier_eps: 1e-3,
            seed: 0,
            augment: true,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    /// Full schedule: 10^6 iterations, halving every 2*10^5, batch 32.
    pub fn paper_scale() -> Self {
        TrainConfig {
            halve_every: 200_000,
            total_iters: 1_000_000,
            batch_size: 32,
            ..Self::default()
        }
    }

    /// `lr0 * 0.5^floor(iter / halve_every)`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let halvings = iter / self.halve_every.max(1);
        self.lr0 * 0.5f64.powi(halvings.min(i32::MAX as usize) as i32)
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self, scale: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.hr_patch != scale * self.lr_patch {
            return bad(format!(
                "hr_patch {} must be {scale} x lr_patch {}",
                self.hr_patch, self.lr_patch
            ));
        }
        if self.lr_patch == 0 || self.batch_size == 0 || self.halve_every == 0 {
            return bad("lr_patch, batch_size and halve_every must be >= 1".into());
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be finite and >= 0", self.lr0));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0 && self.charbonnier_eps > 0.0) {
            return bad("adam_eps and charbonnier_eps must be positive".into());
        }
        Ok(())
    }

    /// Flat `key = value` view, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr0", self.lr0.to_string()),
            ("halve_every", self.halve_every.to_string()),
            ("total_iters", self.total_iters.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("hr_patch", self.hr_patch.to_string()),
            ("lr_patch", self.lr_patch.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("charbonnier_eps", self.charbonnier_eps.to_string()),
            ("seed", self.seed.to_string()),
            ("augment", self.augment.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ]
    }

    /// Sets one field by name. Returns `Ok(false)` for keys this config
    /// does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr0" => self.lr0 = parse(key, value)?,
            "halve_every" => self.halve_every = parse(key, value)?,
            "total_iters" => self.total_iters = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "hr_patch" => self.hr_patch = parse(key, value)?,
            "lr_patch" => self.lr_patch = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "charbonnier_eps" => self.charbonnier_eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
