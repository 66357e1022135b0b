use log::debug;

use super::data::{sample_batch, PairSet};
use super::optim::{adam_step, charbonnier_loss, AdamState};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::psnr_rgb;
use crate::model::AsConvSr;
use crate::rng::Rng;
use crate::tensor::Element;

pub const SAMPLING_STREAM: u64 = 1;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub psnr_eval: Option<f64>,
}

impl TrainRecord {
    pub const CSV_HEADER: &'static str = "iter,lr,loss,psnr_eval";

    pub fn to_csv_row(&self) -> String {
        let psnr = self.psnr_eval.map(|p| p.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.iter, self.lr, self.loss, psnr)
    }
}

/// Model, optimizer and sampling state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: AsConvSr<T>,
    pub adam: AdamState<T>,
    pub rng: Rng,
    /// Number of completed iterations.
    pub iter: usize,
    pub config: TrainConfig,
}

impl<T: Element> Trainer<T> {
    /// Patch sampling draws from stream [`SAMPLING_STREAM`] of
    /// `config.seed`, so it never overlaps a model initialised from
    /// `Rng::new(config.seed)`.
    pub fn new(model: AsConvSr<T>, config: TrainConfig) -> Result<Self> {
        config.validate(model.config().scale)?;
        let adam = AdamState::new(model.params())?;
        let rng = Rng::with_stream(config.seed, SAMPLING_STREAM);
        Ok(Trainer {
            model,
            adam,
            rng,
            iter: 0,
            config,
        })
    }

    /// Sample a batch, forward, Charbonnier loss, backward, Adam update.
    pub fn step(&mut self, data: &PairSet<T>) -> Result<TrainRecord> {
        let cfg = &self.config;
        let lr = cfg.lr_at(self.iter);
        let diverged = |model: &AsConvSr<T>, iter| Error::Diverged {
            iter,
            lr,
            max_abs_param: model.params().max_abs_value().to_f64(),
        };
        let (x, target) = sample_batch(
            data,
            &mut self.rng,
            cfg.batch_size,
            cfg.lr_patch,
            cfg.augment,
        )?;
        let (y, cache) = match self.model.forward_train(&x) {
            Err(Error::NonFinite { .. }) => return Err(diverged(&self.model, self.iter)),
            other => other?,
        };
        let (loss, grad) = match charbonnier_loss(&y, &target, cfg.charbonnier_eps) {
            Err(Error::NonFinite { .. }) => return Err(diverged(&self.model, self.iter)),
            other => other?,
        };
        self.model.params_mut().zero_grads();
        match self
            .model
            .backward(&cache, &grad)
            .and_then(|_| adam_step(self.model.params_mut(), &mut self.adam, lr, cfg.adam()))
        {
            Err(Error::NonFinite { .. }) => return Err(diverged(&self.model, self.iter)),
            other => other?,
        }
        let rec = TrainRecord {
            iter: self.iter,
            lr,
            loss,
            psnr_eval: None,
        };
        self.iter += 1;
        Ok(rec)
    }

    /// Mean PSNR of the clamped prediction over every pair of `eval`.
    pub fn evaluate(&self, eval: &PairSet<T>) -> Result<f64> {
        mean_psnr(&self.model, eval)
    }

    /// Runs until `config.total_iters` iterations are complete, passing
    /// every record to `sink`. PSNR on `eval` is attached every
    /// `eval_every` iterations and to the final record.
    pub fn run(
        &mut self,
        data: &PairSet<T>,
        eval: Option<&PairSet<T>>,
        mut sink: impl FnMut(&TrainRecord) -> Result<()>,
    ) -> Result<Vec<TrainRecord>> {
        data.check_patch(self.config.lr_patch)?;
        let mut log = Vec::new();
        while self.iter < self.config.total_iters {
            let mut rec = self.step(data)?;
            let done = self.iter;
            let due = self.config.eval_every > 0 && done % self.config.eval_every == 0;
            if let Some(eval) = eval {
                if due || done == self.config.total_iters {
                    rec.psnr_eval = Some(self.evaluate(eval)?);
                }
            }
            debug!("iter {} lr {:e} loss {:.6}", rec.iter, rec.lr, rec.loss);
            sink(&rec)?;
            log.push(rec);
        }
        Ok(log)
    }
}

/// Mean over pairs of PSNR between `model.infer(lr)` and `hr`.
pub fn mean_psnr<T: Element>(model: &AsConvSr<T>, set: &PairSet<T>) -> Result<f64> {
    let mut total = 0.0;
    for (lr, hr) in set.pairs() {
        total += psnr_rgb(&model.infer(lr)?, hr)?;
    }
    Ok(total / set.len() as f64)
}
