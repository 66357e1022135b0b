use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{flops_estimate, AsConvSr};
use crate::rng::Rng;
use crate::tensor::Element;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
    /// Worker threads for the forward pass.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            height: 1080,
            width: 1920,
            warmup: 1,
            reps: 5,
            seed: 0,
            threads: 1,
        }
    }
}

/// Timing of repeated forward passes on one fixed input.
///
/// JSON field names are the struct field names. The CSV row follows
/// [`BenchReport::CSV_HEADER`], with `rep_ms` joined by `;`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub model_id: String,
    pub precision: String,
    pub input_height: usize,
    pub input_width: usize,
    pub warmup: usize,
    pub reps: usize,
    pub threads: usize,
    pub platform: String,
    pub rep_ms: Vec<f64>,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub flops: u64,
    pub macs: u64,
    pub param_count: usize,
    pub psnr: Option<f64>,
    pub score: Option<f64>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "model_id,precision,input_height,input_width,warmup,reps,threads,platform,\
median_ms,mean_ms,min_ms,flops,macs,param_count,psnr,score,rep_ms";

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bench report serialises")
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let reps: Vec<String> = self.rep_ms.iter().map(|v| v.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.model_id,
            self.precision,
            self.input_height,
            self.input_width,
            self.warmup,
            self.reps,
            self.threads,
            self.platform,
            self.median_ms,
            self.mean_ms,
            self.min_ms,
            self.flops,
            self.macs,
            self.param_count,
            opt(self.psnr),
            opt(self.score),
            reps.join(";")
        )
    }
}

/// Median; the mean of the two middle values for an even count.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn platform_string() -> String {
    format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Runs `warmup` discarded forward passes, then `reps` timed ones, on a
/// uniform random `[1, 3, height, width]` input drawn from `seed`.
pub fn runtime_bench<T: Element>(
    model: &AsConvSr<T>,
    model_id: &str,
    cfg: &BenchConfig,
) -> Result<BenchReport> {
    if cfg.warmup < 1 || cfg.reps < 3 {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs warmup >= 1 and reps >= 3, got {} and {}",
            cfg.warmup, cfg.reps
        )));
    }
    if cfg.threads == 0 {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one thread".into(),
        ));
    }
    let flops = flops_estimate(model.config(), cfg.height, cfg.width)?;
    let input = Rng::new(cfg.seed).uniform::<T>(&[1, 3, cfg.height, cfg.width], 0.0, 1.0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rep_ms = pool.install(|| -> Result<Vec<f64>> {
        for _ in 0..cfg.warmup {
            model.infer(&input)?;
        }
        let mut times = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let start = Instant::now();
            let out = model.infer(&input)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(out);
            times.push(ms.max(f64::MIN_POSITIVE));
        }
        Ok(times)
    })?;
    Ok(BenchReport {
        model_id: model_id.to_string(),
        precision: T::DTYPE.to_string(),
        input_height: cfg.height,
        input_width: cfg.width,
        warmup: cfg.warmup,
        reps: cfg.reps,
        threads: cfg.threads,
        platform: platform_string(),
        median_ms: median(&rep_ms),
        mean_ms: rep_ms.iter().sum::<f64>() / rep_ms.len() as f64,
        min_ms: rep_ms.iter().copied().fold(f64::INFINITY, f64::min),
        rep_ms,
        flops: flops.total_flops,
        macs: flops.total_macs,
        param_count: model.param_count(),
        psnr: None,
        score: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> AsConvSr<f32> {
        let cfg = ModelConfig {
            channels: 8,
            num_bases: 2,
            ..ModelConfig::asconvsr()
        };
        AsConvSr::new(cfg, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn median_is_middle_order_statistic() {
        assert_eq!(median(&[5.0, 1.0, 4.0, 2.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn report_shape() {
        let cfg = BenchConfig {
            height: 16,
            width: 16,
            reps: 5,
            ..BenchConfig::default()
        };
        let rep = runtime_bench(&tiny(), "tiny", &cfg).unwrap();
        assert_eq!(rep.rep_ms.len(), 5);
        assert_eq!(rep.median_ms, median(&rep.rep_ms));
        assert!(rep.rep_ms.iter().all(|&t| t > 0.0));
        assert_eq!(rep.threads, 1);
        assert_eq!(rep.precision, "f32");
        let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(json["reps"], 5);
        assert_eq!(
            rep.to_csv_row().split(',').count(),
            BenchReport::CSV_HEADER.split(',').count()
        );
    }

    #[test]
    fn rejects_bad_settings() {
        let m = tiny();
        let base = BenchConfig {
            height: 16,
            width: 16,
            ..BenchConfig::default()
        };
        assert!(runtime_bench(
            &m,
            "t",
            &BenchConfig {
                reps: 2,
                ..base.clone()
            }
        )
        .is_err());
        assert!(runtime_bench(
            &m,
            "t",
            &BenchConfig {
                warmup: 0,
                ..base.clone()
            }
        )
        .is_err());
        assert!(runtime_bench(&m, "t", &BenchConfig { height: 15, ..base }).is_err());
    }
}
