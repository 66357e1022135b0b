//! Trains the small preset on 16 procedural image pairs and reports the
//! training-set PSNR against bicubic upsampling.
//!
//! `cargo run --release -p asconvsr-core --example overfit -- [iters] [eval_every]`

use asconvsr_core::metrics::{bicubic_downscale, bicubic_upscale, psnr_rgb};
use asconvsr_core::train::{procedural_image, PairSet, TrainConfig, Trainer};
use asconvsr_core::{AsConvSr, ModelConfig, Rng};

const PAIRS: usize = 16;
const LR_SIZE: usize = 32;

fn main() -> asconvsr_core::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let iters = args.next().unwrap_or(2000);
    let eval_every = args.next().unwrap_or(250);

    let mut rng = Rng::new(7);
    let pairs = (0..PAIRS)
        .map(|i| {
            let hr = procedural_image::<f32>(&mut rng, 2 * LR_SIZE, 2 * LR_SIZE)?;
            let lr = bicubic_downscale(&hr, 2)?;
            Ok((format!("p{i:02}"), lr, hr))
        })
        .collect::<asconvsr_core::Result<Vec<_>>>()?;
    let set = PairSet::new(2, pairs)?;
    let mut bicubic = 0.0;
    for (lr, hr) in set.pairs() {
        bicubic += psnr_rgb(&bicubic_upscale(lr, 2)?.clamp(0.0, 1.0)?, hr)?;
    }
    bicubic /= set.len() as f64;

    let model = AsConvSr::new(ModelConfig::asconvsr(), &mut Rng::new(1))?;
    let config = TrainConfig {
        total_iters: iters,
        batch_size: 8,
        lr_patch: LR_SIZE,
        hr_patch: 2 * LR_SIZE,
        augment: false,
        eval_every,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, config)?;
    let start = std::time::Instant::now();
    println!("bicubic {bicubic:.3} dB");
    trainer.run(&set, Some(&set), |r| {
        if let Some(p) = r.psnr_eval {
            println!(
                "iter {:>5}  loss {:.5}  psnr {:.3} dB  ({:+.3})  {:.0} s",
                r.iter,
                r.loss,
                p,
                p - bicubic,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    Ok(())
}
