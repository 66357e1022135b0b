//! Image quality metrics, the efficiency score, bicubic resampling and the
//! latency harness.
//!
//! Images are `[B, 3, H, W]` tensors with values in `[0, 1]`. PSNR and SSIM
//! are computed on the full RGB image with no border crop.

mod bench;
mod bicubic;

pub use bench::{runtime_bench, BenchConfig, BenchReport};
pub use bicubic::{
    bicubic_downscale, bicubic_resize, bicubic_upscale, cubic_kernel, cubic_weights, CUBIC_A,
};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Runtime constant of the efficiency score.
pub const EFFICIENCY_C: f64 = 0.1;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_rgb_pair<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<[usize; 4]> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    let dims = a.dims4()?;
    if dims[1] != 3 {
        return Err(Error::InvalidShape {
            shape: a.shape().to_vec(),
            reason: format!("{op} expects 3 colour channels"),
        });
    }
    Ok(dims)
}

/// Mean squared error over every pixel and channel.
pub fn mse<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", a.shape(), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `-10 log10(MSE)` with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr_rgb<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_rgb_pair("psnr_rgb", a, b)?;
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP_DB)
    }
}

/// Normalised 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), `K1 = 0.01`,
/// `K2 = 0.03` and dynamic range 1. Statistics are taken over windows that
/// lie fully inside the image; the map is averaged over positions, channels
/// and batch.
pub fn ssim_rgb<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let [n, c, h, w] = check_rgb_pair("ssim_rgb", a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            shape: a.shape().to_vec(),
            reason: format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"),
        });
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0_f64).powi(2);
    let c2 = (SSIM_K2 * 1.0_f64).powi(2);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..n * c {
        let pa: Vec<f64> = a.data()[p * plane..(p + 1) * plane]
            .iter()
            .map(|&v| Element::to_f64(v))
            .collect();
        let pb: Vec<f64> = b.data()[p * plane..(p + 1) * plane]
            .iter()
            .map(|&v| Element::to_f64(v))
            .collect();
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> {
            pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect()
        };
        let mu_a = filter_valid(&pa, h, w, &taps);
        let mu_b = filter_valid(&pb, h, w, &taps);
        let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
        let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
        let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        count += mu_a.len();
    }
    Ok(total / count as f64)
}

/// `2^(psnr - psnr_bicubic) * 2 / (c * sqrt(runtime_ms))`.
pub fn efficiency_score_with(psnr: f64, psnr_bicubic: f64, runtime_ms: f64, c: f64) -> Result<f64> {
    if !(runtime_ms > 0.0 && runtime_ms.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "runtime must be positive, got {runtime_ms} ms"
        )));
    }
    if c.is_nan() || c <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "score constant must be positive, got {c}"
        )));
    }
    Ok(2f64.powf(psnr - psnr_bicubic) * 2.0 / (c * runtime_ms.sqrt()))
}

/// [`efficiency_score_with`] at `C = 0.1`.
pub fn efficiency_score(psnr: f64, psnr_bicubic: f64, runtime_ms: f64) -> Result<f64> {
    efficiency_score_with(psnr, psnr_bicubic, runtime_ms, EFFICIENCY_C)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn img(v: f64) -> Tensor<f64> {
        Tensor::full(&[1, 3, 16, 16], v).unwrap()
    }

    #[test]
    fn psnr_trivial_cases() {
        let a = Rng::new(1).uniform::<f64>(&[1, 3, 8, 8], 0.0, 0.9).unwrap();
        assert_eq!(psnr_rgb(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = a.add(&Tensor::full(a.shape(), 0.1).unwrap()).unwrap();
        assert!((psnr_rgb(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr_rgb(&img(0.0), &img(1.0)).unwrap(), 0.0);
        assert!(psnr_rgb(&img(0.0), &Tensor::zeros(&[1, 3, 8, 16]).unwrap()).is_err());
    }

    #[test]
    fn gaussian_window_normalised_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(w[i], w[10 - i]);
        }
    }

    #[test]
    fn ssim_trivial_cases() {
        let a = Rng::new(2)
            .uniform::<f64>(&[1, 3, 16, 16], 0.0, 1.0)
            .unwrap();
        assert_eq!(ssim_rgb(&a, &a).unwrap(), 1.0);
        let inv = Tensor::ones(a.shape()).unwrap().sub(&a).unwrap();
        assert!(ssim_rgb(&a, &inv).unwrap() < 1.0);
        assert!(ssim_rgb(
            &Tensor::<f64>::zeros(&[1, 3, 10, 16]).unwrap(),
            &Tensor::zeros(&[1, 3, 10, 16]).unwrap()
        )
        .is_err());
    }

    #[test]
    fn ssim_constant_shift_matches_luminance_term() {
        // Zero variance everywhere leaves only the luminance factor.
        let (x, y) = (0.3, 0.8);
        let c1 = 0.01f64.powi(2);
        let expected = (2.0 * x * y + c1) / (x * x + y * y + c1);
        let got = ssim_rgb(&img(x), &img(y)).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!(got < 0.9);
    }

    #[test]
    fn score_cases() {
        assert!((efficiency_score(29.81, 29.81, 400.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((efficiency_score(31.52, 29.81, 37.91).unwrap() - 10.67).abs() < 0.15);
        assert!((efficiency_score(30.87, 29.81, 3.91).unwrap() - 21.05).abs() < 0.15);
        assert!(efficiency_score(30.0, 29.0, 0.0).is_err());
        assert!(efficiency_score(30.0, 29.0, -1.0).is_err());
    }
}
