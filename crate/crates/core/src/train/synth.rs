use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// Procedural `[1, 3, h, w]` RGB image in `[0, 1]`: a colour gradient,
/// oriented sinusoids of varying frequency and a few hard-edged shapes.
pub fn procedural_image<T: Element>(rng: &mut Rng, h: usize, w: usize) -> Result<Tensor<T>> {
    let mut img = vec![0.0f64; 3 * h * w];
    let colour = |rng: &mut Rng| [rng.next_f64(), rng.next_f64(), rng.next_f64()];
    let base = colour(rng);
    let tilt = colour(rng);
    let waves: Vec<_> = (0..3)
        .map(|_| {
            let angle = rng.next_f64() * std::f64::consts::PI;
            let freq = 0.15 + rng.next_f64() * 0.9;
            let phase = rng.next_f64() * std::f64::consts::TAU;
            let amp = 0.05 + rng.next_f64() * 0.15;
            (
                angle.cos() * freq,
                angle.sin() * freq,
                phase,
                amp,
                colour(rng),
            )
        })
        .collect();
    let shapes: Vec<_> = (0..4)
        .map(|_| {
            let cy = rng.next_f64() * h as f64;
            let cx = rng.next_f64() * w as f64;
            let r = (0.1 + rng.next_f64() * 0.3) * h.min(w) as f64;
            let disc = rng.below(2) == 0;
            (cy, cx, r, disc, colour(rng))
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64, x as f64);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = 0.3 * base[c] + 0.3 * tilt[c] * (fy + fx) / (h + w) as f64;
            }
            for &(ky, kx, phase, amp, col) in &waves {
                let s = (ky * fy + kx * fx + phase).sin() * amp;
                for c in 0..3 {
                    px[c] += s * (0.5 + col[c]);
                }
            }
            for &(cy, cx, r, disc, col) in &shapes {
                let inside = if disc {
                    (fy - cy).powi(2) + (fx - cx).powi(2) < r * r
                } else {
                    (fy - cy).abs() < r && (fx - cx).abs() < r * 0.6
                };
                if inside {
                    for c in 0..3 {
                        px[c] = 0.5 * px[c] + 0.5 * col[c];
                    }
                }
            }
            for c in 0..3 {
                img[(c * h + y) * w + x] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(&[1, 3, h, w], img.into_iter().map(T::from_f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_range_and_reproducible() {
        let a = procedural_image::<f64>(&mut Rng::new(1), 20, 30).unwrap();
        let b = procedural_image::<f64>(&mut Rng::new(1), 20, 30).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.max_abs() > 0.0);
    }
}
