use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Free parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with `a = -0.5`, supported on `(-2, 2)`.
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let t = x.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Weights of the four taps `floor(s) - 1 ..= floor(s) + 2` for a source
/// coordinate with fractional part `phase`.
pub fn cubic_weights(phase: f64) -> [f64; 4] {
    [
        cubic_kernel(phase + 1.0),
        cubic_kernel(phase),
        cubic_kernel(1.0 - phase),
        cubic_kernel(2.0 - phase),
    ]
}

/// Per output index: clamped source indices and their weights.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = in_len as f64 / out_len as f64;
    let last = in_len as i64 - 1;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let w = cubic_weights(src - base);
            let mut idx = [0usize; 4];
            for (t, slot) in idx.iter_mut().enumerate() {
                *slot = (base as i64 - 1 + t as i64).clamp(0, last) as usize;
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resampling of a `[B, C, H, W]` tensor to
/// `[B, C, out_h, out_w]`, with half-pixel centre alignment and clamped
/// edges. Always four taps per axis, also when downscaling.
pub fn bicubic_resize<T: Element>(
    img: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let [b, c, h, w] = img.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "bicubic target {out_h}x{out_w} is empty"
        )));
    }
    let xs = axis_taps(w, out_w);
    let ys = axis_taps(h, out_h);
    let mut out = Vec::with_capacity(b * c * out_h * out_w);
    let mut rows = vec![0.0f64; h * out_w];
    for plane in img.data().chunks_exact(h * w) {
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, (idx, wt)) in xs.iter().enumerate() {
                let mut acc = 0.0;
                for t in 0..4 {
                    acc += wt[t] * src[idx[t]].to_f64();
                }
                rows[y * out_w + x] = acc;
            }
        }
        for (idx, wt) in &ys {
            for x in 0..out_w {
                let mut acc = 0.0;
                for t in 0..4 {
                    acc += wt[t] * rows[idx[t] * out_w + x];
                }
                out.push(T::from_f64(acc));
            }
        }
    }
    Tensor::new(&[b, c, out_h, out_w], out)
}

/// Bicubic upscaling by an integer factor.
pub fn bicubic_upscale<T: Element>(img: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = img.dims4()?;
    bicubic_resize(img, h * factor, w * factor)
}

/// Bicubic downscaling by an integer factor; sides must be divisible by it.
pub fn bicubic_downscale<T: Element>(img: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [_, _, h, w] = img.dims4()?;
    for (what, value) in [("height", h), ("width", w)] {
        if factor == 0 || value % factor != 0 {
            return Err(Error::Divisibility {
                op: "bicubic_downscale",
                what,
                value,
                divisor: factor,
            });
        }
    }
    bicubic_resize(img, h / factor, w / factor)
}
