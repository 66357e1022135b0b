//! Space-to-channel rearrangements.
//!
//! Both directions share one index map:
//!
//! ```text
//! unshuffled[b, c*r*r + i*r + j, y, x] == image[b, c, y*r + i, x*r + j]
//! ```
//!
//! so each is the exact inverse of the other, and each one's gradient is the
//! other applied to the incoming gradient.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_factor(op: &'static str, r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::InvalidArgument(format!("{op}: factor must be >= 1")));
    }
    Ok(())
}

/// `[B, C, H, W] -> [B, C*r^2, H/r, W/r]`.
pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_unshuffle";
    check_factor(OP, r)?;
    let [b, c, h, w] = x.dims4()?;
    for (what, value) in [("height", h), ("width", w)] {
        if value % r != 0 {
            return Err(Error::Divisibility {
                op: OP,
                what,
                value,
                divisor: r,
            });
        }
    }
    let (oh, ow) = (h / r, w / r);
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    for n in 0..b {
        for ch in 0..c {
            let plane = &src[(n * c + ch) * h * w..][..h * w];
            for i in 0..r {
                for j in 0..r {
                    for y in 0..oh {
                        let row = &plane[(y * r + i) * w..][..w];
                        out.extend((0..ow).map(|xo| row[xo * r + j]));
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c * r * r, oh, ow], out)
}

/// `[B, C, H, W] -> [B, C/r^2, H*r, W*r]`, the inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    const OP: &str = "pixel_shuffle";
    check_factor(OP, r)?;
    let [b, c, h, w] = x.dims4()?;
    if c % (r * r) != 0 {
        return Err(Error::Divisibility {
            op: OP,
            what: "channels",
            value: c,
            divisor: r * r,
        });
    }
    let oc = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for n in 0..b {
        for ch in 0..oc {
            let dst = &mut out[(n * oc + ch) * oh * ow..][..oh * ow];
            for i in 0..r {
                for j in 0..r {
                    let sub = &src[(n * c + ch * r * r + i * r + j) * h * w..][..h * w];
                    for y in 0..h {
                        let drow = &mut dst[(y * r + i) * ow..][..ow];
                        for xi in 0..w {
                            drow[xi * r + j] = sub[y * w + xi];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, oc, oh, ow], out)
}

/// Gradient of [`pixel_unshuffle`].
pub fn pixel_unshuffle_backward<T: Element>(grad: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    pixel_shuffle(grad, r)
}

/// Gradient of [`pixel_shuffle`].
pub fn pixel_shuffle_backward<T: Element>(grad: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    pixel_unshuffle(grad, r)
}

/// Replicates each channel `c` into the `r^2` consecutive channels
/// `c*r^2 .. (c+1)*r^2`, so that `pixel_shuffle(repeat_upscale(x, r), r)` is
/// nearest-neighbour upsampling by `r`.
pub fn repeat_upscale<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    check_factor("repeat_upscale", r)?;
    let [b, c, h, w] = x.dims4()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(x.len() * r * r);
    for p in x.data().chunks_exact(plane) {
        for _ in 0..r * r {
            out.extend_from_slice(p);
        }
    }
    Tensor::new(&[b, c * r * r, h, w], out)
}

/// Gradient of [`repeat_upscale`]: sums each group of `r^2` replicas.
pub fn repeat_upscale_backward<T: Element>(grad: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    check_factor("repeat_upscale_backward", r)?;
    let [b, c, h, w] = grad.dims4()?;
    if c % (r * r) != 0 {
        return Err(Error::Divisibility {
            op: "repeat_upscale_backward",
            what: "channels",
            value: c,
            divisor: r * r,
        });
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(grad.len() / (r * r));
    for group in grad.data().chunks_exact(plane * r * r) {
        let mut acc = group[..plane].to_vec();
        for rep in group.chunks_exact(plane).skip(1) {
            for (a, &g) in acc.iter_mut().zip(rep) {
                *a += g;
            }
        }
        out.extend(acc);
    }
    Tensor::new(&[b, c / (r * r), h, w], out)
}
