//! Direct 2-D convolution (cross-correlation, no kernel flip) with zero
//! padding, stride and channel groups, plus its exact gradients.
//!
//! The input is unrolled band by band into a column matrix (im2col) and
//! multiplied with the weights. Accumulation order: each output element
//! starts at zero, adds `w[o, c, ky, kx] * x[c, iy, ix]` for `c`, then `ky`,
//! then `kx` ascending (taps in the padding contribute an exact zero), and
//! adds the bias last. Every output element is produced by a single task,
//! so results do not depend on the number of threads.

use rayon::prelude::*;

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    /// Stride 1, padding `k / 2`: output has the input's spatial size for odd `k`.
    pub fn same(k: usize) -> Self {
        Conv2dParams {
            padding: k / 2,
            ..Default::default()
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

pub struct Conv2dGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cg_in: usize,
    cg_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: &[usize], weight: &[usize], p: Conv2dParams) -> Result<Self> {
        const OP: &str = "conv2d";
        let [batch, c_in, h, w] = match *input {
            [b, c, h, w] => [b, c, h, w],
            _ => return Err(Error::shape(OP, &[0, 0, 0, 0], input)),
        };
        let [c_out, cg_in, kh, kw] = match *weight {
            [o, c, kh, kw] => [o, c, kh, kw],
            _ => return Err(Error::shape(OP, &[0, 0, 0, 0], weight)),
        };
        if p.groups == 0 || p.stride == 0 {
            return Err(Error::InvalidArgument(
                "conv2d: groups and stride must be >= 1".into(),
            ));
        }
        for (what, value) in [("input channels", c_in), ("output channels", c_out)] {
            if value % p.groups != 0 {
                return Err(Error::Divisibility {
                    op: OP,
                    what,
                    value,
                    divisor: p.groups,
                });
            }
        }
        if cg_in * p.groups != c_in {
            return Err(Error::shape(OP, &[c_out, c_in / p.groups, kh, kw], weight));
        }
        let (hp, wp) = (h + 2 * p.padding, w + 2 * p.padding);
        if hp < kh || wp < kw {
            return Err(Error::InvalidArgument(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
            )));
        }
        Ok(Geometry {
            batch,
            c_in,
            h,
            w,
            c_out,
            cg_in,
            cg_out: c_out / p.groups,
            kh,
            kw,
            oh: (hp - kh) / p.stride + 1,
            ow: (wp - kw) / p.stride + 1,
            stride: p.stride,
            pad: p.padding,
        })
    }

    /// Output indices `o` along one axis whose tap `k` lands inside the
    /// input: `0 <= o * stride + k - pad < len`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let s = self.stride;
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(s)
        };
        let hi = if len + self.pad > k {
            ((len + self.pad - k - 1) / s + 1).min(out_len)
        } else {
            0
        };
        lo..hi.max(lo)
    }
}

/// Output rows per im2col band, sized so a band's column matrix stays
/// cache-resident.
fn band_rows(g: &Geometry) -> usize {
    (1024 / g.ow.max(1)).clamp(1, g.oh.max(1))
}

/// Column matrix `[K, P]` of one (sample, group, row band), with
/// `K = cg_in * kh * kw` in `(c, ky, kx)` order and `P` the band's output
/// positions. Taps in the padding are zero.
fn im2col<T: Element>(
    x: &[T],
    g: &Geometry,
    b: usize,
    grp: usize,
    rows: std::ops::Range<usize>,
    col: &mut Vec<T>,
) {
    let p = rows.len() * g.ow;
    col.clear();
    col.resize(g.cg_in * g.kh * g.kw * p, T::zero());
    let mut k = 0;
    for cl in 0..g.cg_in {
        let src = &x[(b * g.c_in + grp * g.cg_in + cl) * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let valid_rows = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let cols = g.valid(kx, g.w, g.ow);
                let dst = &mut col[k * p..][..p];
                for oy in rows.start.max(valid_rows.start)..rows.end.min(valid_rows.end) {
                    let iy = oy * g.stride + ky - g.pad;
                    let srow = &src[iy * g.w..][..g.w];
                    let drow = &mut dst[(oy - rows.start) * g.ow..][..g.ow];
                    if g.stride == 1 {
                        let ix0 = cols.start + kx - g.pad;
                        drow[cols.clone()].copy_from_slice(&srow[ix0..ix0 + cols.len()]);
                    } else {
                        for ox in cols.clone() {
                            drow[ox] = srow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

/// Adds a `[P, K]` column-gradient matrix back onto the input planes of one
/// (sample, group), the adjoint of [`im2col`].
fn col2im_t<T: Element>(colt: &[T], g: &Geometry, rows: std::ops::Range<usize>, dst: &mut [T]) {
    let kk = g.cg_in * g.kh * g.kw;
    let mut k = 0;
    for cl in 0..g.cg_in {
        let plane = &mut dst[cl * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let valid_rows = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let cols = g.valid(kx, g.w, g.ow);
                for oy in rows.start.max(valid_rows.start)..rows.end.min(valid_rows.end) {
                    let iy = oy * g.stride + ky - g.pad;
                    let prow = (oy - rows.start) * g.ow;
                    for ox in cols.clone() {
                        plane[iy * g.w + ox * g.stride + kx - g.pad] += colt[(prow + ox) * kk + k];
                    }
                }
                k += 1;
            }
        }
    }
}

fn transpose<T: Element>(src: &[T], rows: usize, cols: usize, dst: &mut Vec<T>) {
    dst.clear();
    dst.resize(rows * cols, T::zero());
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn axpy<T: Element>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: Conv2dParams,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), params)?;
    if let Some(b) = bias {
        if b.shape() != [g.c_out] {
            return Err(Error::shape("conv2d", &[g.c_out], b.shape()));
        }
    }
    let x = input.data();
    let wt = weight.data();
    let groups = params.groups;
    let kk = g.cg_in * g.kh * g.kw;
    let band = band_rows(&g);
    let bands = g.oh.div_ceil(band);
    let plane = g.oh * g.ow;

    // One job per (sample, group, row band); each output element is
    // produced entirely inside one job.
    let results: Vec<Vec<T>> = (0..g.batch * groups * bands)
        .into_par_iter()
        .map_init(Vec::new, |col, job| {
            let (unit, bi) = (job / bands, job % bands);
            let (b, grp) = (unit / groups, unit % groups);
            let rows = bi * band..((bi + 1) * band).min(g.oh);
            let p = rows.len() * g.ow;
            im2col(x, &g, b, grp, rows, col);
            let mut out = vec![T::zero(); g.cg_out * p];
            for (ol, block) in out.chunks_mut(4 * p).enumerate() {
                let o0 = grp * g.cg_out + 4 * ol;
                let n = block.len() / p;
                for k in 0..kk {
                    let crow = &col[k * p..][..p];
                    for r in 0..n {
                        axpy(wt[(o0 + r) * kk + k], crow, &mut block[r * p..][..p]);
                    }
                }
                if let Some(bv) = bias {
                    for r in 0..n {
                        let v = bv.data()[o0 + r];
                        block[r * p..][..p].iter_mut().for_each(|d| *d += v);
                    }
                }
            }
            out
        })
        .collect();

    let mut out = vec![T::zero(); g.batch * g.c_out * plane];
    for (job, res) in results.iter().enumerate() {
        let (unit, bi) = (job / bands, job % bands);
        let (b, grp) = (unit / groups, unit % groups);
        let r0 = bi * band;
        let p = res.len() / g.cg_out;
        for ol in 0..g.cg_out {
            let o = grp * g.cg_out + ol;
            out[(b * g.c_out + o) * plane + r0 * g.ow..][..p].copy_from_slice(&res[ol * p..][..p]);
        }
    }
    Tensor::from_parts("conv2d", vec![g.batch, g.c_out, g.oh, g.ow], out)
}

/// Gradients of `L = sum(grad_out * conv2d(input, weight, bias))` with respect
/// to the input, the weight and the bias.
///
/// Weight gradients are summed over samples in ascending order, so the
/// result does not depend on the number of threads.
pub fn conv2d_grad<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    params: Conv2dParams,
) -> Result<Conv2dGrads<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), params)?;
    let expected = [g.batch, g.c_out, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_grad", &expected, grad_out.shape()));
    }
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let groups = params.groups;
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let kk = g.cg_in * g.kh * g.kw;
    let band = band_rows(&g);

    // Per (sample, group): input gradient of the group's channels and the
    // group's partial weight gradient.
    let mut gi = vec![T::zero(); g.batch * g.c_in * in_plane];
    let partial_gw: Vec<Vec<T>> = gi
        .par_chunks_mut(g.cg_in * in_plane)
        .enumerate()
        .map(|(unit, gi_unit)| {
            let (b, grp) = (unit / groups, unit % groups);
            let mut gw = vec![T::zero(); g.cg_out * kk];
            let (mut col, mut colt, mut gcolt) = (Vec::new(), Vec::new(), Vec::new());
            let wg = &wt[grp * g.cg_out * kk..][..g.cg_out * kk];
            for r0 in (0..g.oh).step_by(band) {
                let rows = r0..(r0 + band).min(g.oh);
                let p = rows.len() * g.ow;
                im2col(x, &g, b, grp, rows.clone(), &mut col);
                transpose(&col, kk, p, &mut colt);
                gcolt.clear();
                gcolt.resize(p * kk, T::zero());
                for ol in 0..g.cg_out {
                    let o = grp * g.cg_out + ol;
                    let grow = &go[(b * g.c_out + o) * out_plane + r0 * g.ow..][..p];
                    let wrow = &wg[ol * kk..][..kk];
                    let gwrow = &mut gw[ol * kk..][..kk];
                    for (pi, &gv) in grow.iter().enumerate() {
                        axpy(gv, &colt[pi * kk..][..kk], gwrow);
                        axpy(gv, wrow, &mut gcolt[pi * kk..][..kk]);
                    }
                }
                col2im_t(&gcolt, &g, rows, gi_unit);
            }
            gw
        })
        .collect();

    let mut gw = vec![T::zero(); g.c_out * kk];
    for (unit, part) in partial_gw.iter().enumerate() {
        let grp = unit % groups;
        for (d, &v) in gw[grp * g.cg_out * kk..][..g.cg_out * kk]
            .iter_mut()
            .zip(part)
        {
            *d += v;
        }
    }

    let mut gb = vec![T::zero(); g.c_out];
    for b in 0..g.batch {
        for (o, acc) in gb.iter_mut().enumerate() {
            for &v in &go[(b * g.c_out + o) * out_plane..][..out_plane] {
                *acc += v;
            }
        }
    }

    Ok(Conv2dGrads {
        input: Tensor::from_parts("conv2d_grad", input.shape().to_vec(), gi)?,
        weight: Tensor::from_parts("conv2d_grad", weight.shape().to_vec(), gw)?,
        bias: Tensor::from_parts("conv2d_grad", vec![g.c_out], gb)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive<T: Element>(
        x: &Tensor<T>,
        w: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        p: Conv2dParams,
    ) -> Tensor<T> {
        let [b, ci, h, wd] = x.dims4().unwrap();
        let [co, cgi, kh, kw] = w.dims4().unwrap();
        let cgo = co / p.groups;
        let oh = (h + 2 * p.padding - kh) / p.stride + 1;
        let ow = (wd + 2 * p.padding - kw) / p.stride + 1;
        let mut out = vec![T::zero(); b * co * oh * ow];
        for n in 0..b {
            for o in 0..co {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = T::zero();
                        for cl in 0..cgi {
                            let c = (o / cgo) * cgi + cl;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (y * p.stride + ky) as isize - p.padding as isize;
                                    let ix = (xo * p.stride + kx) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((o * cgi + cl) * kh + ky) * kw + kx]
                                        * x.data()
                                            [((n * ci + c) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        if let Some(bb) = bias {
                            acc += bb.data()[o];
                        }
                        out[((n * co + o) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        Tensor::new(&[b, co, oh, ow], out).unwrap()
    }

    #[test]
    fn one_by_one_identity() {
        let mut rng = Rng::new(1);
        let x = rng.uniform::<f64>(&[2, 1, 5, 4], -1.0, 1.0).unwrap();
        let w = Tensor::ones(&[1, 1, 1, 1]).unwrap();
        assert_eq!(conv2d(&x, &w, None, Conv2dParams::default()).unwrap(), x);
    }

    #[test]
    fn ones_kernel_neighbourhood_sums() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, Conv2dParams::same(3)).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn matches_naive_loop_exactly() {
        let mut rng = Rng::new(7);
        for &(stride, padding, groups) in &[(1, 1, 1), (2, 1, 1), (1, 0, 2), (2, 2, 3), (3, 1, 1)] {
            let x = rng.normal::<f64>(&[2, 6, 7, 9], 0.0, 1.0).unwrap();
            let w = rng.normal::<f64>(&[6, 6 / groups, 3, 3], 0.0, 1.0).unwrap();
            let b = rng.normal::<f64>(&[6], 0.0, 1.0).unwrap();
            let p = Conv2dParams {
                stride,
                padding,
                groups,
            };
            assert_eq!(
                conv2d(&x, &w, Some(&b), p).unwrap(),
                naive(&x, &w, Some(&b), p)
            );
        }
    }

    #[test]
    fn grouped_equals_split_and_concat() {
        let mut rng = Rng::new(3);
        let x = rng.normal::<f64>(&[1, 4, 5, 5], 0.0, 1.0).unwrap();
        let w = rng.normal::<f64>(&[4, 2, 3, 3], 0.0, 1.0).unwrap();
        let y = conv2d(&x, &w, None, Conv2dParams::same(3).with_groups(2)).unwrap();
        let plane = 25;
        for half in 0..2 {
            let xs = Tensor::new(
                &[1, 2, 5, 5],
                x.data()[half * 2 * plane..(half + 1) * 2 * plane].to_vec(),
            )
            .unwrap();
            let ws =
                Tensor::new(&[2, 2, 3, 3], w.data()[half * 36..(half + 1) * 36].to_vec()).unwrap();
            let ys = conv2d(&xs, &ws, None, Conv2dParams::same(3)).unwrap();
            assert_eq!(
                ys.data(),
                &y.data()[half * 2 * plane..(half + 1) * 2 * plane]
            );
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::zeros(&[4, 3, 3, 3]).unwrap();
        assert!(matches!(
            conv2d(&x, &w, None, Conv2dParams::default().with_groups(2)),
            Err(Error::Divisibility { .. })
        ));
        let big = Tensor::zeros(&[1, 3, 7, 7]).unwrap();
        assert!(conv2d(&x, &big, None, Conv2dParams::default()).is_err());
        let wrong_ci = Tensor::zeros(&[4, 2, 3, 3]).unwrap();
        assert!(conv2d(&x, &wrong_ci, None, Conv2dParams::default()).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(5);
        let x = rng.normal::<f64>(&[1, 2, 4, 4], 0.0, 1.0).unwrap();
        let w = rng.normal::<f64>(&[3, 2, 3, 3], 0.0, 1.0).unwrap();
        let go = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        let g = conv2d_grad(&x, &w, &go, Conv2dParams::same(3)).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.weight.max_abs(), 0.0);
        assert_eq!(g.bias.max_abs(), 0.0);
    }

    #[test]
    fn scalar_weight_gradient_is_dot_product() {
        let mut rng = Rng::new(9);
        let x = rng.normal::<f64>(&[2, 1, 3, 3], 0.0, 1.0).unwrap();
        let go = rng.normal::<f64>(&[2, 1, 3, 3], 0.0, 1.0).unwrap();
        let w = Tensor::full(&[1, 1, 1, 1], 0.3).unwrap();
        let g = conv2d_grad(&x, &w, &go, Conv2dParams::default()).unwrap();
        let dot: f64 = x.data().iter().zip(go.data()).map(|(a, b)| a * b).sum();
        assert!((g.weight.data()[0] - dot).abs() < 1e-12);
        assert_eq!(g.bias.data()[0], go.sum());
        assert_eq!(g.input, go.scale(0.3).unwrap());
    }
}
