use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// One HR/LR file pair and their `(height, width)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub stem: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub hr_dims: (usize, usize),
    pub lr_dims: (usize, usize),
}

/// File pairs sorted by stem.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<DatasetEntry>,
}

impl DatasetIndex {
    pub fn new(mut entries: Vec<DatasetEntry>, scale: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("dataset has no image pairs".into()));
        }
        entries.sort_by(|a, b| a.stem.cmp(&b.stem));
        for e in &entries {
            check_pair_dims(&e.stem, e.hr_dims, e.lr_dims, scale)?;
        }
        Ok(DatasetIndex { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_pair_dims(name: &str, hr: (usize, usize), lr: (usize, usize), scale: usize) -> Result<()> {
    if hr != (scale * lr.0, scale * lr.1) {
        return Err(Error::InvalidArgument(format!(
            "`{name}`: HR is {}x{} but LR is {}x{} (expected HR = {scale} x LR)",
            hr.1, hr.0, lr.1, lr.0
        )));
    }
    Ok(())
}

/// Decoded `[1, 3, h, w]` LR/HR pairs held in memory.
#[derive(Clone, Debug)]
pub struct PairSet<T> {
    scale: usize,
    names: Vec<String>,
    pairs: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Element> PairSet<T> {
    pub fn new(scale: usize, pairs: Vec<(String, Tensor<T>, Tensor<T>)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("dataset has no image pairs".into()));
        }
        let mut names = Vec::with_capacity(pairs.len());
        let mut out = Vec::with_capacity(pairs.len());
        for (name, lr, hr) in pairs {
            let [lb, lc, lh, lw] = lr.dims4()?;
            let [hb, hc, hh, hw] = hr.dims4()?;
            if lb != 1 || hb != 1 || lc != 3 || hc != 3 {
                return Err(Error::InvalidArgument(format!(
                    "`{name}`: images must be [1, 3, H, W], got {:?} and {:?}",
                    lr.shape(),
                    hr.shape()
                )));
            }
            check_pair_dims(&name, (hh, hw), (lh, lw), scale)?;
            names.push(name);
            out.push((lr, hr));
        }
        Ok(PairSet {
            scale,
            names,
            pairs: out,
        })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `(lr, hr)` pairs.
    pub fn pairs(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.pairs
    }

    /// Rejects datasets with an LR image smaller than `lr_patch`.
    pub fn check_patch(&self, lr_patch: usize) -> Result<()> {
        for (name, (lr, _)) in self.names.iter().zip(&self.pairs) {
            let [_, _, h, w] = lr.dims4()?;
            if h < lr_patch || w < lr_patch {
                return Err(Error::InvalidArgument(format!(
                    "`{name}`: LR image {w}x{h} is smaller than the {lr_patch}x{lr_patch} patch"
                )));
            }
        }
        Ok(())
    }
}

fn crop<T: Element>(img: &Tensor<T>, y: usize, x: usize, size: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = img.dims4()?;
    if y + size > h || x + size > w {
        return Err(Error::InvalidArgument(format!(
            "crop {size}x{size} at ({x}, {y}) exceeds {w}x{h} image"
        )));
    }
    let mut out = Vec::with_capacity(b * c * size * size);
    for plane in img.data().chunks_exact(h * w) {
        for row in y..y + size {
            out.extend_from_slice(&plane[row * w + x..row * w + x + size]);
        }
    }
    Tensor::new(&[b, c, size, size], out)
}

/// Picks an image, then an LR crop at `(x, y)` and the HR crop of
/// `scale * lr_patch` at `(scale * x, scale * y)`.
pub fn sample_patch_pair<T: Element>(
    set: &PairSet<T>,
    rng: &mut Rng,
    lr_patch: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (lr, hr) = &set.pairs[rng.below(set.len())];
    let [_, _, h, w] = lr.dims4()?;
    if h < lr_patch || w < lr_patch {
        return Err(Error::InvalidArgument(format!(
            "LR image {w}x{h} is smaller than the {lr_patch}x{lr_patch} patch"
        )));
    }
    let y = rng.below(h - lr_patch + 1);
    let x = rng.below(w - lr_patch + 1);
    let s = set.scale;
    Ok((
        crop(lr, y, x, lr_patch)?,
        crop(hr, s * y, s * x, s * lr_patch)?,
    ))
}

/// Dihedral transform `k` in `0..8`: a horizontal flip when `k` is odd,
/// then `k / 2` clockwise quarter turns.
pub fn dihedral<T: Element>(img: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = img.dims4()?;
    if k >= 8 {
        return Err(Error::InvalidArgument(format!(
            "dihedral index {k} outside 0..8"
        )));
    }
    let turns = k / 2;
    if turns % 2 == 1 && h != w {
        return Err(Error::InvalidShape {
            shape: img.shape().to_vec(),
            reason: "quarter turns need square patches".into(),
        });
    }
    let flip = k % 2 == 1;
    let src = img.data();
    Tensor::from_fn(&[b, c, h, w], |i| {
        let (plane, y, x) = (i / (h * w), (i / w) % h, i % w);
        // Undo the rotation, then the flip, to find the source pixel.
        let (mut sy, mut sx) = (y, x);
        for _ in 0..turns {
            // Clockwise: out[y][x] = in[n-1-x][y] for an n x n plane.
            (sy, sx) = (h - 1 - sx, sy);
        }
        if flip {
            sx = w - 1 - sx;
        }
        src[plane * h * w + sy * w + sx]
    })
}

/// Applies one uniformly drawn dihedral transform to both patches.
pub fn augment_pair<T: Element>(
    lr: &Tensor<T>,
    hr: &Tensor<T>,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let k = rng.below(8);
    Ok((dihedral(lr, k)?, dihedral(hr, k)?))
}

/// `batch` sampled (and optionally augmented) pairs stacked on the batch
/// axis.
pub fn sample_batch<T: Element>(
    set: &PairSet<T>,
    rng: &mut Rng,
    batch: usize,
    lr_patch: usize,
    augment: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let hr_patch = set.scale * lr_patch;
    let mut lr_data = Vec::with_capacity(batch * 3 * lr_patch * lr_patch);
    let mut hr_data = Vec::with_capacity(batch * 3 * hr_patch * hr_patch);
    for _ in 0..batch {
        let (mut lr, mut hr) = sample_patch_pair(set, rng, lr_patch)?;
        if augment {
            (lr, hr) = augment_pair(&lr, &hr, rng)?;
        }
        lr_data.extend_from_slice(lr.data());
        hr_data.extend_from_slice(hr.data());
    }
    Ok((
        Tensor::new(&[batch, 3, lr_patch, lr_patch], lr_data)?,
        Tensor::new(&[batch, 3, hr_patch, hr_patch], hr_data)?,
    ))
}
