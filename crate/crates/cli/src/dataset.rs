//! Dataset folders: `HR/` with the targets, optionally `LR/` with inputs of
//! half the size and matching file stems. Inputs missing from `LR/` are
//! synthesised by bicubic downscaling and cached in `LR_gen/`.

use std::path::{Path, PathBuf};

use asconvsr_core::metrics::bicubic_downscale;
use asconvsr_core::train::{DatasetEntry, DatasetIndex, PairSet};
use log::info;

use crate::error::{CliError, CliResult};
use crate::png::{png_dims, png_read, png_write};

fn pngs(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::data(dir.display(), e))?;
    let mut out = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| CliError::data(dir.display(), e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Indexes `root`, synthesising missing LR images.
pub fn dataset_scan(root: &Path, scale: usize) -> CliResult<DatasetIndex> {
    let hr_dir = root.join("HR");
    if !hr_dir.is_dir() {
        return Err(CliError::Data(format!(
            "{}: missing HR/ folder",
            root.display()
        )));
    }
    let hr = pngs(&hr_dir)?;
    if hr.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no PNG files",
            hr_dir.display()
        )));
    }
    let lr_dir = root.join("LR");
    let gen_dir = root.join("LR_gen");
    let mut entries = Vec::with_capacity(hr.len());
    for (stem, hr_path) in hr {
        let hr_dims = png_dims(&hr_path)?;
        let given = lr_dir.join(format!("{stem}.png"));
        let lr_path = if given.is_file() {
            given
        } else {
            let cached = gen_dir.join(format!("{stem}.png"));
            let expected = (hr_dims.0 / scale, hr_dims.1 / scale);
            let fresh = cached.is_file() && png_dims(&cached)? == expected;
            if !fresh {
                synthesise_lr(&hr_path, &cached, scale)?;
            }
            cached
        };
        let lr_dims = png_dims(&lr_path)?;
        entries.push(DatasetEntry {
            stem,
            hr_path,
            lr_path,
            hr_dims,
            lr_dims,
        });
    }
    DatasetIndex::new(entries, scale).map_err(|e| CliError::data(root.display(), e))
}

fn synthesise_lr(hr_path: &Path, out: &Path, scale: usize) -> CliResult<()> {
    let hr = png_read(hr_path)?;
    let lr = bicubic_downscale(&hr, scale).map_err(|e| CliError::data(hr_path.display(), e))?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(dir.display(), e))?;
    }
    info!("synthesised {}", out.display());
    png_write(&lr, out)
}

/// Decodes every pair of `index`.
pub fn load_pairs(index: &DatasetIndex, scale: usize) -> CliResult<PairSet<f32>> {
    let pairs = index
        .entries
        .iter()
        .map(|e| Ok((e.stem.clone(), png_read(&e.lr_path)?, png_read(&e.hr_path)?)))
        .collect::<CliResult<Vec<_>>>()?;
    PairSet::new(scale, pairs).map_err(|e| CliError::data("dataset", e))
}
