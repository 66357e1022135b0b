//! Flat `key = value` configuration text. Blank lines and lines starting
//! with `#` are ignored. Keys are the field names of `ModelConfig` and
//! `TrainConfig`.

use std::path::Path;

use asconvsr_core::{ModelConfig, TrainConfig};

use crate::error::{CliError, CliResult};

/// `(key, value)` pairs in file order.
pub fn parse_config_text(text: &str, origin: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{origin}:{}: expected `key = value`", i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_config_text(&text, &path.display().to_string())
}

/// Applies pairs to whichever config owns each key.
pub fn apply(
    pairs: &[(String, String)],
    model: &mut ModelConfig,
    mut train: Option<&mut TrainConfig>,
    origin: &str,
) -> CliResult<()> {
    for (k, v) in pairs {
        let bad = |e: asconvsr_core::Error| CliError::Usage(format!("{origin}: {e}"));
        if model.set(k, v).map_err(bad)? {
            continue;
        }
        if let Some(t) = train.as_deref_mut() {
            if t.set(k, v).map_err(bad)? {
                continue;
            }
        }
        return Err(CliError::Usage(format!(
            "{origin}: unknown config key `{k}`"
        )));
    }
    Ok(())
}

/// Resolved-config header: every line starts with `# `, so the header is
/// itself a valid config file.
pub fn render_header(
    command: &str,
    extra: &[(&str, String)],
    model: &ModelConfig,
    train: Option<&TrainConfig>,
) -> String {
    let mut s = format!("# asconvsr {command}\n");
    for (k, v) in extra {
        s.push_str(&format!("# {k}: {v}\n"));
    }
    for (k, v) in model.to_pairs() {
        s.push_str(&format!("{k} = {v}\n"));
    }
    if let Some(t) = train {
        for (k, v) in t.to_pairs() {
            s.push_str(&format!("{k} = {v}\n"));
        }
    }
    s
}
