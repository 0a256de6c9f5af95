use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Reads a single-channel samples file: one value per line. Blank lines
/// and lines starting with `#` are ignored, as is a non-numeric first line
/// (a column header).
pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut seen_line = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // tolerate a trailing column layout like "value,..." by taking the first field
        let field = line.split(',').next().unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => {
                return Err(Error::Row {
                    path: Some(path.to_path_buf()),
                    row: i + 1,
                    message: format!("non-finite sample {v}"),
                })
            }
            Err(_) if !seen_line => {}
            Err(_) => {
                return Err(Error::Row {
                    path: Some(path.to_path_buf()),
                    row: i + 1,
                    message: format!("not a number: `{field}`"),
                })
            }
        }
        seen_line = true;
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no samples", path.display())));
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(samples.len() * 12);
    for s in samples {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
