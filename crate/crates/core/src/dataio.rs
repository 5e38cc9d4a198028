//! Artifact writers shared by the CLI commands: PGM images, two-column
//! plot-data files, JSON reports, and the DONE-marker protocol for
//! detecting interrupted runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Name of the completion marker written as the last act of a command.
/// A directory without it holds partial output.
pub const DONE_MARKER: &str = "DONE";

/// Writes a tensor as a binary PGM (P5) grayscale image.
///
/// Format: the ASCII header `P5\n<width> <height>\n255\n` followed by
/// one unsigned byte per pixel, row-major from the top-left. Values are
/// mapped linearly so the minimum becomes 0 and the maximum 255; a
/// constant image maps to all zeros.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.rows(), image.cols());
    if h == 0 || w == 0 {
        return Err(Error::DegenerateInput("empty image"));
    }
    let data = image.data();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite pixel value"));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in data {
        let p = if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        };
        bytes.push(p);
    }
    write_atomic(path, &bytes)
}

/// Writes a two-column numeric text file, one `x y` pair per line.
/// Plain text keeps the curves diffable and loadable by any plotting
/// tool.
pub fn write_xy(path: &Path, xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let mut out = String::with_capacity(xs.len() * 16);
    for (x, y) in xs.iter().zip(ys) {
        out.push_str(&format!("{x} {y}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes labeled bar data: `#` comment lines mapping index to label,
/// then `index value` rows. Same two-column numeric body as
/// [`write_xy`].
pub fn write_bars(path: &Path, labels: &[&str], values: &[f64]) -> Result<()> {
    if labels.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: values.len(),
        });
    }
    let mut out = String::new();
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("# {i} {l}\n"));
    }
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{i} {v}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Serializes a report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Marks `dir` as complete. Callers write this last so its absence
/// flags a partial run.
pub fn write_done_marker(dir: &Path) -> Result<()> {
    write_atomic(&dir.join(DONE_MARKER), b"done\n")
}

pub fn is_done(dir: &Path) -> bool {
    dir.join(DONE_MARKER).is_file()
}

/// Write-to-temp-then-rename so readers never observe a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = tmp_sibling(path);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
