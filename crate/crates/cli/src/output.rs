//! File writing shared by the commands. All numbers are written in their
//! shortest round-trip form so reruns produce identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{svg, CliError};

/// Shortest round-trip form; `NaN` marks a failed value.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("output directory {}: {e}", dir.display())))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Check(format!("json: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes `<stem>.csv` and, when `svg` is set, `<stem>.svg` rendered from
/// that file's contents. Returns the paths written.
pub fn write_chart(
    dir: &Path,
    stem: &str,
    title: &str,
    header: &[String],
    rows: &[Vec<String>],
    svg: bool,
) -> Result<Vec<PathBuf>, CliError> {
    let data = dir.join(format!("{stem}.csv"));
    write_csv(&data, header, rows)?;
    let mut written = vec![data.clone()];
    if svg {
        written.push(render_chart(&data, title)?);
    }
    Ok(written)
}

/// Renders the SVG next to an existing sidecar CSV.
pub fn render_chart(data: &Path, title: &str) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(data)?;
    let doc = svg::render(&text, title).map_err(|e| CliError::Check(format!("chart {}: {e}", data.display())))?;
    let out = data.with_extension("svg");
    fs::write(&out, doc)?;
    Ok(out)
}
