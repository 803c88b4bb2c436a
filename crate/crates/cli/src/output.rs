//! Files written into a run directory: `metrics.csv`, `manifest.txt` and
//! `plot.py`.

use std::fs;
use std::path::{Path, PathBuf};

use dhe_core::engine::RoundRow;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const METRICS: &str = "metrics.csv";
pub const MANIFEST: &str = "manifest.txt";
pub const PLOT: &str = "plot.py";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes any header plus records as CSV.
pub fn write_csv<I, R>(path: &Path, header: &[&str], records: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in records {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_metrics(dir: &Path, rows: &[RoundRow]) -> Result<PathBuf, CliError> {
    let path = dir.join(METRICS);
    write_csv(&path, &RoundRow::HEADER, rows.iter().map(|r| r.fields()))?;
    Ok(path)
}

/// The resolved configuration, preceded by `# ` comment lines. Feeding the
/// file back through `--config` repeats the run.
pub fn write_manifest(dir: &Path, cfg: &ExperimentConfig, comments: &[String]) -> Result<PathBuf, CliError> {
    let path = dir.join(MANIFEST);
    let mut text: String = comments.iter().map(|c| format!("# {c}\n")).collect();
    text.push_str(&cfg.to_text());
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

const PLOT_SCRIPT: &str = include_str!("plot.py");

pub fn write_plot_script(dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join(PLOT);
    fs::write(&path, PLOT_SCRIPT).map_err(io_err(&path))?;
    Ok(path)
}
