use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::runner::MetricsRow;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "method",
    "snr_db",
    "ser",
    "ser_stderr",
    "nmse_db",
    "eta_mean",
    "nu_consistency",
    "trials",
    "wall_time_s",
];

/// Run description written next to every results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library_version: String,
    pub seed: u64,
    pub config: SimConfig,
}

impl Manifest {
    pub fn new(config: &SimConfig) -> Self {
        Self {
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

/// `results.csv` → `results.manifest.json`.
pub fn manifest_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("manifest.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `rows` as CSV with full precision, plus a manifest alongside when
/// `config` is given.
pub fn emit_results(rows: &[MetricsRow], path: &Path, config: Option<&SimConfig>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            float(r.snr_db),
            float(r.ser),
            float(r.ser_stderr),
            float(r.nmse_db),
            float(r.eta_mean),
            float(r.nu_consistency),
            r.trials.to_string(),
            float(r.wall_time_s),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;

    if let Some(cfg) = config {
        let mpath = manifest_path(path);
        let text = serde_json::to_string_pretty(&Manifest::new(cfg)).map_err(|e| Error::Config(e.to_string()))?;
        let mut f = File::create(&mpath).map_err(io_err(&mpath))?;
        f.write_all(text.as_bytes()).map_err(io_err(&mpath))?;
        f.write_all(b"\n").map_err(io_err(&mpath))?;
    }
    Ok(())
}

/// Reads a file written by [`emit_results`].
pub fn read_results(path: &Path) -> Result<Vec<MetricsRow>> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let header = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(parse_err(format!("unexpected header {header:?}")));
    }
    rdr.deserialize()
        .map(|row| row.map_err(|e| parse_err(e.to_string())))
        .collect()
}
