//! Output-file helpers shared by every stage: provenance header lines,
//! tidy CSV writing and the artifact manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written as the first line of every CSV (`# tool=... seed=... config=...`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            seed,
            config_hash: config_hash.into(),
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "# tool={} version={} seed={} config={}",
            self.tool, self.version, self.seed, self.config_hash
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes a header row plus string rows; returns the number of data rows.
pub fn write_csv<R, I>(
    path: &Path,
    provenance: Option<&Provenance>,
    header: &[&str],
    rows: I,
) -> Result<usize>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut out = create_file(path)?;
    if let Some(p) = provenance {
        writeln!(out, "{}", p.header_line()).map_err(|e| Error::io(path, e))?;
    }
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(header).map_err(|e| Error::csv(path, e))?;
    let mut n = 0;
    for row in rows {
        wtr.write_record(row).map_err(|e| Error::csv(path, e))?;
        n += 1;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(n)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::json(path, e))?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::json(path, e))
}

/// Formats a float with fixed decimals, normalizing negative zero.
pub fn fmt_fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Shortest round-trip representation; used for raw numeric columns.
pub fn fmt_real(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v:?}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub artifacts: Vec<ManifestEntry>,
}

/// Counts CSV data rows (excluding the comment and header lines) or, for
/// other files, newline-terminated lines.
pub fn count_rows(path: &Path) -> Result<usize> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "csv") {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(bytes.as_slice());
        Ok(rdr.records().count())
    } else {
        Ok(bytes.iter().filter(|b| **b == b'\n').count())
    }
}

pub fn manifest_entry(out_dir: &Path, relative: &str) -> Result<ManifestEntry> {
    let path: PathBuf = out_dir.join(relative);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(ManifestEntry {
        file: relative.to_string(),
        rows: count_rows(&path)?,
        sha256: sha256_hex(&bytes),
    })
}
