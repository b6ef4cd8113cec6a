//! Writers for the CSV contract and the JSON summaries.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(OutDir(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    /// Header from the row type's field names; always written, even for no
    /// rows.
    pub fn csv<R: Serialize>(&self, name: &str, header: &[&str], rows: &[R]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut w = csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_path(&path).map_err(io)?;
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// `1`, `0.5`, `-0.1` → file-name fragments `1`, `0.5`, `m0.1`.
pub fn tag(v: f64) -> String {
    let s = format!("{v}");
    match s.strip_prefix('-') {
        Some(rest) => format!("m{rest}"),
        None => s,
    }
}

/// Non-finite numbers become empty CSV cells, and JSON nulls.
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}
