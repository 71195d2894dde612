use std::path::{Path, PathBuf};

use anyhow::Result;
use noisynn_core::io::write_atomic;

/// Accumulates CSV rows in memory and writes them atomically.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header.iter().map(AsRef::as_ref))?;
        Ok(Self { writer })
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        self.writer.write_record(fields.iter().map(AsRef::as_ref))?;
        Ok(())
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let bytes = self.writer.into_inner().map_err(|e| e.into_error())?;
        write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// `rows.csv` -> `rows.summary.csv`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

/// `key=value` pairs joined by spaces.
pub fn summary(command: &str, fields: &[(&str, String)]) -> String {
    let mut out = command.to_string();
    for (k, v) in fields {
        out.push(' ');
        out.push_str(k);
        out.push('=');
        out.push_str(v);
    }
    out
}
