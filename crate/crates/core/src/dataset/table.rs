use std::fs;
use std::path::{Path, PathBuf};

use super::DatasetError;

/// A header-bearing delimited file held in memory.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub delimiter: u8,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Reads a tab- or comma-separated file. The delimiter is tab when the
    /// header line contains a tab, comma otherwise. Tab files are read
    /// without quote handling; tweets often contain stray quotes. Invalid
    /// UTF-8 is replaced rather than rejected.
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let bytes = fs::read(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let text = String::from_utf8_lossy(&bytes);
        let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
        let header_line = text.lines().next().unwrap_or_default();
        let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };

        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .quoting(delimiter == b',')
            .has_headers(true)
            .from_reader(text.as_bytes());
        let schema = |e: csv::Error| DatasetError::Schema(format!("{}: {e}", path.display()));
        let headers = reader.headers().map_err(schema)?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(schema)?;
            if record.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            rows.push(record.iter().map(str::to_string).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            delimiter,
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize, DatasetError> {
        self.headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                DatasetError::Schema(format!(
                    "{}: no column {name:?} (found {})",
                    self.path.display(),
                    self.headers.join(", ")
                ))
            })
    }
}
