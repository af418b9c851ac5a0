//! CSV and JSON artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// CSV table with a `# config_sha256=… seed=…` line above the header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self, digest: &str, seed: u64) -> Result<Vec<u8>, CliError> {
        let mut buf = format!("# config_sha256={digest} seed={seed}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header).map_err(io)?;
            for r in &self.rows {
                w.write_record(r).map_err(io)?;
            }
            w.flush().map_err(CliError::Io)?;
        }
        Ok(buf)
    }
}

fn io(e: csv::Error) -> CliError {
    CliError::Io(e.into())
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct OutDir {
    dir: PathBuf,
    pub digest: String,
    pub seed: u64,
}

impl OutDir {
    pub fn create(dir: &Path, digest: String, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            digest,
            seed,
        })
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, table.to_bytes(&self.digest, self.seed)?)?;
        Ok(path)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_line_then_header() {
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![num(0.5), opt(None)]);
        let text = String::from_utf8(t.to_bytes("abc", 7).unwrap()).unwrap();
        assert_eq!(text, "# config_sha256=abc seed=7\nx,y\n0.5,\n");
    }
}
