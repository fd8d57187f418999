//! CSV output. Every file starts with a header row, and each run writes a
//! `manifest.csv` listing the files it produced with their schema name and
//! version, so downstream scripts can detect layout changes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Bumped whenever any column set below changes.
pub const SCHEMA_VERSION: u32 = 1;

pub struct Artifacts {
    dir: PathBuf,
    written: Vec<(String, &'static str)>,
}

/// Shortest round-trip decimal form; identical bytes for identical values.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Stage lists inside one CSV field, separated by `;`.
pub fn list(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

impl Artifacts {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `file` with `header` and `rows` under schema `schema`.
    pub fn write(
        &mut self,
        file: &str,
        schema: &'static str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(self.dir.join(file))?;
        w.write_record(header)?;
        for row in rows {
            debug_assert_eq!(row.len(), header.len(), "{file}: row width");
            w.write_record(&row)?;
        }
        w.flush()?;
        self.written.push((file.to_string(), schema));
        Ok(())
    }

    pub fn finish(mut self) -> Result<Vec<PathBuf>, csv::Error> {
        let entries = std::mem::take(&mut self.written);
        let mut w = csv::Writer::from_path(self.dir.join("manifest.csv"))?;
        w.write_record(["file", "schema", "version"])?;
        for (file, schema) in &entries {
            w.write_record([file.as_str(), schema, &SCHEMA_VERSION.to_string()])?;
        }
        w.flush()?;
        Ok(entries.into_iter().map(|(f, _)| self.dir.join(f)).collect())
    }
}
