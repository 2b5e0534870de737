//! Run-directory plumbing: CSV assembly, the artifact manifest, and float
//! formatting shared by every artifact writer.
//!
//! CSV files use a comma delimiter, `.` decimal separator, one header row,
//! and LF line endings. Floats are printed with Rust's shortest-roundtrip
//! formatting, so a value survives write → parse → write unchanged and
//! deterministic data produces byte-identical files.

use crate::CliError;
use std::fs;
use std::path::PathBuf;

/// Shortest decimal representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Assemble a CSV document from a header and rows (LF endings, no quoting —
/// callers only pass names and numbers, never free text with commas).
pub fn csv_document(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut doc = String::new();
    doc.push_str(&header.join(","));
    doc.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        doc.push_str(&row.join(","));
        doc.push('\n');
    }
    doc
}

/// A run directory plus the list of every artifact written into it. Dropped
/// without [`RunDir::finish`], the manifest is simply not written (partial
/// runs still keep their artifacts).
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    /// Create (or reuse) the directory at `root`.
    pub fn create(root: impl Into<PathBuf>) -> Result<RunDir, CliError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(RunDir {
            root,
            written: Vec::new(),
        })
    }

    /// Write one artifact at `rel` (creating subdirectories as needed) and
    /// record it for the manifest.
    pub fn write(&mut self, rel: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    /// Record an artifact that was written through another API (e.g. the
    /// checkpoint serializer).
    pub fn record(&mut self, rel: &str) {
        self.written.push(rel.to_string());
    }

    /// Path for an artifact that [`RunDir::record`] will register.
    pub fn path_of(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Write the `manifest` file: every artifact path, sorted, one per line.
    pub fn finish(mut self) -> Result<(), CliError> {
        self.written.sort();
        let mut doc = self.written.join("\n");
        doc.push('\n');
        fs::write(self.root.join("manifest"), doc)?;
        Ok(())
    }
}
