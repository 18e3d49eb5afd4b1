//! Files written by a run: CSV tables, `summary.json`, the effective
//! `config.toml` and `manifest.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Formats a float for CSV: 17 significant digits in scientific notation,
/// which round-trips exactly. Non-finite values are written as `nan`,
/// `inf` or `-inf`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// An in-memory CSV table.
pub struct Table {
    name: String,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Self { name: name.to_string(), writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
    }

    fn into_bytes(self) -> (String, Vec<u8>) {
        let bytes = self.writer.into_inner().expect("flushing to memory");
        (self.name, bytes)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub core_version: String,
    pub subcommand: String,
    pub seed: u64,
    pub threads: usize,
    pub config_sha256: String,
    pub config: String,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
}

/// Collects the files of one run and writes them together.
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn table(&mut self, table: Table) {
        self.files.push(table.into_bytes());
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
    }

    pub fn text(&mut self, name: &str, text: &str) {
        self.files.push((name.to_string(), text.as_bytes().to_vec()));
    }

    /// Writes every file plus `manifest.json`, which lists their hashes.
    pub fn write(self, mut manifest: Manifest) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir)?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, bytes)?;
            manifest.files.push(FileEntry { name: name.clone(), sha256: sha256_hex(bytes), bytes: bytes.len() });
            written.push(path);
        }
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text)?;
        written.push(path);
        Ok(written)
    }
}
