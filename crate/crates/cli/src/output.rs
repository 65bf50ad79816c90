//! CSV tables and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context as _;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A table of numbers with a header row.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_to(&self, w: impl Write) -> anyhow::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Where results go: a file, or stdout when no `--out` was given.
pub struct Sink {
    pub out: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(out: Option<PathBuf>) -> Self {
        Sink { out, written: Vec::new() }
    }

    pub fn table(&mut self, t: &Table) -> anyhow::Result<()> {
        match self.out.clone() {
            Some(p) => self.table_at(&p, t),
            None => t.write_to(std::io::stdout().lock()),
        }
    }

    pub fn table_at(&mut self, path: &Path, t: &Table) -> anyhow::Result<()> {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        t.write_to(std::io::BufWriter::new(file))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn text(&mut self, body: &str) -> anyhow::Result<()> {
        match self.out.clone() {
            Some(p) => {
                std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
                self.written.push(p);
                Ok(())
            }
            None => {
                print!("{body}");
                Ok(())
            }
        }
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Inputs that determine a run's results; hashed into the manifest.
#[derive(Default)]
pub struct Provenance {
    hasher: Sha256,
    pub inputs: Vec<String>,
}

impl Provenance {
    pub fn arg(&mut self, key: &str, value: impl std::fmt::Display) {
        self.hasher.update(format!("{key}={value}\n").as_bytes());
    }

    pub fn file(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.hasher.update(format!("file:{}\n", bytes.len()).as_bytes());
        self.hasher.update(&bytes);
        self.inputs.push(path.display().to_string());
        Ok(())
    }

    fn digest(self) -> (String, Vec<String>) {
        let hash = self.hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        (hash, self.inputs)
    }
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// SHA-256 over the subcommand, every result-affecting argument, and input file contents.
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(prov: Provenance, seed: Option<u64>, started_unix: f64, outputs: &[PathBuf]) -> Self {
        let (config_hash, inputs) = prov.digest();
        RunManifest {
            command_line: std::env::args().collect(),
            config_hash,
            inputs,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            started_unix,
            finished_unix: unix_now(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    /// Writes `<out>.manifest.json` next to the primary output.
    pub fn write_beside(&self, out: &Path) -> anyhow::Result<PathBuf> {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = out.with_file_name(name);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_quotes() {
        let mut t = Table::new(["a", "b,c"]);
        t.push(vec![num(0.1), num(2.0)]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,\"b,c\"\n0.1,2\n");
    }

    #[test]
    fn hash_depends_on_arguments() {
        let mut a = Provenance::default();
        a.arg("h", 0.1);
        let mut b = Provenance::default();
        b.arg("h", 0.2);
        assert_ne!(a.digest().0, b.digest().0);
    }
}
