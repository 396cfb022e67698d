//! Output directory handling. Every artifact gets a `<name>.meta.json`
//! sidecar; nothing time-dependent is written, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_sha256: &'a str,
    file: &'a str,
    sha256: String,
}

pub struct OutputDir {
    pub root: PathBuf,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path, command: &str, seed: u64, config_hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(name);
        let io = |e: std::io::Error| CliError::Input(format!("{}: {e}", path.display()));
        std::fs::write(&path, bytes).map_err(io)?;
        let meta = Sidecar {
            tool: "episens",
            version: VERSION,
            command: &self.command,
            seed: self.seed,
            config_sha256: &self.config_hash,
            file: name,
            sha256: hex::encode(Sha256::digest(bytes)),
        };
        let mut text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        text.push('\n');
        std::fs::write(self.root.join(format!("{name}.meta.json")), text).map_err(io)?;
        self.written.push(path);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(format!("{name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// In-memory CSV table.
pub struct Table {
    wr: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(header).expect("in-memory write");
        Self { wr }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().collect();
        self.wr.write_record(&cells).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.wr.into_inner().expect("in-memory flush")
    }
}
