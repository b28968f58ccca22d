use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Owns an output directory. Every data file goes through here so that it is
/// listed, with its digest, in `outputs.json`.
pub struct Outputs {
    dir: PathBuf,
    command: String,
    config_hash: String,
    files: Vec<String>,
    started: SystemTime,
    clock: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    files: BTreeMap<&'a str, String>,
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    started_unix_ms: u128,
    elapsed_ms: u128,
    threads: usize,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::validation(format!("cannot write {}: {e}", path.display()))
}

impl Outputs {
    pub fn create(dir: &Path, command: &str, config_hash: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            config_hash: config_hash.into(),
            files: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Registers `name` and returns its full path, creating parent
    /// directories. The caller writes the file.
    pub fn file(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.into());
        }
        Ok(path)
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.file(name)?;
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))
    }

    /// Pretty JSON with a trailing newline.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::validation(format!("cannot serialize {name}: {e}")))?;
        s.push('\n');
        self.text(name, &s)
    }

    /// JSON object with a leading `config_hash` field.
    pub fn stamped_json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        let hash = self.config_hash.clone();
        self.json(
            name,
            &Stamped {
                config_hash: &hash,
                body,
            },
        )
    }

    /// Writes `config.toml`, `outputs.json` (digests of every registered
    /// file) and `run_meta.json`, the only file carrying wall-clock data.
    pub fn finish(mut self, config_toml: &str) -> Result<(), CliError> {
        self.text("config.toml", config_toml)?;
        let mut files = BTreeMap::new();
        for name in &self.files {
            let path = self.dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
            files.insert(name.as_str(), hex::encode(Sha256::digest(&bytes)));
        }
        let manifest = Manifest {
            command: &self.command,
            config_hash: &self.config_hash,
            files,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.dir.join("outputs.json");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;

        let meta = RunMeta {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.config_hash,
            started_unix_ms: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
            elapsed_ms: self.clock.elapsed().as_millis(),
            threads: rayon::current_num_threads(),
        };
        let text = serde_json::to_string_pretty(&meta).expect("run meta serializes") + "\n";
        let path = self.dir.join("run_meta.json");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}
