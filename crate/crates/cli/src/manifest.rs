//! Flat `key=value` run manifests.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    /// Records the path and SHA-256 of an input file under `key`.
    pub fn add_input(&mut self, key: &str, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.set(&format!("{key}.path"), path.display());
        self.set(&format!("{key}.sha256"), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut file = fs::File::create(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        file.write_all(self.render().as_bytes()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}
