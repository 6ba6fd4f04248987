//! Run manifests: what went in, with which settings, and what came out.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use zat_core::Result;

use crate::config::sha256_hex;

#[derive(Clone, Debug, Default, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub args: BTreeMap<String, String>,
    /// Input file → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: sha256_hex(serde_json::to_string(&config)?.as_bytes()),
            config,
            ..Self::default()
        })
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    /// Records a file, or every file below a directory.
    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        for file in files_under(path)? {
            let digest = sha256_hex(&fs::read(&file)?);
            self.inputs.insert(file.display().to_string(), digest);
        }
        Ok(self)
    }

    pub fn output(&mut self, name: impl ToString) -> &mut Self {
        self.outputs.push(name.to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    let mut out = Vec::new();
    for e in entries {
        out.extend(files_under(&e)?);
    }
    Ok(out)
}
