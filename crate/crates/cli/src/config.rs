//! Experiment configuration files and their content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zat_core::baselines::{CtConfig, LstmTaggerConfig};
use zat_core::data::VECTORS_FILE;
use zat_core::tagger::ZatConfig;
use zat_core::train::{ExperimentPlan, TrainConfig};
use zat_core::{Error, Result};

/// Everything a training or evaluation command needs. Relative paths are
/// resolved against the directory of the file they were read from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    /// Defaults to the vectors file inside `corpus`.
    pub vectors: Option<PathBuf>,
    pub plan: ExperimentPlan,
    /// Base training on the sources; its `use_crf`, `use_char` and `weft`
    /// switches shape every model built from this config.
    pub train: TrainConfig,
    /// Target-side training: fine-tuning and from-scratch baselines.
    pub finetune: TrainConfig,
    pub zat: ZatConfig,
    pub ct: CtConfig,
    pub lstm: LstmTaggerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("data"),
            vectors: None,
            plan: ExperimentPlan::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig { patience: 20, ..TrainConfig::default() },
            zat: ZatConfig::default(),
            ct: CtConfig::default(),
            lstm: LstmTaggerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut config: Self = toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.corpus = base.join(&config.corpus);
        config.vectors = config.vectors.map(|v| base.join(v));
        Ok(config)
    }

    pub fn vectors_path(&self) -> PathBuf {
        self.vectors.clone().unwrap_or_else(|| self.corpus.join(VECTORS_FILE))
    }

    pub fn validate(&self) -> Result<()> {
        if self.plan.target.is_empty() {
            return Err(Error::InvalidArgument("plan.target is required".into()));
        }
        if self.plan.seeds.is_empty() {
            return Err(Error::InvalidArgument("plan.seeds is empty".into()));
        }
        self.train.validate()?;
        self.finetune.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults_and_resolve_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "corpus = \"corpus\"\n[plan]\ntarget = \"travel\"\ntake = 10\n[train]\nmax_epochs = 3\n").unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.corpus, dir.path().join("corpus"));
        assert_eq!(c.vectors_path(), dir.path().join("corpus").join(VECTORS_FILE));
        assert_eq!((c.plan.take, c.train.max_epochs, c.train.batch_size), (10, 3, 32));
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "corpse = \"x\"\n").unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.plan.take = 7;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
