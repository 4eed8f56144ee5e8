//! A trained denoiser bundled with its noise schedule and coverage metadata,
//! persisted through the checkpoint format.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::instance::ProblemKind;
use crate::numerics::{encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointFile};

pub const CHECKPOINT_EXT: &str = "ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub denoiser: DenoiserConfig,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub profile: String,
    /// Problem kinds present in the training data.
    pub kinds: Vec<ProblemKind>,
    /// `"{jobs}x{machines}"` sizes present in the training data.
    pub sizes: Vec<String>,
    pub epochs: usize,
    pub train_samples: usize,
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Content hash of the checkpoint bytes; empty until saved or loaded.
    pub id: String,
    pub config: ModelConfig,
    pub meta: ModelMeta,
    pub model: Denoiser<f32>,
    pub noise: NoiseSchedule,
}

impl TrainedModel {
    pub fn new(config: ModelConfig, meta: ModelMeta) -> Result<Self> {
        let model = Denoiser::new(config.denoiser.clone())?;
        let noise = NoiseSchedule::standard(config.horizon)?;
        Ok(Self {
            id: String::new(),
            config,
            meta,
            model,
            noise,
        })
    }

    pub fn covers(&self, kind: ProblemKind) -> bool {
        self.meta.kinds.contains(&kind)
    }

    fn header(&self) -> Result<(serde_json::Value, serde_json::Value)> {
        Ok((serde_json::to_value(&self.config)?, serde_json::to_value(&self.meta)?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (config, meta) = self.header()?;
        encode_checkpoint(&config, &meta, &self.model)
    }

    /// Writes the checkpoint and records its id.
    pub fn save(&mut self, path: &Path) -> Result<String> {
        let (config, meta) = self.header()?;
        self.id = write_checkpoint(path, &config, &meta, &self.model)?;
        Ok(self.id.clone())
    }

    pub fn from_file(file: &CheckpointFile) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(file.config.clone())?;
        let meta: ModelMeta = serde_json::from_value(file.meta.clone())?;
        let mut out = Self::new(config, meta)?;
        file.load_into(&mut out.model)?;
        out.id = file.id.clone();
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(&read_checkpoint(path)?)
    }
}

/// Checkpoint files directly inside `dir`, sorted by name.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Checkpoint(format!("{} is not a directory", dir.display())));
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == CHECKPOINT_EXT))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            denoiser: DenoiserConfig {
                hidden: 4,
                emb_dim: 4,
                cond_dim: 4,
                layers: 1,
                ..DenoiserConfig::desk()
            },
            horizon: 20,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = ModelMeta {
            profile: "tiny".into(),
            kinds: vec![ProblemKind::Jsp],
            sizes: vec!["3x3".into()],
            ..ModelMeta::default()
        };
        let mut m = TrainedModel::new(tiny(), meta).unwrap();
        let path = dir.path().join(format!("a.{CHECKPOINT_EXT}"));
        let id = m.save(&path).unwrap();
        assert_eq!(id.len(), 16);
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back.id, id);
        assert_eq!(back.config, m.config);
        assert_eq!(back.meta, m.meta);
        assert_eq!(back.noise.horizon(), 20);
        assert!(back.covers(ProblemKind::Jsp) && !back.covers(ProblemKind::Fjsp));
        assert_eq!(back.to_bytes().unwrap(), m.to_bytes().unwrap());
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        assert_eq!(list_checkpoints(dir.path()).unwrap(), vec![path]);
    }
}
