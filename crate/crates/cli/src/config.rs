//! Pipeline configuration: a scale profile supplies every default, a TOML
//! file overrides any subset of fields.

use std::path::{Path, PathBuf};

use probseg_core::metrics::SweepConfig;
use probseg_core::model::{ModelConfig, TrainConfig};
use probseg_core::roi::QcPolicy;
use probseg_core::sequence::SelectionPolicy;
use probseg_core::Plane;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};
use crate::stages::CheckpointChoice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 64³ phantoms at 4 mm, 32³ ROI, narrow network, 30 epochs.
    Desk,
    /// 256³ at 1 mm, 144³ ROI, full-width network, 150 epochs.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomGrid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub data_root: PathBuf,
    pub planes: Vec<Plane>,
    pub seed: u64,
    pub n_patients: usize,
    pub n_test: usize,
    pub n_folds: usize,
    pub phantom: PhantomGrid,
    pub qc: QcPolicy,
    pub selection: SelectionPolicy,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub predict_checkpoint: CheckpointChoice,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => PipelineConfig {
                profile,
                data_root: PathBuf::from("data"),
                planes: Plane::ALL.to_vec(),
                seed: 7,
                n_patients: 20,
                n_test: 5,
                n_folds: 3,
                phantom: PhantomGrid {
                    dims: [64; 3],
                    spacing_mm: [4.0; 3],
                },
                qc: QcPolicy::with_bbox(32),
                selection: SelectionPolicy::default(),
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                sweep: SweepConfig::default(),
                predict_checkpoint: CheckpointChoice::Last,
            },
            Profile::Full => PipelineConfig {
                profile,
                data_root: PathBuf::from("data"),
                planes: Plane::ALL.to_vec(),
                seed: 7,
                n_patients: 138,
                n_test: 25,
                n_folds: 3,
                phantom: PhantomGrid {
                    dims: [256; 3],
                    spacing_mm: [1.0; 3],
                },
                qc: QcPolicy::with_bbox(144),
                selection: SelectionPolicy::default(),
                model: ModelConfig::full(),
                train: TrainConfig::full(),
                sweep: SweepConfig::default(),
                predict_checkpoint: CheckpointChoice::Last,
            },
        }
    }

    /// Parses a TOML document. A top-level `profile` key picks the defaults
    /// (desk when absent); every other key replaces the matching field,
    /// tables merging recursively.
    pub fn from_toml(text: &str) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        let profile = match overrides.get("profile") {
            None => Profile::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| PipelineError::Config(format!("profile: {e}")))?,
        };
        Self::profile(profile).merged(overrides)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data_root.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data_root = dir.join(&cfg.data_root);
            }
        }
        Ok(cfg)
    }

    fn merged(&self, overrides: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        merge(&mut base, overrides);
        let cfg: PipelineConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.qc.bbox_size.iter().any(|&b| b != self.model.image_size) {
            return bad(format!(
                "image_size {} does not match ROI box {:?}",
                self.model.image_size, self.qc.bbox_size
            ));
        }
        if self.planes.is_empty() {
            return bad("no planes selected".into());
        }
        if self.n_folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.n_folds));
        }
        if self.n_patients > 0 && self.n_patients < self.n_test + self.n_folds {
            return bad(format!(
                "{} patients cannot fill {} test patients and {} folds",
                self.n_patients, self.n_test, self.n_folds
            ));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.selection.validate()?;
        self.sweep.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form with the data root left out, hex
    /// encoded.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("data_root");
        }
        let json = serde_json::to_vec(&v).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// Stable per-purpose seed derived from the global seed.
    pub fn derived_seed(&self, purpose: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(purpose.as_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
