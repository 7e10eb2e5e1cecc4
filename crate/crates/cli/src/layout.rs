//! On-disk layout of a pipeline run under `data_root`.
//!
//! ```text
//! raw/manifest.json            raw/<id>/{ct,pet,gtv}.{json,raw}
//! prep/qc.json                 prep/<id>/{ct,pet,gtv}.{json,raw}
//! split/<plane>.json
//! models/<plane>/fold<f>/{last,best_val,second_best}.ckpt, history.csv, outcome.json
//! pred/<plane>/fold<f>/<id>.{json,raw}         sequence maps stacked along z
//! recon/<plane>/fold<f>/<id>.{json,raw}
//! ensemble/<plane>/<id>.{json,raw}
//! eval/cohort.csv
//! report/{summary.csv,boxplot.csv,scatter.csv,table.txt,cohort.json}
//! provenance/<stage>.json
//! ```

use std::path::{Path, PathBuf};

use probseg_core::volume::bundle_paths;
use probseg_core::Plane;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{PipelineError, Result};

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("raw/manifest.json")
    }

    pub fn raw(&self, id: &str, vol: &str) -> PathBuf {
        self.root.join("raw").join(id).join(vol)
    }

    pub fn prep(&self, id: &str, vol: &str) -> PathBuf {
        self.root.join("prep").join(id).join(vol)
    }

    pub fn qc(&self) -> PathBuf {
        self.root.join("prep/qc.json")
    }

    pub fn split(&self, plane: Plane) -> PathBuf {
        self.root.join("split").join(format!("{plane}.json"))
    }

    pub fn model_dir(&self, plane: Plane, fold: usize) -> PathBuf {
        self.root.join("models").join(plane.name()).join(format!("fold{fold}"))
    }

    pub fn pred(&self, plane: Plane, fold: usize, id: &str) -> PathBuf {
        self.root.join("pred").join(plane.name()).join(format!("fold{fold}")).join(id)
    }

    pub fn recon(&self, plane: Plane, fold: usize, id: &str) -> PathBuf {
        self.root.join("recon").join(plane.name()).join(format!("fold{fold}")).join(id)
    }

    pub fn ensemble(&self, plane: Plane, id: &str) -> PathBuf {
        self.root.join("ensemble").join(plane.name()).join(id)
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval/cohort.csv")
    }

    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("report").join(file)
    }

    pub fn provenance(&self, stage: &str) -> PathBuf {
        self.root.join("provenance").join(format!("{stage}.json"))
    }
}

/// Fails with a pointer to `stage` unless `path` exists.
pub fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact {
            stage,
            path: path.to_path_buf(),
        })
    }
}

/// Like [`require`] for a bundle stem: both halves must exist.
pub fn require_bundle(stem: &Path, stage: &'static str) -> Result<()> {
    let (json, raw) = bundle_paths(stem);
    require(&json, stage)?;
    require(&raw, stage)
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_text(path: &Path, stage: &'static str) -> Result<String> {
    require(path, stage)?;
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path, stage)?)?)
}
