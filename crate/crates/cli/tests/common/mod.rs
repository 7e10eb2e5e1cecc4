#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use probseg_cli::stages::run_all;
use probseg_cli::{PipelineConfig, Profile};
use probseg_core::Plane;

/// Eight small patients, a narrow network and two epochs: exercises every
/// stage in a few seconds.
pub fn tiny_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::profile(Profile::Desk);
    cfg.data_root = root.to_path_buf();
    cfg.n_patients = 8;
    cfg.n_test = 2;
    cfg.train.epochs = 2;
    cfg.train.checkpoint_warmup_epoch = 1;
    cfg.model.base_width = 4;
    cfg.model.recurrent_hidden = 4;
    cfg.selection.keep_fraction_negative = Some(0.1);
    cfg.selection.keep_fraction_low_tumor = Some(0.3);
    cfg.validate().unwrap();
    cfg
}

/// A finished tiny run shared by all tests of one test binary.
pub fn fixture() -> &'static (PathBuf, PipelineConfig) {
    static RUN: OnceLock<(PathBuf, PipelineConfig)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = tiny_config(&dir);
        run_all(&cfg, &Plane::ALL).unwrap();
        (dir, cfg)
    })
}
