mod common;

use std::collections::BTreeMap;
use std::path::Path;

use probseg_cli::stages::{
    cmd_evaluate, cmd_phantom, cmd_predict, cmd_preprocess, cmd_report, cmd_split, read_manifest, read_prob,
    read_split, CheckpointChoice,
};
use probseg_cli::{Layout, PipelineConfig, PipelineError};
use probseg_core::reconstruct::ensemble;
use probseg_core::report::parse_sweep_csv;
use probseg_core::volume::read_bundle;
use probseg_core::Plane;

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.starts_with(root.join("provenance")) {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn with_root(root: &Path) -> PipelineConfig {
    common::tiny_config(root)
}

#[test]
fn zero_patients_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_root(dir.path());
    cfg.n_patients = 0;
    let m = cmd_phantom(&cfg).unwrap();
    assert!(m.patients.is_empty());
    assert!(read_manifest(&Layout::new(dir.path())).unwrap().patients.is_empty());
}

#[test]
fn phantom_generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = with_root(a.path());
    cfg.n_patients = 3;
    let m = cmd_phantom(&cfg).unwrap();
    assert_eq!(m.patients.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["p1", "p2", "p3"]);
    cfg.data_root = b.path().to_path_buf();
    cmd_phantom(&cfg).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 1 + 3 * 3 * 2);
    assert_eq!(ta, tb);
    let prov = std::fs::read_to_string(a.path().join("provenance/phantom.json")).unwrap();
    assert!(prov.contains(&cfg.hash()));
}

#[test]
fn missing_upstream_output_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = with_root(dir.path());
    let err = cmd_preprocess(&cfg).unwrap_err();
    assert_eq!(err.missing_stage(), Some("phantom"));
    assert!(err.to_string().contains("probseg phantom"), "{err}");

    cfg.n_patients = 6;
    cfg.n_test = 1;
    cmd_phantom(&cfg).unwrap();
    let err = cmd_split(&cfg, &Plane::ALL).unwrap_err();
    assert_eq!(err.missing_stage(), Some("preprocess"));
    cmd_preprocess(&cfg).unwrap();
    cmd_split(&cfg, &[Plane::Axial]).unwrap();
    let err = cmd_predict(&cfg, &[Plane::Axial], CheckpointChoice::Last).unwrap_err();
    assert_eq!(err.missing_stage(), Some("train"));
    let err = cmd_predict(&cfg, &[Plane::Coronal], CheckpointChoice::Last).unwrap_err();
    assert_eq!(err.missing_stage(), Some("split"));
    let err = cmd_evaluate(&cfg, &[Plane::Axial]).unwrap_err();
    assert_eq!(err.missing_stage(), Some("ensemble"));
    let err = cmd_report(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::MissingArtifact { stage: "evaluate", .. }));
}

#[test]
fn split_partitions_usable_patients() {
    let (root, cfg) = common::fixture();
    let s = read_split(&Layout::new(root), Plane::Sagittal).unwrap();
    assert_eq!(s.test.len(), cfg.n_test);
    assert_eq!(s.folds.len(), 3);
    let mut all: Vec<&String> = s.folds.iter().flatten().chain(&s.test).collect();
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 8);
    assert_eq!(read_split(&Layout::new(root), Plane::Axial).unwrap().folds, s.folds);
}

#[test]
fn ensemble_stage_equals_library_ensemble() {
    let (root, _) = common::fixture();
    let layout = Layout::new(root);
    let split = read_split(&layout, Plane::Coronal).unwrap();
    for id in &split.test {
        let folds: Vec<_> = (0..3)
            .map(|f| read_prob(&layout.recon(Plane::Coronal, f, id), Plane::Coronal, "reconstruct").unwrap())
            .collect();
        let manual = ensemble(&folds).unwrap();
        let stored = read_prob(&layout.ensemble(Plane::Coronal, id), Plane::Coronal, "ensemble").unwrap();
        assert_eq!(stored.n(), manual.n());
        for (a, b) in stored.slices.iter().zip(&manual.slices) {
            // bundles hold f32 voxels
            let narrowed: Vec<f64> = b.data.iter().map(|&v| v as f32 as f64).collect();
            assert_eq!(a.data, narrowed);
        }
    }
}

#[test]
fn evaluation_rows_cover_planes_and_thresholds() {
    let (root, cfg) = common::fixture();
    let layout = Layout::new(root);
    let rows = parse_sweep_csv(&std::fs::read_to_string(layout.eval_csv()).unwrap()).unwrap();
    let split = read_split(&layout, Plane::Axial).unwrap();
    assert_eq!(rows.len(), split.test.len() * 3 * 9);
    for id in &split.test {
        assert_eq!(rows.iter().filter(|r| &r.patient == id).count(), 27);
    }
    // reruns without retraining are byte-identical
    let before = std::fs::read(layout.eval_csv()).unwrap();
    let report_before = std::fs::read(layout.report("summary.csv")).unwrap();
    cmd_evaluate(cfg, &Plane::ALL).unwrap();
    cmd_report(cfg).unwrap();
    assert_eq!(std::fs::read(layout.eval_csv()).unwrap(), before);
    assert_eq!(std::fs::read(layout.report("summary.csv")).unwrap(), report_before);
}

#[test]
fn every_stage_records_provenance() {
    let (root, cfg) = common::fixture();
    for stage in probseg_cli::stages::STAGES {
        let text = std::fs::read_to_string(Layout::new(root).provenance(stage)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["config_hash"], cfg.hash());
        assert_eq!(v["seed"], cfg.seed);
    }
}

#[test]
fn checkpoints_and_history_are_written() {
    let (root, _) = common::fixture();
    let dir = Layout::new(root).model_dir(Plane::Axial, 1);
    for f in ["last.ckpt", "best_val.ckpt", "second_best.ckpt", "outcome.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let last = probseg_core::model::read_checkpoint(&dir.join("last.ckpt")).unwrap();
    assert_eq!(last.epoch, 2);
    let prep = read_bundle(Layout::new(root).prep("p1", "ct")).unwrap();
    assert_eq!(prep.dims(), [32, 32, 32]);
}
