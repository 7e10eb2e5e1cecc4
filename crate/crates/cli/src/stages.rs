//! Pipeline stages. Each reads the previous stage's artifacts from the
//! layout, writes its own, and records a provenance file.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use probseg_core::metrics::{sweep, SweepRow};
use probseg_core::model::checkpoint::{read_checkpoint, write_checkpoint};
use probseg_core::model::{history_csv, train, Model};
use probseg_core::reconstruct::{ensemble, reconstruct, Provenance};
use probseg_core::report::{cohort_report, parse_sweep_csv, sweep_csv};
use probseg_core::roi::{auto_roi, clamp_pet, crop, preprocess, window_ct, RoiStatus, CT_LEVEL_HU, CT_WINDOW_HU};
use probseg_core::sequence::{
    extract_sequences, make_folds, select_training, selection_index, split_test, test_sequences, FoldSplit,
    SelectionPolicy, SliceSequence,
};
use probseg_core::volume::{generate_phantom, read_bundle, write_bundle, PhantomSpec};
use probseg_core::{Modality, PatientMeta, PatientRecord, Plane, ProbSequence, ProbVolume, Slice2D, Volume3D};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::layout::{read_json, read_text, require, require_bundle, write_file, write_json, Layout};

pub const STAGES: [&str; 9] = [
    "phantom",
    "preprocess",
    "split",
    "train",
    "predict",
    "reconstruct",
    "ensemble",
    "evaluate",
    "report",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub phantom_seed: u64,
    pub meta: PatientMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub patients: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn meta(&self) -> BTreeMap<String, PatientMeta> {
        self.patients.iter().map(|p| (p.id.clone(), p.meta)).collect()
    }
}

/// Stage outcome summary written next to each fold's checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub plane: Plane,
    pub fold: usize,
    pub train_patients: Vec<String>,
    pub val_patients: Vec<String>,
    pub train_sequences: usize,
    pub val_sequences: usize,
    /// No validation sequence survived selection, so every sequence of the
    /// validation patients was used.
    pub val_unselected: bool,
    pub model_seed: u64,
    pub shuffle_seed: u64,
    pub last_epoch: usize,
    pub best_val_epoch: usize,
    pub best_val_dsc: f64,
    pub second_best_epoch: usize,
    pub second_best_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProvenance {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub planes: Vec<Plane>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub version: String,
}

/// Which of the three training checkpoints feeds prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointChoice {
    #[default]
    Last,
    BestVal,
    SecondBest,
}

impl CheckpointChoice {
    pub fn file_name(self) -> &'static str {
        match self {
            CheckpointChoice::Last => "last.ckpt",
            CheckpointChoice::BestVal => "best_val.ckpt",
            CheckpointChoice::SecondBest => "second_best.ckpt",
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Runs `body` and records provenance for `stage` when it succeeds.
fn staged<T>(cfg: &PipelineConfig, planes: &[Plane], stage: &str, body: impl FnOnce(&Layout) -> Result<T>) -> Result<T> {
    let layout = Layout::new(&cfg.data_root);
    let started = now_ms();
    let out = body(&layout)?;
    write_json(
        &layout.provenance(stage),
        &StageProvenance {
            stage: stage.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            planes: planes.to_vec(),
            started_unix_ms: started,
            finished_unix_ms: now_ms(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
    )?;
    Ok(out)
}

pub fn read_manifest(layout: &Layout) -> Result<Manifest> {
    read_json(&layout.manifest(), "phantom")
}

/// Writes `n_patients` synthetic patients with sampled T/N stages.
pub fn cmd_phantom(cfg: &PipelineConfig) -> Result<Manifest> {
    staged(cfg, &[], "phantom", |layout| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.derived_seed("phantom"));
        let mut patients = Vec::with_capacity(cfg.n_patients);
        for i in 1..=cfg.n_patients {
            let id = format!("p{i}");
            let meta = PatientMeta::sample(&mut rng);
            let mut attempt = 0;
            let (phantom_seed, record) = loop {
                let seed = rng.next_u64();
                let spec = PhantomSpec::for_patient(seed, cfg.phantom.dims, cfg.phantom.spacing_mm, &meta);
                match generate_phantom(id.clone(), &spec, meta) {
                    Ok(r) => break (seed, r),
                    Err(probseg_core::Error::PhantomSpec(_)) if attempt < 16 => attempt += 1,
                    Err(e) => return Err(e.into()),
                }
            };
            for (name, v) in [("ct", &record.ct), ("pet", &record.pet), ("gtv", &record.gtv)] {
                write_bundle(v, layout.raw(&id, name))?;
            }
            patients.push(ManifestEntry { id, phantom_seed, meta });
        }
        let manifest = Manifest {
            seed: cfg.seed,
            patients,
        };
        write_json(&layout.manifest(), &manifest)?;
        Ok(manifest)
    })
}

fn load_raw(layout: &Layout, e: &ManifestEntry) -> Result<PatientRecord> {
    let mut vols = Vec::with_capacity(3);
    for name in ["ct", "pet", "gtv"] {
        let stem = layout.raw(&e.id, name);
        require_bundle(&stem, "phantom")?;
        vols.push(read_bundle(&stem)?);
    }
    let gtv = vols.pop().unwrap();
    let pet = vols.pop().unwrap();
    let ct = vols.pop().unwrap();
    Ok(PatientRecord::new(e.id.clone(), ct, pet, gtv, e.meta)?)
}

/// ROI extraction and normalisation for every patient. Patients whose QC
/// fails at every threshold are reported and left out of later stages.
pub fn cmd_preprocess(cfg: &PipelineConfig) -> Result<Vec<probseg_core::roi::QcReportLine>> {
    staged(cfg, &[], "preprocess", |layout| {
        let manifest = read_manifest(layout)?;
        let mut lines = Vec::with_capacity(manifest.patients.len());
        for e in &manifest.patients {
            let patient = load_raw(layout, e)?;
            let roi = auto_roi(&patient, &cfg.qc)?;
            lines.push(roi.report_line(&e.id));
            if roi.status == RoiStatus::Failed {
                continue;
            }
            let prep = preprocess(&patient, &roi)?;
            let ct_view = window_ct(&crop(&patient.ct, &roi)?, CT_LEVEL_HU, CT_WINDOW_HU)?;
            let pet_view = clamp_pet(&crop(&patient.pet, &roi)?)?;
            for (name, v) in [
                ("ct", &prep.ct),
                ("pet", &prep.pet),
                ("gtv", &prep.gtv),
                ("ct_view", &ct_view),
                ("pet_view", &pet_view),
            ] {
                write_bundle(v, layout.prep(&e.id, name))?;
            }
        }
        write_json(&layout.qc(), &lines)?;
        Ok(lines)
    })
}

/// Ids that passed ROI QC, in manifest order.
pub fn usable_ids(layout: &Layout) -> Result<Vec<String>> {
    let lines: Vec<probseg_core::roi::QcReportLine> = read_json(&layout.qc(), "preprocess")?;
    Ok(lines.into_iter().filter(|l| l.status != RoiStatus::Failed).map(|l| l.id).collect())
}

pub fn load_prep(layout: &Layout, id: &str, meta: PatientMeta) -> Result<PatientRecord> {
    let mut vols = Vec::with_capacity(3);
    for name in ["ct", "pet", "gtv"] {
        let stem = layout.prep(id, name);
        require_bundle(&stem, "preprocess")?;
        vols.push(read_bundle(&stem)?);
    }
    let gtv = vols.pop().unwrap();
    let pet = vols.pop().unwrap();
    let ct = vols.pop().unwrap();
    Ok(PatientRecord::new(id, ct, pet, gtv, meta)?)
}

fn selection_for(cfg: &PipelineConfig) -> SelectionPolicy {
    SelectionPolicy {
        rng_seed: cfg.selection.rng_seed ^ cfg.derived_seed("selection"),
        ..cfg.selection.clone()
    }
}

/// Held-out test set and patient-level folds, shared by all planes, plus
/// the per-patient sequence selection sidecars.
pub fn cmd_split(cfg: &PipelineConfig, planes: &[Plane]) -> Result<Vec<FoldSplit>> {
    staged(cfg, planes, "split", |layout| {
        let ids = usable_ids(layout)?;
        let meta = read_manifest(layout)?.meta();
        let (train_ids, test) = split_test(&ids, cfg.n_test, cfg.derived_seed("test"))?;
        let folds = make_folds(&train_ids, cfg.n_folds, cfg.derived_seed("folds"))?;
        let policy = selection_for(cfg);
        let mut out = Vec::new();
        for &plane in planes {
            let split = FoldSplit::new(plane, cfg.seed, folds.clone(), test.clone())?;
            write_json(&layout.split(plane), &split)?;
            for id in &train_ids {
                let record = load_prep(layout, id, meta[id])?;
                let index = selection_index(&extract_sequences(&record, plane)?, &policy)?;
                write_json(&layout.root.join("split").join(plane.name()).join(format!("{id}.json")), &index)?;
            }
            out.push(split);
        }
        Ok(out)
    })
}

pub fn read_split(layout: &Layout, plane: Plane) -> Result<FoldSplit> {
    let split: FoldSplit = read_json(&layout.split(plane), "split")?;
    split.validate()?;
    Ok(split)
}

fn selected(
    layout: &Layout,
    ids: &[String],
    meta: &BTreeMap<String, PatientMeta>,
    plane: Plane,
    policy: &SelectionPolicy,
) -> Result<(Vec<SliceSequence>, Vec<SliceSequence>)> {
    let mut kept = Vec::new();
    let mut all = Vec::new();
    for id in ids {
        let record = load_prep(layout, id, meta[id])?;
        let seqs = extract_sequences(&record, plane)?;
        kept.extend(select_training(seqs.clone(), policy)?);
        all.extend(seqs);
    }
    Ok((kept, all))
}

/// Trains one model per plane and fold.
pub fn cmd_train(cfg: &PipelineConfig, planes: &[Plane]) -> Result<Vec<TrainSummary>> {
    staged(cfg, planes, "train", |layout| {
        let meta = read_manifest(layout)?.meta();
        let policy = selection_for(cfg);
        let mut summaries = Vec::new();
        for &plane in planes {
            let split = read_split(layout, plane)?;
            for fold in 0..split.fold_count() {
                let (train_ids, val_ids) = split.fold_sets(fold);
                let (train_seqs, _) = selected(layout, &train_ids, &meta, plane, &policy)?;
                let (mut val_seqs, val_all) = selected(layout, &val_ids, &meta, plane, &policy)?;
                let val_unselected = val_seqs.is_empty();
                if val_unselected {
                    val_seqs = val_all;
                }
                if train_seqs.is_empty() {
                    return Err(PipelineError::Stage(format!(
                        "{plane} fold {fold}: selection kept no training sequence"
                    )));
                }
                let tag = format!("{plane}/fold{fold}");
                let mut model_cfg = cfg.model.clone();
                model_cfg.seed ^= cfg.derived_seed(&format!("model/{tag}"));
                let mut train_cfg = cfg.train.clone();
                train_cfg.shuffle_seed ^= cfg.derived_seed(&format!("shuffle/{tag}"));
                let outcome = train(&train_seqs, &val_seqs, &model_cfg, &train_cfg)?;

                let dir = layout.model_dir(plane, fold);
                let set = &outcome.checkpoints;
                write_checkpoint(&dir.join("last.ckpt"), &set.last)?;
                write_checkpoint(&dir.join("best_val.ckpt"), &set.best_val)?;
                write_checkpoint(&dir.join("second_best.ckpt"), &set.second_best_post_warmup)?;
                write_file(&dir.join("history.csv"), history_csv(&outcome.history))?;
                let summary = TrainSummary {
                    plane,
                    fold,
                    train_patients: train_ids,
                    val_patients: val_ids,
                    train_sequences: train_seqs.len(),
                    val_sequences: val_seqs.len(),
                    val_unselected,
                    model_seed: model_cfg.seed,
                    shuffle_seed: train_cfg.shuffle_seed,
                    last_epoch: set.last.epoch,
                    best_val_epoch: set.best_val.epoch,
                    best_val_dsc: set.best_val.val_dsc,
                    second_best_epoch: set.second_best_post_warmup.epoch,
                    second_best_fallback: outcome.second_best_fallback,
                };
                write_json(&dir.join("outcome.json"), &summary)?;
                summaries.push(summary);
            }
        }
        Ok(summaries)
    })
}

/// Stacks the three maps of every sequence along z, in `start_k` order.
fn sequences_to_volume(seqs: &[ProbSequence]) -> Result<Volume3D> {
    let first = &seqs
        .first()
        .ok_or_else(|| PipelineError::Stage("no sequence predictions".into()))?
        .maps[0];
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(w * h * 3 * seqs.len());
    for s in seqs {
        for m in &s.maps {
            data.extend_from_slice(&m.data);
        }
    }
    Ok(Volume3D::new([w, h, 3 * seqs.len()], [1.0; 3], Modality::Prob, data)?)
}

fn volume_to_sequences(v: &Volume3D) -> Result<Vec<ProbSequence>> {
    let [w, h, d] = v.dims();
    if d % 3 != 0 {
        return Err(PipelineError::Stage(format!("prediction stack of depth {d} is not a multiple of 3")));
    }
    let area = w * h;
    v.data()
        .chunks_exact(3 * area)
        .enumerate()
        .map(|(i, chunk)| {
            let map = |t: usize| Slice2D::new(w, h, chunk[t * area..(t + 1) * area].to_vec());
            Ok(ProbSequence::new(i + 1, [map(0)?, map(1)?, map(2)?])?)
        })
        .collect()
}

/// Test-time inference: every sequence of every test patient, once per fold.
pub fn cmd_predict(cfg: &PipelineConfig, planes: &[Plane], choice: CheckpointChoice) -> Result<()> {
    staged(cfg, planes, "predict", |layout| {
        let meta = read_manifest(layout)?.meta();
        for &plane in planes {
            let split = read_split(layout, plane)?;
            for fold in 0..split.fold_count() {
                let path = layout.model_dir(plane, fold).join(choice.file_name());
                require(&path, "train")?;
                let model = Model::new(read_checkpoint(&path)?.params)?;
                for id in &split.test {
                    let record = load_prep(layout, id, meta[id])?;
                    let preds = test_sequences(extract_sequences(&record, plane)?)
                        .iter()
                        .map(|s| model.forward(s))
                        .collect::<probseg_core::Result<Vec<_>>>()?;
                    write_bundle(&sequences_to_volume(&preds)?, layout.pred(plane, fold, id))?;
                }
            }
        }
        Ok(())
    })
}

fn prep_spacing(layout: &Layout, id: &str) -> Result<[f64; 3]> {
    let stem = layout.prep(id, "gtv");
    require_bundle(&stem, "preprocess")?;
    Ok(read_bundle(&stem)?.spacing())
}

/// Averages overlapping sequence predictions into per-slice maps.
pub fn cmd_reconstruct(cfg: &PipelineConfig, planes: &[Plane]) -> Result<()> {
    staged(cfg, planes, "reconstruct", |layout| {
        for &plane in planes {
            let split = read_split(layout, plane)?;
            for id in &split.test {
                let spacing = prep_spacing(layout, id)?;
                for fold in 0..split.fold_count() {
                    let stem = layout.pred(plane, fold, id);
                    require_bundle(&stem, "predict")?;
                    let seqs = volume_to_sequences(&read_bundle(&stem)?)?;
                    let provenance = Provenance {
                        model_ids: vec![format!("{plane}/fold{fold}")],
                        ensemble: false,
                    };
                    let v = reconstruct(&seqs, seqs.len() + 2, plane, provenance)?;
                    write_bundle(&v.to_volume(spacing)?, layout.recon(plane, fold, id))?;
                }
            }
        }
        Ok(())
    })
}

pub fn read_prob(stem: &std::path::Path, plane: Plane, stage: &'static str) -> Result<ProbVolume> {
    require_bundle(stem, stage)?;
    Ok(ProbVolume::from_volume(&read_bundle(stem)?, plane, Provenance::default())?)
}

/// Voxelwise mean over the fold models of each plane.
pub fn cmd_ensemble(cfg: &PipelineConfig, planes: &[Plane]) -> Result<()> {
    staged(cfg, planes, "ensemble", |layout| {
        for &plane in planes {
            let split = read_split(layout, plane)?;
            for id in &split.test {
                let spacing = prep_spacing(layout, id)?;
                let folds = (0..split.fold_count())
                    .map(|f| read_prob(&layout.recon(plane, f, id), plane, "reconstruct"))
                    .collect::<Result<Vec<_>>>()?;
                let mut v = ensemble(&folds)?;
                v.provenance = Provenance {
                    model_ids: (0..split.fold_count()).map(|f| format!("{plane}/fold{f}")).collect(),
                    ensemble: true,
                };
                write_bundle(&v.to_volume(spacing)?, layout.ensemble(plane, id))?;
            }
        }
        Ok(())
    })
}

/// Threshold sweep of every ensembled test volume against its mask.
pub fn cmd_evaluate(cfg: &PipelineConfig, planes: &[Plane]) -> Result<Vec<SweepRow>> {
    staged(cfg, planes, "evaluate", |layout| {
        let meta = read_manifest(layout)?.meta();
        let mut test: Vec<String> = Vec::new();
        for &plane in planes {
            let split = read_split(layout, plane)?;
            for id in split.test {
                if !test.contains(&id) {
                    test.push(id);
                }
            }
        }
        test.sort();
        let mut rows = Vec::new();
        for id in &test {
            let gt = load_prep(layout, id, meta[id])?.gtv;
            for &plane in planes {
                let prob = read_prob(&layout.ensemble(plane, id), plane, "ensemble")?;
                rows.extend(sweep(id, &prob, &gt, &cfg.sweep)?);
            }
        }
        write_file(&layout.eval_csv(), sweep_csv(&rows))?;
        Ok(rows)
    })
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<probseg_core::report::CohortReport> {
    staged(cfg, &[], "report", |layout| {
        let rows = parse_sweep_csv(&read_text(&layout.eval_csv(), "evaluate")?)?;
        let meta = read_manifest(layout)?.meta();
        let report = cohort_report(&rows, &meta)?;
        write_file(&layout.report("summary.csv"), report.cohort_csv())?;
        write_file(&layout.report("boxplot.csv"), report.boxplot_csv())?;
        write_file(&layout.report("scatter.csv"), report.scatter_csv())?;
        write_file(&layout.report("table.txt"), report.table(0.9))?;
        write_json(&layout.report("cohort.json"), &report)?;
        Ok(report)
    })
}

/// Every stage from preprocessing to the report, in order.
pub fn run_all(cfg: &PipelineConfig, planes: &[Plane]) -> Result<probseg_core::report::CohortReport> {
    cmd_phantom(cfg)?;
    cmd_preprocess(cfg)?;
    cmd_split(cfg, planes)?;
    cmd_train(cfg, planes)?;
    cmd_predict(cfg, planes, cfg.predict_checkpoint)?;
    cmd_reconstruct(cfg, planes)?;
    cmd_ensemble(cfg, planes)?;
    cmd_evaluate(cfg, planes)?;
    cmd_report(cfg)
}
