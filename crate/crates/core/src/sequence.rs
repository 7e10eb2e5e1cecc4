//! Three-slice sequences, class-imbalance selection and patient-level folds.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{PatientRecord, Plane, Slice2D};

pub const SEQ_LEN: usize = 3;

/// Slices `start_k, start_k + 1, start_k + 2` of one patient along one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSequence {
    pub patient_id: String,
    pub plane: Plane,
    pub start_k: usize,
    pub ct: [Slice2D; SEQ_LEN],
    pub pet: [Slice2D; SEQ_LEN],
    pub gtv: [Slice2D; SEQ_LEN],
}

impl SliceSequence {
    /// Tumor pixels of the first slice over the full slice area.
    pub fn first_slice_tumor_fraction(&self) -> f64 {
        self.gtv[0].count_positive() as f64 / self.gtv[0].area() as f64
    }

    pub fn slice_dims(&self) -> (usize, usize) {
        (self.ct[0].width, self.ct[0].height)
    }
}

/// All `n - 2` sequences of a plane, ordered by `start_k = 1..=n-2`.
pub fn extract_sequences(patient: &PatientRecord, plane: Plane) -> Result<Vec<SliceSequence>> {
    let n = plane.extent(patient.ct.dims());
    if n < SEQ_LEN {
        return Err(Error::Shape(format!(
            "{plane} plane has {n} slices, sequences need at least {SEQ_LEN}"
        )));
    }
    let ct = patient.ct.slices(plane);
    let pet = patient.pet.slices(plane);
    let gtv = patient.gtv.slices(plane);
    let trio = |s: &[Slice2D], i: usize| [s[i].clone(), s[i + 1].clone(), s[i + 2].clone()];
    Ok((0..n - 2)
        .map(|i| SliceSequence {
            patient_id: patient.id.clone(),
            plane,
            start_k: i + 1,
            ct: trio(&ct, i),
            pet: trio(&pet, i),
            gtv: trio(&gtv, i),
        })
        .collect())
}

/// Test-time path: every sequence is used, no sampling.
pub fn test_sequences(seqs: Vec<SliceSequence>) -> Vec<SliceSequence> {
    seqs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub tumor_area_threshold: f64,
    /// Keep probability for sequences whose first slice has no tumor.
    /// `None` auto-tunes per patient so these make up `target_fraction`
    /// of the selected set.
    pub keep_fraction_negative: Option<f64>,
    /// Keep probability for first-slice tumor fractions in `(0, threshold]`.
    pub keep_fraction_low_tumor: Option<f64>,
    pub target_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            tumor_area_threshold: 0.05,
            keep_fraction_negative: None,
            keep_fraction_low_tumor: None,
            target_fraction: 0.05,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceClass {
    Positive,
    LowTumor,
    Negative,
}

/// One row of the per-patient sequence sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceIndexEntry {
    pub start_k: usize,
    pub first_slice_tumor_fraction: f64,
    pub kept: bool,
}

pub fn classify(fraction: f64, threshold: f64) -> SequenceClass {
    if fraction > threshold {
        SequenceClass::Positive
    } else if fraction > 0.0 {
        SequenceClass::LowTumor
    } else {
        SequenceClass::Negative
    }
}

/// 64-bit FNV-1a, used to derive stable per-patient seeds.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn patient_seed(seed: u64, patient_id: &str, plane: Plane) -> u64 {
    seed ^ fnv1a(patient_id.as_bytes()) ^ ((plane as u64 + 1) << 56)
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        let fractions = [
            Some(self.tumor_area_threshold),
            self.keep_fraction_negative,
            self.keep_fraction_low_tumor,
            Some(self.target_fraction),
        ];
        if fractions.into_iter().flatten().any(|f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::Parameter("selection fractions must lie in [0, 1]".into()));
        }
        if self.target_fraction >= 0.5 {
            return Err(Error::Parameter("target fraction must be below 0.5".into()));
        }
        Ok(())
    }

    /// Keep probabilities `(negative, low_tumor)` for one patient's class counts.
    pub fn keep_probabilities(&self, positives: usize, low: usize, negatives: usize) -> (f64, f64) {
        // selected = P + n + l with n = l = f * selected  =>  n = P * f / (1 - 2f)
        let wanted = positives as f64 * self.target_fraction / (1.0 - 2.0 * self.target_fraction);
        let auto = |pool: usize| if pool == 0 { 0.0 } else { (wanted / pool as f64).min(1.0) };
        (
            self.keep_fraction_negative.unwrap_or_else(|| auto(negatives)),
            self.keep_fraction_low_tumor.unwrap_or_else(|| auto(low)),
        )
    }
}

/// Decides which sequences to keep for training/validation. Sequences are
/// assumed to come from a single patient and plane.
pub fn selection_index(seqs: &[SliceSequence], policy: &SelectionPolicy) -> Result<Vec<SequenceIndexEntry>> {
    policy.validate()?;
    let Some(first) = seqs.first() else {
        return Ok(Vec::new());
    };
    let fractions: Vec<f64> = seqs.iter().map(SliceSequence::first_slice_tumor_fraction).collect();
    let classes: Vec<SequenceClass> = fractions
        .iter()
        .map(|&f| classify(f, policy.tumor_area_threshold))
        .collect();
    let count = |c: SequenceClass| classes.iter().filter(|&&x| x == c).count();
    let (p_neg, p_low) = policy.keep_probabilities(
        count(SequenceClass::Positive),
        count(SequenceClass::LowTumor),
        count(SequenceClass::Negative),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(patient_seed(policy.rng_seed, &first.patient_id, first.plane));
    Ok(seqs
        .iter()
        .zip(fractions)
        .zip(classes)
        .map(|((s, f), class)| {
            // one draw per sequence regardless of class keeps the stream aligned
            let u: f64 = rng.gen();
            let kept = match class {
                SequenceClass::Positive => true,
                SequenceClass::LowTumor => u < p_low,
                SequenceClass::Negative => u < p_neg,
            };
            SequenceIndexEntry {
                start_k: s.start_k,
                first_slice_tumor_fraction: f,
                kept,
            }
        })
        .collect())
}

pub fn select_training(seqs: Vec<SliceSequence>, policy: &SelectionPolicy) -> Result<Vec<SliceSequence>> {
    let index = selection_index(&seqs, policy)?;
    Ok(seqs
        .into_iter()
        .zip(index)
        .filter_map(|(s, e)| e.kept.then_some(s))
        .collect())
}

/// Random, near-equal, patient-level partition into `k` folds.
pub fn make_folds(train_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 || train_ids.len() < k {
        return Err(Error::Parameter(format!(
            "need at least {k} patients for {k} folds, got {}",
            train_ids.len()
        )));
    }
    let unique: BTreeSet<&String> = train_ids.iter().collect();
    if unique.len() != train_ids.len() {
        return Err(Error::Parameter("duplicate patient ids".into()));
    }
    let mut ids = train_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}

/// Holds out `n_test` patients; returns `(train, test)`, both sorted.
pub fn split_test(ids: &[String], n_test: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if n_test >= ids.len() {
        return Err(Error::Parameter(format!(
            "cannot hold out {n_test} of {} patients",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7e57));
    let mut test = shuffled.split_off(ids.len() - n_test);
    shuffled.sort();
    test.sort();
    Ok((shuffled, test))
}

/// Fold manifest for one plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub plane: Plane,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
    pub test: Vec<String>,
}

impl FoldSplit {
    pub fn new(plane: Plane, seed: u64, folds: Vec<Vec<String>>, test: Vec<String>) -> Result<Self> {
        let split = FoldSplit {
            plane,
            seed,
            folds,
            test,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.folds.iter().flatten().chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::Parameter(format!("patient {id:?} appears twice in the split")));
            }
        }
        Ok(())
    }

    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    pub fn assignments(&self) -> BTreeMap<&str, usize> {
        self.folds
            .iter()
            .enumerate()
            .flat_map(|(f, ids)| ids.iter().map(move |id| (id.as_str(), f)))
            .collect()
    }

    /// `(train, validation)` patient ids for fold `f`: fold `f` validates,
    /// the remaining folds train.
    pub fn fold_sets(&self, f: usize) -> (Vec<String>, Vec<String>) {
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != f)
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect();
        (train, self.folds[f].clone())
    }
}
