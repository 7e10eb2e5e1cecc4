//! Slice-wise overlap metrics and threshold sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruct::{check_threshold, ProbVolume};
use crate::volume::{Modality, Slice2D, Volume3D};

pub const EPSILON_SMOOTH: f64 = 1e-5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl EvalCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }
}

impl std::ops::AddAssign for EvalCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn check_binary(s: &Slice2D, what: &str) -> Result<()> {
    if !s.is_binary() {
        return Err(Error::Validation(format!("{what} mask is not binary")));
    }
    Ok(())
}

pub fn counts(pred: &Slice2D, gt: &Slice2D) -> Result<EvalCounts> {
    if !pred.same_dims(gt) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    check_binary(pred, "predicted")?;
    check_binary(gt, "ground-truth")?;
    Ok(counts_unchecked(&pred.data, &gt.data))
}

fn counts_unchecked(pred: &[f64], gt: &[f64]) -> EvalCounts {
    let mut c = EvalCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p > 0.0, g > 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Counts for `prob > th` against a binary ground truth, without
/// materialising the mask.
fn counts_at(prob: &Slice2D, gt: &Slice2D, th: f64) -> EvalCounts {
    let mut c = EvalCounts::default();
    for (&p, &g) in prob.data.iter().zip(&gt.data) {
        match (p > th, g > 0.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn dsc_from_counts(c: &EvalCounts, eps: f64) -> f64 {
    let tp = c.tp as f64;
    (2.0 * tp + eps) / ((tp + c.fp as f64) + (tp + c.fn_ as f64) + eps)
}

/// Smoothed Dice: `(2 TP + eps) / ((TP + FP) + (TP + FN) + eps)`.
pub fn dsc_slice(pred: &Slice2D, gt: &Slice2D, eps: f64) -> Result<f64> {
    Ok(dsc_from_counts(&counts(pred, gt)?, eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation; `None` for an empty input.
pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

fn check_pair(prob: &ProbVolume, gt: &Volume3D) -> Result<Vec<Slice2D>> {
    gt.require(Modality::Mask)?;
    let n = prob.plane.extent(gt.dims());
    if n != prob.n() {
        return Err(Error::Shape(format!(
            "{} probability slices vs {n} ground-truth slices along {}",
            prob.n(),
            prob.plane
        )));
    }
    let gts = gt.slices(prob.plane);
    if prob.slices.iter().zip(&gts).any(|(p, g)| !p.same_dims(g)) {
        return Err(Error::Shape("probability and ground-truth slices differ in size".into()));
    }
    Ok(gts)
}

/// Per-slice counts at threshold `th` for every slice of the plane.
pub fn slice_counts(prob: &ProbVolume, gt: &Volume3D, th: f64) -> Result<Vec<EvalCounts>> {
    check_threshold(th)?;
    let gts = check_pair(prob, gt)?;
    Ok(prob
        .slices
        .iter()
        .zip(&gts)
        .map(|(p, g)| counts_at(p, g, th))
        .collect())
}

/// Mean ± std of the per-slice DSC over all slices of the plane, including
/// tumor-free slices.
pub fn patient_mean_dsc(prob: &ProbVolume, gt: &Volume3D, th: f64) -> Result<MeanStd> {
    let per_slice: Vec<f64> = slice_counts(prob, gt, th)?
        .iter()
        .map(|c| dsc_from_counts(c, EPSILON_SMOOTH))
        .collect();
    Ok(mean_std(&per_slice).expect("volume has at least one slice"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Nothing was predicted; precision is reported as 1.
    pub precision_undefined: bool,
    /// The ground truth is empty; recall is reported as 1.
    pub recall_undefined: bool,
}

fn ratio_or_one(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn precision_recall_from_counts(c: &EvalCounts) -> PrecisionRecall {
    let (precision, precision_undefined) = ratio_or_one(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio_or_one(c.tp, c.tp + c.fn_);
    PrecisionRecall {
        precision,
        recall,
        precision_undefined,
        recall_undefined,
    }
}

/// Volume-level precision and recall: counts are summed over all slices
/// before dividing.
pub fn precision_recall(prob: &ProbVolume, gt: &Volume3D, th: f64) -> Result<PrecisionRecall> {
    let mut total = EvalCounts::default();
    for c in slice_counts(prob, gt, th)? {
        total += c;
    }
    Ok(precision_recall_from_counts(&total))
}

/// Slice-averaged precision and recall (per-slice ratios, empty
/// denominators counted as 1, then averaged).
pub fn precision_recall_slice_mean(prob: &ProbVolume, gt: &Volume3D, th: f64) -> Result<(f64, f64)> {
    let per = slice_counts(prob, gt, th)?;
    let n = per.len() as f64;
    let (p, r) = per.iter().map(precision_recall_from_counts).fold((0.0, 0.0), |(p, r), x| {
        (p + x.precision, r + x.recall)
    });
    Ok((p / n, r / n))
}

pub fn tumor_volume(gt: &Volume3D) -> Result<f64> {
    gt.require(Modality::Mask)?;
    Ok(gt.count_positive() as f64 * gt.voxel_volume_mm3())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
    pub epsilon_smooth: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            thresholds: (1..=9).map(|i| i as f64 / 10.0).collect(),
            epsilon_smooth: EPSILON_SMOOTH,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Parameter("sweep needs at least one threshold".into()));
        }
        if self.thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::Parameter("sweep thresholds must lie in (0, 1)".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("sweep thresholds must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub patient: String,
    pub plane: crate::volume::Plane,
    pub th: f64,
    pub mean_dsc: f64,
    pub std_dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub pos_pixels: u64,
    pub tumor_mm3: f64,
    pub precision_slice_mean: f64,
    pub recall_slice_mean: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

pub fn sweep(patient: &str, prob: &ProbVolume, gt: &Volume3D, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let tumor_mm3 = tumor_volume(gt)?;
    cfg.thresholds
        .iter()
        .map(|&th| {
            let per = slice_counts(prob, gt, th)?;
            let dsc: Vec<f64> = per.iter().map(|c| dsc_from_counts(c, cfg.epsilon_smooth)).collect();
            let ms = mean_std(&dsc).expect("nonempty");
            let mut total = EvalCounts::default();
            for c in &per {
                total += *c;
            }
            let pr = precision_recall_from_counts(&total);
            let n = per.len() as f64;
            let (ps, rs) = per.iter().map(precision_recall_from_counts).fold((0.0, 0.0), |(p, r), x| {
                (p + x.precision, r + x.recall)
            });
            Ok(SweepRow {
                patient: patient.to_string(),
                plane: prob.plane,
                th,
                mean_dsc: ms.mean,
                std_dsc: ms.std,
                precision: pr.precision,
                recall: pr.recall,
                pos_pixels: total.predicted_positive(),
                tumor_mm3,
                precision_slice_mean: ps / n,
                recall_slice_mean: rs / n,
                precision_undefined: pr.precision_undefined,
                recall_undefined: pr.recall_undefined,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::Provenance;
    use crate::volume::Plane;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(w: usize, h: usize, ones: &[usize]) -> Slice2D {
        let mut s = Slice2D::filled(w, h, 0.0);
        for &i in ones {
            s.data[i] = 1.0;
        }
        s
    }

    fn pv(plane: Plane, slices: Vec<Slice2D>) -> ProbVolume {
        ProbVolume {
            plane,
            slices,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn dsc_edge_cases() {
        let empty = mask(4, 4, &[]);
        assert_eq!(dsc_slice(&empty, &empty, EPSILON_SMOOTH).unwrap(), 1.0);
        let a = mask(4, 4, &[1, 2, 3]);
        assert!((dsc_slice(&a, &a, EPSILON_SMOOTH).unwrap() - 1.0).abs() < 1e-6);
        // TP = 2, FP = 2, FN = 2
        let p = mask(4, 4, &[0, 1, 2, 3]);
        let g = mask(4, 4, &[0, 1, 4, 5]);
        let d = dsc_slice(&p, &g, EPSILON_SMOOTH).unwrap();
        assert_eq!(d, (4.0 + 1e-5) / (8.0 + 1e-5));
        assert!((d - 0.5).abs() < 1e-6);
        assert!(dsc_slice(&Slice2D::filled(2, 2, 0.5), &empty, EPSILON_SMOOTH).is_err());
        assert!(dsc_slice(&mask(2, 2, &[]), &empty, EPSILON_SMOOTH).is_err());
    }

    #[test]
    fn perfect_volume_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..5 * 4 * 3).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect();
        let gt = Volume3D::new([5, 4, 3], [1.0; 3], Modality::Mask, data.clone()).unwrap();
        for plane in Plane::ALL {
            let prob = pv(plane, gt.slices(plane));
            for th in [0.1, 0.5, 0.9] {
                let ms = patient_mean_dsc(&prob, &gt, th).unwrap();
                assert_eq!((ms.mean, ms.std), (1.0, 0.0));
                let pr = precision_recall(&prob, &gt, th).unwrap();
                assert_eq!((pr.precision, pr.recall), (1.0, 1.0));
            }
        }
        let none = Volume3D::filled([5, 4, 3], [1.0; 3], Modality::Mask, 0.0).unwrap();
        let prob = pv(Plane::Axial, none.slices(Plane::Axial));
        assert_eq!(patient_mean_dsc(&prob, &none, 0.5).unwrap().mean, 1.0);
        let pr = precision_recall(&prob, &none, 0.5).unwrap();
        assert!(pr.precision_undefined && pr.recall_undefined);
    }

    #[test]
    fn subset_prediction_has_full_precision() {
        let gt = Volume3D::new([4, 1, 1], [1.0; 3], Modality::Mask, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let prob = pv(Plane::Axial, vec![Slice2D::new(4, 1, vec![0.9, 0.2, 0.8, 0.1]).unwrap()]);
        let pr = precision_recall(&prob, &gt, 0.5).unwrap();
        assert_eq!(pr.precision, 1.0);
        assert!((pr.recall - 2.0 / 3.0).abs() < 1e-15);
        // single slice: summed and slice-mean variants agree
        let (ps, rs) = precision_recall_slice_mean(&prob, &gt, 0.5).unwrap();
        assert_eq!((ps, rs), (pr.precision, pr.recall));
    }

    #[test]
    fn tumor_volume_units() {
        let empty = Volume3D::filled([10, 10, 10], [1.0; 3], Modality::Mask, 0.0).unwrap();
        assert_eq!(tumor_volume(&empty).unwrap(), 0.0);
        let full = Volume3D::filled([10, 10, 10], [1.0; 3], Modality::Mask, 1.0).unwrap();
        assert_eq!(tumor_volume(&full).unwrap(), 1000.0);
        let coarse = Volume3D::filled([2, 2, 2], [4.0; 3], Modality::Mask, 1.0).unwrap();
        assert_eq!(tumor_volume(&coarse).unwrap(), 512.0);
    }

    #[test]
    fn ellipsoid_volume_close_to_analytic() {
        let e = crate::volume::Ellipsoid {
            center_mm: [64.3, 61.7, 66.1],
            radii_mm: [18.0, 14.0, 21.0],
        };
        let dims = [32, 32, 32];
        let sp = 4.0;
        let mut data = vec![0.0; 32 * 32 * 32];
        for z in 0..32 {
            for y in 0..32 {
                for x in 0..32 {
                    let p = [(x as f64 + 0.5) * sp, (y as f64 + 0.5) * sp, (z as f64 + 0.5) * sp];
                    if e.contains(p) {
                        data[x + 32 * (y + 32 * z)] = 1.0;
                    }
                }
            }
        }
        let gt = Volume3D::new(dims, [sp; 3], Modality::Mask, data).unwrap();
        let v = tumor_volume(&gt).unwrap();
        assert!((v / e.volume_mm3() - 1.0).abs() < 0.1, "{v} vs {}", e.volume_mm3());
    }

    #[test]
    fn constant_high_probability_sweep() {
        let gt = Volume3D::filled([3, 3, 4], [1.0; 3], Modality::Mask, 1.0).unwrap();
        let prob = pv(Plane::Coronal, vec![Slice2D::filled(3, 4, 0.95); 3]);
        let rows = sweep("p", &prob, &gt, &SweepConfig::default()).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| (r.mean_dsc - 1.0).abs() < 1e-12));
        let one = sweep("p", &prob, &gt, &SweepConfig { thresholds: vec![0.5], ..Default::default() }).unwrap();
        assert_eq!(one.len(), 1);
        assert!(SweepConfig { thresholds: vec![0.5, 0.4], ..Default::default() }.validate().is_err());
        assert!(SweepConfig { thresholds: vec![1.0], ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn dsc_is_symmetric_and_bounded(seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Slice2D::new(6, 5, (0..30).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect()).unwrap();
            let b = Slice2D::new(6, 5, (0..30).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect()).unwrap();
            let ab = dsc_slice(&a, &b, EPSILON_SMOOTH).unwrap();
            prop_assert_eq!(ab, dsc_slice(&b, &a, EPSILON_SMOOTH).unwrap());
            prop_assert!(ab > 0.0 && ab <= 1.0);
            let c = counts(&a, &b).unwrap();
            prop_assert_eq!(c.total(), 30);
            if c.tp > 0 {
                let pr = precision_recall_from_counts(&c);
                let f1 = 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall);
                prop_assert!((dsc_from_counts(&c, 0.0) - f1).abs() < 1e-12);
            }
        }

        #[test]
        fn superlevel_monotonicity(seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = Volume3D::new([5, 5, 5], [1.0; 3], Modality::Mask,
                (0..125).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect()).unwrap();
            let prob = pv(Plane::Sagittal, (0..5).map(|_| Slice2D::new(5, 5, (0..25).map(|_| rng.gen()).collect()).unwrap()).collect());
            let rows = sweep("p", &prob, &gt, &SweepConfig::default()).unwrap();
            for w in rows.windows(2) {
                prop_assert!(w[1].pos_pixels <= w[0].pos_pixels);
                prop_assert!(w[1].recall <= w[0].recall);
            }
            let fp: Vec<u64> = SweepConfig::default().thresholds.iter()
                .map(|&t| slice_counts(&prob, &gt, t).unwrap().iter().map(|c| c.fp).sum())
                .collect();
            prop_assert!(fp.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
