//! Brain-anchored region of interest and intensity preprocessing.
//!
//! The brain is found as the largest 6-connected component of PET voxels
//! above an SUV threshold. QC metrics on the matching CT region drive an
//! automatic threshold ladder; the fixed-size box is then placed relative to
//! the brain centroid.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Modality, PatientRecord, Volume3D};

pub const DEFAULT_SUV_THRESHOLD: f64 = 3.0;
pub const CT_LEVEL_HU: f64 = 40.0;
pub const CT_WINDOW_HU: f64 = 350.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcMetrics {
    pub brain_volume_cm3: f64,
    pub hu_max: f64,
    pub hu_mean: f64,
    pub hu_std: f64,
}

/// Box placement relative to the brain centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct BoxPlacement {
    /// Extra voxel shift applied after the default alignment (box top at the
    /// centroid's axial level, centred in x and y).
    pub offset_vox: [i64; 3],
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcPolicy {
    pub brain_volume_cm3: (f64, f64),
    pub hu_max_cap: f64,
    /// Ascending SUV thresholds tried in order; the first is the default.
    pub threshold_ladder: Vec<f64>,
    pub bbox_size: [usize; 3],
    pub placement: BoxPlacement,
}

impl QcPolicy {
    pub fn with_bbox(bbox: usize) -> Self {
        QcPolicy {
            brain_volume_cm3: (900.0, 1600.0),
            hu_max_cap: 300.0,
            threshold_ladder: vec![3.0, 4.0, 5.0, 6.0, 8.0],
            bbox_size: [bbox; 3],
            placement: BoxPlacement::default(),
        }
    }

    pub fn accepts(&self, qc: &QcMetrics) -> bool {
        let (lo, hi) = self.brain_volume_cm3;
        qc.brain_volume_cm3 >= lo && qc.brain_volume_cm3 <= hi && qc.hu_max <= self.hu_max_cap
    }
}

impl Default for QcPolicy {
    fn default() -> Self {
        Self::with_bbox(144)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoiStatus {
    Accepted,
    ThresholdAdjusted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiAttempt {
    pub threshold: f64,
    pub qc: Option<QcMetrics>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiResult {
    pub suv_threshold: f64,
    pub brain_mask: Volume3D,
    pub bbox_origin: [i64; 3],
    pub bbox_size: [usize; 3],
    /// Metrics of the final attempt; `None` when its mask was empty.
    pub qc: Option<QcMetrics>,
    pub status: RoiStatus,
    pub attempts: Vec<RoiAttempt>,
}

/// One line of the per-patient QC report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReportLine {
    pub id: String,
    pub threshold: f64,
    pub status: RoiStatus,
    pub brain_volume_cm3: Option<f64>,
    pub hu_max: Option<f64>,
    pub hu_mean: Option<f64>,
    pub hu_std: Option<f64>,
    pub bbox_origin: [i64; 3],
}

impl RoiResult {
    pub fn report_line(&self, id: &str) -> QcReportLine {
        QcReportLine {
            id: id.to_string(),
            threshold: self.suv_threshold,
            status: self.status,
            brain_volume_cm3: self.qc.map(|q| q.brain_volume_cm3),
            hu_max: self.qc.map(|q| q.hu_max),
            hu_mean: self.qc.map(|q| q.hu_mean),
            hu_std: self.qc.map(|q| q.hu_std),
            bbox_origin: self.bbox_origin,
        }
    }
}

/// Labels 6-connected components of `fg`; returns per-voxel labels
/// (0 = background) and component sizes indexed by `label - 1`.
pub fn label_components(dims: [usize; 3], fg: &[bool]) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u32; fg.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            let mut visit = |j: usize| {
                if fg[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
            if z > 0 {
                visit(i - nx * ny);
            }
            if z + 1 < nz {
                visit(i + nx * ny);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Largest 6-connected component of `{SUV > suv_threshold}`. Ties go to the
/// component reached first in x-fastest scan order.
pub fn segment_brain(pet: &Volume3D, suv_threshold: f64) -> Result<Volume3D> {
    pet.require(Modality::Pet)?;
    if !(suv_threshold > 0.0) {
        return Err(Error::Parameter(format!("SUV threshold must be positive, got {suv_threshold}")));
    }
    let fg: Vec<bool> = pet.data().iter().map(|&v| v > suv_threshold).collect();
    let (labels, sizes) = label_components(pet.dims(), &fg);
    let keep = sizes
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, usize)>, (i, &s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i as u32 + 1);
    let data = labels
        .iter()
        .map(|&l| if Some(l) == keep { 1.0 } else { 0.0 })
        .collect();
    Volume3D::with_origin(pet.dims(), pet.spacing(), Modality::Mask, pet.origin(), data)
}

pub fn qc_brain(mask: &Volume3D, ct: &Volume3D) -> Result<QcMetrics> {
    mask.require(Modality::Mask)?;
    if mask.dims() != ct.dims() {
        return Err(Error::Shape(format!(
            "mask {:?} and CT {:?} differ",
            mask.dims(),
            ct.dims()
        )));
    }
    let values: Vec<f64> = mask
        .data()
        .iter()
        .zip(ct.data())
        .filter(|(&m, _)| m > 0.0)
        .map(|(_, &h)| h)
        .collect();
    if values.is_empty() {
        return Err(Error::Segmentation("brain mask is empty".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(QcMetrics {
        brain_volume_cm3: n * mask.voxel_volume_mm3() / 1000.0,
        hu_max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        hu_mean: mean,
        hu_std: var.sqrt(),
    })
}

fn centroid(mask: &Volume3D) -> Option<[f64; 3]> {
    let [nx, ny, _] = mask.dims();
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (i, &m) in mask.data().iter().enumerate() {
        if m > 0.0 {
            sum[0] += (i % nx) as f64;
            sum[1] += ((i / nx) % ny) as f64;
            sum[2] += (i / (nx * ny)) as f64;
            n += 1;
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// Box origin (in the volume's own voxel grid) for a brain mask.
pub fn place_bbox(mask: &Volume3D, size: [usize; 3], placement: &BoxPlacement) -> [i64; 3] {
    let dims = mask.dims();
    let c = centroid(mask).unwrap_or(dims.map(|d| d as f64 / 2.0));
    let raw = [
        c[0].round() as i64 - size[0] as i64 / 2,
        c[1].round() as i64 - size[1] as i64 / 2,
        c[2].round() as i64 - size[2] as i64,
    ];
    [0, 1, 2].map(|i| {
        let hi = (dims[i] as i64 - size[i] as i64).max(0);
        (raw[i] + placement.offset_vox[i]).clamp(0, hi)
    })
}

/// Brain segmentation with QC-driven threshold escalation and box placement.
pub fn auto_roi(patient: &PatientRecord, policy: &QcPolicy) -> Result<RoiResult> {
    if policy.threshold_ladder.is_empty() {
        return Err(Error::Parameter("threshold ladder is empty".into()));
    }
    if policy.threshold_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parameter("threshold ladder must be strictly ascending".into()));
    }
    let mut attempts = Vec::new();
    let mut last = None;
    for (step, &th) in policy.threshold_ladder.iter().enumerate() {
        let mask = segment_brain(&patient.pet, th)?;
        let qc = match qc_brain(&mask, &patient.ct) {
            Ok(q) => Some(q),
            Err(Error::Segmentation(_)) => None,
            Err(e) => return Err(e),
        };
        let passed = qc.as_ref().is_some_and(|q| policy.accepts(q));
        attempts.push(RoiAttempt {
            threshold: th,
            qc,
            passed,
        });
        if passed {
            let origin = place_bbox(&mask, policy.bbox_size, &policy.placement);
            return Ok(RoiResult {
                suv_threshold: th,
                brain_mask: mask,
                bbox_origin: offset(origin, patient.pet.origin()),
                bbox_size: policy.bbox_size,
                qc,
                status: if step == 0 {
                    RoiStatus::Accepted
                } else {
                    RoiStatus::ThresholdAdjusted
                },
                attempts,
            });
        }
        last = Some((th, mask, qc));
    }
    let (th, mask, qc) = last.expect("ladder is nonempty");
    let origin = place_bbox(&mask, policy.bbox_size, &policy.placement);
    Ok(RoiResult {
        suv_threshold: th,
        brain_mask: mask,
        bbox_origin: offset(origin, patient.pet.origin()),
        bbox_size: policy.bbox_size,
        qc,
        status: RoiStatus::Failed,
        attempts,
    })
}

fn offset(a: [i64; 3], b: [i64; 3]) -> [i64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Extracts the ROI box. Box coordinates are in the root grid, so cropping an
/// already cropped volume with the same ROI returns it unchanged. Voxels
/// outside the source are zero.
pub fn crop(v: &Volume3D, roi: &RoiResult) -> Result<Volume3D> {
    if roi.status == RoiStatus::Failed {
        return Err(Error::Segmentation("cannot crop with a failed ROI".into()));
    }
    crop_box(v, roi.bbox_origin, roi.bbox_size)
}

pub fn crop_box(v: &Volume3D, origin: [i64; 3], size: [usize; 3]) -> Result<Volume3D> {
    let dims = v.dims();
    let src = v.origin();
    let mut out = vec![0.0; size.iter().product()];
    for z in 0..size[2] {
        let sz = origin[2] + z as i64 - src[2];
        if sz < 0 || sz >= dims[2] as i64 {
            continue;
        }
        for y in 0..size[1] {
            let sy = origin[1] + y as i64 - src[1];
            if sy < 0 || sy >= dims[1] as i64 {
                continue;
            }
            for x in 0..size[0] {
                let sx = origin[0] + x as i64 - src[0];
                if sx < 0 || sx >= dims[0] as i64 {
                    continue;
                }
                out[x + size[0] * (y + size[1] * z)] = v.get(sx as usize, sy as usize, sz as usize);
            }
        }
    }
    Volume3D::with_origin(size, v.spacing(), v.modality(), origin, out)
}

/// Clamps HU to `[level - window / 2, level + window / 2]`.
pub fn window_ct(ct: &Volume3D, level: f64, window: f64) -> Result<Volume3D> {
    ct.require(Modality::Ct)?;
    if !(window > 0.0) {
        return Err(Error::Parameter(format!("window must be positive, got {window}")));
    }
    let (lo, hi) = (level - window / 2.0, level + window / 2.0);
    ct.map(|v| v.clamp(lo, hi))
}

pub fn clamp_pet(pet: &Volume3D) -> Result<Volume3D> {
    pet.require(Modality::Pet)?;
    pet.map(|v| v.max(0.0))
}

/// Per-volume z-normalisation with population statistics.
pub fn znorm(v: &Volume3D) -> Result<Volume3D> {
    let n = v.len() as f64;
    let mean = v.data().iter().sum::<f64>() / n;
    let var = v.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::Validation("cannot z-normalise a constant volume".into()));
    }
    v.map(|x| (x - mean) / std)
}

/// Body-weight SUV from raw activity concentration (Bq/mL).
pub fn suv_convert(raw_pet: &Volume3D, weight_kg: f64, dose_bq: f64, decay_factor: f64) -> Result<Volume3D> {
    for (name, value) in [("weight_kg", weight_kg), ("dose_bq", dose_bq), ("decay_factor", decay_factor)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Parameter(format!("{name} must be positive, got {value}")));
        }
    }
    let scale = weight_kg * 1000.0 / (dose_bq * decay_factor);
    raw_pet.map_to(Modality::Pet, |v| v * scale)
}

/// Network inputs for one patient: ROI crop of all three volumes, CT
/// windowed then z-normalised, PET clamped then z-normalised. The mask is
/// cropped only.
pub fn preprocess(patient: &PatientRecord, roi: &RoiResult) -> Result<PatientRecord> {
    let ct = znorm(&window_ct(&crop(&patient.ct, roi)?, CT_LEVEL_HU, CT_WINDOW_HU)?)?;
    let pet = znorm(&clamp_pet(&crop(&patient.pet, roi)?)?)?;
    let gtv = crop(&patient.gtv, roi)?;
    PatientRecord::new(patient.id.clone(), ct, pet, gtv, patient.meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{generate_phantom, Gender, Hpv, NStage, PatientMeta, PhantomSpec, TStage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DESK: [usize; 3] = [64, 64, 64];
    const DESK_MM: [f64; 3] = [4.0; 3];

    fn meta() -> PatientMeta {
        PatientMeta {
            gender: Gender::Female,
            t_stage: TStage::T2,
            n_stage: NStage::N1,
            hpv: Hpv::Positive,
        }
    }

    fn pet_from(dims: [usize; 3], data: Vec<f64>) -> Volume3D {
        Volume3D::new(dims, [1.0; 3], Modality::Pet, data).unwrap()
    }

    fn blobs(dims: [usize; 3], boxes: &[([usize; 3], [usize; 3])]) -> Volume3D {
        let mut data = vec![0.0; dims.iter().product()];
        for (lo, hi) in boxes {
            for z in lo[2]..hi[2] {
                for y in lo[1]..hi[1] {
                    for x in lo[0]..hi[0] {
                        data[x + dims[0] * (y + dims[1] * z)] = 10.0;
                    }
                }
            }
        }
        pet_from(dims, data)
    }

    #[test]
    fn single_blob_is_the_mask() {
        let pet = blobs([10, 10, 10], &[([2, 2, 2], [5, 6, 7])]);
        let mask = segment_brain(&pet, 3.0).unwrap();
        assert_eq!(mask.data(), pet.map_to(Modality::Mask, |v| (v > 3.0) as u8 as f64).unwrap().data());
    }

    #[test]
    fn largest_of_two_blobs_wins() {
        // 100 voxels vs 40 voxels
        let pet = blobs([12, 12, 12], &[([0, 0, 0], [5, 5, 4]), ([7, 8, 10], [12, 12, 12])]);
        let mask = segment_brain(&pet, 3.0).unwrap();
        assert_eq!(mask.count_positive(), 100);
        assert_eq!(mask.get(0, 0, 0), 1.0);
        assert_eq!(mask.get(9, 9, 11), 0.0);
        assert_eq!(pet.get(9, 9, 11), 10.0);
    }

    #[test]
    fn diagonal_neighbours_are_not_connected() {
        let mut data = vec![0.0; 27];
        data[0] = 10.0; // (0,0,0)
        data[1 + 3] = 10.0; // (1,1,0)
        let mask = segment_brain(&pet_from([3, 3, 3], data), 3.0).unwrap();
        assert_eq!(mask.count_positive(), 1);
    }

    #[test]
    fn segment_brain_checks_inputs() {
        let ct = Volume3D::filled([2, 2, 2], [1.0; 3], Modality::Ct, 0.0).unwrap();
        assert!(matches!(segment_brain(&ct, 3.0), Err(Error::WrongModality { .. })));
        let pet = Volume3D::filled([2, 2, 2], [1.0; 3], Modality::Pet, 0.0).unwrap();
        assert!(segment_brain(&pet, 0.0).is_err());
        assert_eq!(segment_brain(&pet, 3.0).unwrap().count_positive(), 0);
    }

    #[test]
    fn qc_units_and_stats() {
        let dims = [10, 10, 10];
        let mask = Volume3D::filled(dims, [1.0; 3], Modality::Mask, 1.0).unwrap();
        let ct = Volume3D::filled(dims, [1.0; 3], Modality::Ct, 25.0).unwrap();
        let qc = qc_brain(&mask, &ct).unwrap();
        assert_eq!(qc.brain_volume_cm3, 1.0);
        assert_eq!(qc.hu_std, 0.0);
        assert_eq!(qc.hu_max, 25.0);

        let empty = Volume3D::filled(dims, [1.0; 3], Modality::Mask, 0.0).unwrap();
        assert!(matches!(qc_brain(&empty, &ct), Err(Error::Segmentation(_))));
    }

    #[test]
    fn clean_phantom_is_accepted_at_default_threshold() {
        let spec = PhantomSpec::reference(4, DESK, DESK_MM);
        let p = generate_phantom("p", &spec, meta()).unwrap();
        let roi = auto_roi(&p, &QcPolicy::with_bbox(32)).unwrap();
        assert_eq!(roi.status, RoiStatus::Accepted);
        assert_eq!(roi.suv_threshold, 3.0);
        let qc = roi.qc.unwrap();
        assert!((qc.brain_volume_cm3 - 1260.0).abs() < 60.0, "{qc:?}");
        assert!(qc.hu_max < 300.0);
    }

    #[test]
    fn bridging_phantom_escalates_threshold() {
        let spec = PhantomSpec::bridging(4, DESK, DESK_MM);
        let p = generate_phantom("p", &spec, meta()).unwrap();
        let roi = auto_roi(&p, &QcPolicy::with_bbox(32)).unwrap();
        assert_eq!(roi.status, RoiStatus::ThresholdAdjusted);
        assert_eq!(roi.suv_threshold, 5.0);
        // the leaking attempts reach the bone shell
        assert!(roi.attempts[0].qc.unwrap().hu_max > 600.0);
        assert!(!roi.attempts[1].passed);
    }

    #[test]
    fn zero_pet_fails() {
        let spec = PhantomSpec::reference(4, DESK, DESK_MM);
        let mut p = generate_phantom("p", &spec, meta()).unwrap();
        p.pet = p.pet.map(|_| 0.0).unwrap();
        let roi = auto_roi(&p, &QcPolicy::with_bbox(32)).unwrap();
        assert_eq!(roi.status, RoiStatus::Failed);
        assert!(roi.qc.is_none());
        assert_eq!(roi.attempts.len(), 5);
        assert!(crop(&p.ct, &roi).is_err());
    }

    #[test]
    fn crop_properties() {
        let spec = PhantomSpec::reference(8, DESK, DESK_MM);
        let p = generate_phantom("p", &spec, meta()).unwrap();
        let roi = auto_roi(&p, &QcPolicy::with_bbox(32)).unwrap();
        let gtv = crop(&p.gtv, &roi).unwrap();
        assert_eq!(gtv.dims(), [32, 32, 32]);
        // tumor lies inside the box
        assert_eq!(gtv.count_positive(), p.gtv.count_positive());
        assert_eq!(crop(&gtv, &roi).unwrap(), gtv);

        let c = Volume3D::filled([40, 40, 40], [1.0; 3], Modality::Ct, 7.0).unwrap();
        let mut r = roi.clone();
        r.bbox_origin = [4, 4, 4];
        assert!(crop(&c, &r).unwrap().data().iter().all(|&v| v == 7.0));
        r.bbox_origin = [20, 0, 0];
        let padded = crop(&c, &r).unwrap();
        assert_eq!(padded.get(31, 0, 0), 0.0);
        assert_eq!(padded.get(19, 0, 0), 7.0);
    }

    #[test]
    fn preprocess_yields_normalised_inputs() {
        let spec = PhantomSpec::reference(8, DESK, DESK_MM);
        let p = generate_phantom("p", &spec, meta()).unwrap();
        let roi = auto_roi(&p, &QcPolicy::with_bbox(32)).unwrap();
        let q = preprocess(&p, &roi).unwrap();
        assert_eq!(q.ct.dims(), [32; 3]);
        assert_eq!(q.gtv, crop(&p.gtv, &roi).unwrap());
        for v in [&q.ct, &q.pet] {
            let n = v.len() as f64;
            let mean = v.data().iter().sum::<f64>() / n;
            let var = v.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
        // hottest PET voxel of the crop stays the hottest after normalisation
        let pet = crop(&p.pet, &roi).unwrap();
        let argmax = |v: &Volume3D| {
            (0..v.len()).fold(0, |b, i| if v.data()[i] > v.data()[b] { i } else { b })
        };
        assert_eq!(argmax(&pet), argmax(&q.pet));
    }

    #[test]
    fn ct_window_bounds() {
        let ct = Volume3D::new([3, 1, 1], [1.0; 3], Modality::Ct, vec![-1000.0, 100.0, 700.0]).unwrap();
        let w = window_ct(&ct, CT_LEVEL_HU, CT_WINDOW_HU).unwrap();
        assert_eq!(w.data(), &[-135.0, 100.0, 215.0]);
        assert_eq!(window_ct(&w, CT_LEVEL_HU, CT_WINDOW_HU).unwrap(), w);
        assert!(window_ct(&ct, 40.0, 0.0).is_err());
    }

    #[test]
    fn pet_clamp() {
        let pet = pet_from([3, 1, 1], vec![-0.5, 4.2, 0.0]);
        let c = clamp_pet(&pet).unwrap();
        assert_eq!(c.data(), &[0.0, 4.2, 0.0]);
        assert_eq!(clamp_pet(&c).unwrap(), c);
        let neg = pet_from([2, 1, 1], vec![-1.0, -3.0]);
        assert!(clamp_pet(&neg).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn znorm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = pet_from([6, 6, 6], (0..216).map(|_| rng.gen::<f64>() * 5.0).collect());
        let z = znorm(&v).unwrap();
        let n = z.len() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let std = (z.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9);
        let affine = znorm(&v.map(|x| 3.0 * x - 7.0).unwrap()).unwrap();
        for (a, b) in affine.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let zz = znorm(&z).unwrap();
        for (a, b) in zz.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(znorm(&pet_from([2, 2, 2], vec![4.0; 8])).is_err());
    }

    #[test]
    fn suv_formula() {
        let raw = pet_from([2, 1, 1], vec![5000.0, 0.0]);
        let suv = suv_convert(&raw, 70.0, 350e6, 1.0).unwrap();
        assert!((suv.data()[0] - 1.0).abs() < 1e-12);
        assert_eq!(suv.data()[1], 0.0);
        let heavy = suv_convert(&raw, 140.0, 350e6, 1.0).unwrap();
        assert!((heavy.data()[0] - 2.0).abs() < 1e-12);
        assert!(suv_convert(&raw, 0.0, 350e6, 1.0).is_err());
        assert!(suv_convert(&raw, 70.0, -1.0, 1.0).is_err());
        assert!(suv_convert(&raw, 70.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn crop_commutes_with_pointwise_ops() {
        let spec = PhantomSpec::reference(8, DESK, DESK_MM);
        let p = generate_phantom("p", &spec, meta()).unwrap();
        let roi = auto_roi(&p, &QcPolicy::with_bbox(32)).unwrap();
        let a = window_ct(&crop(&p.ct, &roi).unwrap(), 40.0, 350.0).unwrap();
        let b = crop(&window_ct(&p.ct, 40.0, 350.0).unwrap(), &roi).unwrap();
        assert_eq!(a, b);
        let a = clamp_pet(&crop(&p.pet, &roi).unwrap()).unwrap();
        let b = crop(&clamp_pet(&p.pet).unwrap(), &roi).unwrap();
        assert_eq!(a, b);
    }
}
