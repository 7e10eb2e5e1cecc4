//! Per-slice probability maps from overlapping 3-slice predictions, and fold
//! ensembling.
//!
//! Sequence `s` (indexed by its first slice) predicts slices `s, s+1, s+2`.
//! Slice `k` of an `n`-slice plane therefore receives one prediction for
//! `k ∈ {1, n}`, two for `k ∈ {2, n-1}` and three otherwise; `out_k` is their
//! mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::SEQ_LEN;
use crate::volume::{Modality, Plane, Slice2D, Volume3D};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbSequence {
    pub start_k: usize,
    pub maps: [Slice2D; SEQ_LEN],
}

impl ProbSequence {
    pub fn new(start_k: usize, maps: [Slice2D; SEQ_LEN]) -> Result<Self> {
        if start_k == 0 {
            return Err(Error::Parameter("start_k is 1-based".into()));
        }
        if !(maps[0].same_dims(&maps[1]) && maps[0].same_dims(&maps[2])) {
            return Err(Error::Shape("sequence maps differ in size".into()));
        }
        if maps.iter().flat_map(|m| &m.data).any(|&v| !Modality::Prob.admits(v)) {
            return Err(Error::Validation("probability outside [0, 1]".into()));
        }
        Ok(ProbSequence { start_k, maps })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_ids: Vec<String>,
    pub ensemble: bool,
}

/// Reconstructed per-slice probability maps `out_1..out_n` of one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    pub plane: Plane,
    pub slices: Vec<Slice2D>,
    pub provenance: Provenance,
}

impl ProbVolume {
    pub fn n(&self) -> usize {
        self.slices.len()
    }

    /// `out_k`, 1-based.
    pub fn slice(&self, k: usize) -> Result<&Slice2D> {
        if k == 0 || k > self.slices.len() {
            return Err(Error::SliceIndex {
                plane: self.plane,
                k,
                bound: self.slices.len(),
            });
        }
        Ok(&self.slices[k - 1])
    }

    pub fn to_volume(&self, spacing: [f64; 3]) -> Result<Volume3D> {
        Volume3D::from_slices(self.plane, &self.slices, spacing, Modality::Prob)
    }

    pub fn from_volume(v: &Volume3D, plane: Plane, provenance: Provenance) -> Result<Self> {
        v.require(Modality::Prob)?;
        Ok(ProbVolume {
            plane,
            slices: v.slices(plane),
            provenance,
        })
    }
}

/// Number of sequences covering slice `k` of an `n`-slice plane.
pub fn prediction_count(k: usize, n: usize) -> usize {
    let first = k.saturating_sub(SEQ_LEN - 1).max(1);
    let last = k.min(n - (SEQ_LEN - 1));
    last + 1 - first
}

pub fn reconstruct(seqs: &[ProbSequence], n: usize, plane: Plane, provenance: Provenance) -> Result<ProbVolume> {
    if n < SEQ_LEN {
        return Err(Error::Shape(format!("cannot reconstruct {n} slices from 3-slice sequences")));
    }
    let expected = n - (SEQ_LEN - 1);
    let mut by_start: Vec<Option<&ProbSequence>> = vec![None; expected];
    let mut duplicated = Vec::new();
    let mut stray = Vec::new();
    for s in seqs {
        match by_start.get_mut(s.start_k.wrapping_sub(1)) {
            Some(slot @ None) => *slot = Some(s),
            Some(Some(_)) => duplicated.push(s.start_k),
            None => stray.push(s.start_k),
        }
    }
    let missing: Vec<usize> = (1..=expected).filter(|&k| by_start[k - 1].is_none()).collect();
    duplicated.extend(stray);
    if !missing.is_empty() || !duplicated.is_empty() {
        return Err(Error::Coverage { missing, duplicated });
    }
    let ordered: Vec<&ProbSequence> = by_start.into_iter().flatten().collect();
    let (w, h) = (ordered[0].maps[0].width, ordered[0].maps[0].height);
    if ordered.iter().flat_map(|s| &s.maps).any(|m| m.width != w || m.height != h) {
        return Err(Error::Shape("prediction maps differ in size".into()));
    }

    let mut sums = vec![Slice2D::filled(w, h, 0.0); n];
    // ascending start_k then position keeps the summation order fixed
    for (i, s) in ordered.iter().enumerate() {
        for (j, map) in s.maps.iter().enumerate() {
            for (acc, &v) in sums[i + j].data.iter_mut().zip(&map.data) {
                *acc += v;
            }
        }
    }
    for (k0, slice) in sums.iter_mut().enumerate() {
        let count = prediction_count(k0 + 1, n) as f64;
        for v in &mut slice.data {
            *v /= count;
        }
    }
    Ok(ProbVolume {
        plane,
        slices: sums,
        provenance,
    })
}

/// Voxelwise mean of fold probability volumes.
pub fn ensemble(volumes: &[ProbVolume]) -> Result<ProbVolume> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::Empty("nothing to ensemble".into()))?;
    for v in volumes {
        if v.plane != first.plane || v.slices.len() != first.slices.len() {
            return Err(Error::Shape(format!(
                "cannot ensemble {} x{} with {} x{}",
                v.plane,
                v.slices.len(),
                first.plane,
                first.slices.len()
            )));
        }
        if v.slices.iter().zip(&first.slices).any(|(a, b)| !a.same_dims(b)) {
            return Err(Error::Shape("ensemble members differ in slice size".into()));
        }
    }
    let m = volumes.len() as f64;
    let slices = (0..first.slices.len())
        .map(|k| {
            let mut acc = Slice2D::filled(first.slices[k].width, first.slices[k].height, 0.0);
            for v in volumes {
                for (a, &x) in acc.data.iter_mut().zip(&v.slices[k].data) {
                    *a += x;
                }
            }
            for a in &mut acc.data {
                *a /= m;
            }
            acc
        })
        .collect();
    Ok(ProbVolume {
        plane: first.plane,
        slices,
        provenance: Provenance {
            model_ids: volumes.iter().flat_map(|v| v.provenance.model_ids.clone()).collect(),
            ensemble: true,
        },
    })
}

pub(crate) fn check_threshold(th: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&th) {
        return Err(Error::Parameter(format!("threshold {th} outside [0, 1]")));
    }
    Ok(())
}

/// Binary mask `prob > th` (strict).
pub fn threshold_slice(map: &Slice2D, th: f64) -> Slice2D {
    Slice2D {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|&p| if p > th { 1.0 } else { 0.0 }).collect(),
    }
}

pub fn threshold(v: &ProbVolume, th: f64, spacing: [f64; 3]) -> Result<Volume3D> {
    check_threshold(th)?;
    let masks: Vec<Slice2D> = v.slices.iter().map(|s| threshold_slice(s, th)).collect();
    Volume3D::from_slices(v.plane, &masks, spacing, Modality::Mask)
}
