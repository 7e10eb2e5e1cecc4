//! Dense 3D scalar volumes, plane-wise slicing and the on-disk bundle format.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`. Slice indices are 1-based everywhere in the
//! public API.

mod bundle;
mod phantom;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bundle::{bundle_paths, read_bundle, write_bundle, BundleHeader, BUNDLE_SCHEMA_VERSION};
pub use phantom::{
    generate_phantom, Ellipsoid, Gender, Hpv, Lesion, NStage, NoiseSpec, PatientMeta,
    PatientRecord, PhantomSpec, TStage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "MASK")]
    Mask,
    #[serde(rename = "PROB")]
    Prob,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Ct => "CT",
            Modality::Pet => "PET",
            Modality::Mask => "MASK",
            Modality::Prob => "PROB",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "CT" => Ok(Modality::Ct),
            "PET" => Ok(Modality::Pet),
            "MASK" => Ok(Modality::Mask),
            "PROB" => Ok(Modality::Prob),
            other => Err(Error::UnknownModality(other.to_string())),
        }
    }

    /// Checks a single voxel value against this modality's range.
    pub fn admits(self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self {
            Modality::Ct | Modality::Pet => true,
            Modality::Mask => value == 0.0 || value == 1.0,
            Modality::Prob => (0.0..=1.0).contains(&value),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Slicing orientation. Each plane maps slice `k` (1-based, along the plane
/// normal) and an in-plane `(col, row)` pair onto a voxel:
///
/// | plane    | normal | col | row |
/// |----------|--------|-----|-----|
/// | axial    | z      | x   | y   |
/// | coronal  | y      | x   | z   |
/// | sagittal | x      | y   | z   |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }

    /// Short model label (M_a, M_c, M_s).
    pub fn model_label(self) -> &'static str {
        match self {
            Plane::Axial => "M_a",
            Plane::Coronal => "M_c",
            Plane::Sagittal => "M_s",
        }
    }

    pub fn normal_axis(self) -> usize {
        match self {
            Plane::Axial => 2,
            Plane::Coronal => 1,
            Plane::Sagittal => 0,
        }
    }

    /// Number of slices along the plane normal.
    pub fn extent(self, dims: [usize; 3]) -> usize {
        dims[self.normal_axis()]
    }

    /// In-plane `(width, height)` of a slice.
    pub fn slice_dims(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            Plane::Axial => (dims[0], dims[1]),
            Plane::Coronal => (dims[0], dims[2]),
            Plane::Sagittal => (dims[1], dims[2]),
        }
    }

    /// Voxel coordinate for 0-based slice `k0` and in-plane `(col, row)`.
    pub fn voxel(self, k0: usize, col: usize, row: usize) -> [usize; 3] {
        match self {
            Plane::Axial => [col, row, k0],
            Plane::Coronal => [col, k0, row],
            Plane::Sagittal => [k0, col, row],
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            other => Err(Error::Parameter(format!("unknown plane {other:?}"))),
        }
    }
}

/// A 2D scalar grid, row-major (`data[row * width + col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Slice2D {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "slice {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Slice2D {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Slice2D {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn area(&self) -> usize {
        self.data.len()
    }

    pub fn same_dims(&self, other: &Slice2D) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Number of strictly positive pixels.
    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    modality: Modality,
    /// Voxel offset of this grid inside the grid it was cropped from.
    origin: [i64; 3],
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], modality: Modality, data: Vec<f64>) -> Result<Self> {
        Self::with_origin(dims, spacing, modality, [0; 3], data)
    }

    pub fn with_origin(
        dims: [usize; 3],
        spacing: [f64; 3],
        modality: Modality,
        origin: [i64; 3],
        data: Vec<f64>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Validation(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Validation(format!("spacing must be positive, got {spacing:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::Validation(format!(
                "dims {dims:?} need {n} voxels, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&v| !modality.admits(v)) {
            return Err(Error::Validation(format!(
                "voxel {pos} has value {} not admissible for {modality}",
                data[pos]
            )));
        }
        Ok(Volume3D {
            dims,
            spacing,
            modality,
            origin,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], modality: Modality, value: f64) -> Result<Self> {
        Self::new(dims, spacing, modality, vec![value; dims[0] * dims[1] * dims[2]])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn origin(&self) -> [i64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    pub fn same_grid(&self, other: &Volume3D) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn require(&self, modality: Modality) -> Result<()> {
        if self.modality != modality {
            return Err(Error::WrongModality {
                expected: modality,
                actual: self.modality,
            });
        }
        Ok(())
    }

    /// Applies `f` voxelwise, keeping grid metadata and re-validating against `modality`.
    pub fn map_to(&self, modality: Modality, f: impl Fn(f64) -> f64) -> Result<Volume3D> {
        Volume3D::with_origin(
            self.dims,
            self.spacing,
            modality,
            self.origin,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Volume3D> {
        self.map_to(self.modality, f)
    }

    pub fn count_positive(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Extracts slice `k` (1-based) along `plane` as a copy.
    pub fn slice(&self, plane: Plane, k: usize) -> Result<Slice2D> {
        let bound = plane.extent(self.dims);
        if k == 0 || k > bound {
            return Err(Error::SliceIndex { plane, k, bound });
        }
        let k0 = k - 1;
        let (w, h) = plane.slice_dims(self.dims);
        let [nx, ny, _] = self.dims;
        let data = match plane {
            Plane::Axial => {
                let start = nx * ny * k0;
                self.data[start..start + nx * ny].to_vec()
            }
            Plane::Coronal => {
                let mut out = Vec::with_capacity(w * h);
                for z in 0..h {
                    let start = self.index(0, k0, z);
                    out.extend_from_slice(&self.data[start..start + nx]);
                }
                out
            }
            Plane::Sagittal => {
                let mut out = Vec::with_capacity(w * h);
                for z in 0..h {
                    for y in 0..w {
                        out.push(self.data[self.index(k0, y, z)]);
                    }
                }
                out
            }
        };
        Ok(Slice2D {
            width: w,
            height: h,
            data,
        })
    }

    /// All slices along `plane`, in order `k = 1..=n`.
    pub fn slices(&self, plane: Plane) -> Vec<Slice2D> {
        (1..=plane.extent(self.dims))
            .map(|k| self.slice(plane, k).expect("k within extent"))
            .collect()
    }

    /// Reassembles a volume from the full ordered stack of `plane` slices.
    pub fn from_slices(
        plane: Plane,
        slices: &[Slice2D],
        spacing: [f64; 3],
        modality: Modality,
    ) -> Result<Volume3D> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Empty("no slices to assemble".into()))?;
        if let Some(bad) = slices.iter().position(|s| !s.same_dims(first)) {
            return Err(Error::Shape(format!(
                "slice {} is {}x{}, expected {}x{}",
                bad + 1,
                slices[bad].width,
                slices[bad].height,
                first.width,
                first.height
            )));
        }
        let (w, h, n) = (first.width, first.height, slices.len());
        let dims = match plane {
            Plane::Axial => [w, h, n],
            Plane::Coronal => [w, n, h],
            Plane::Sagittal => [n, w, h],
        };
        let mut data = vec![0.0; w * h * n];
        for (k0, s) in slices.iter().enumerate() {
            for row in 0..h {
                for col in 0..w {
                    let [x, y, z] = plane.voxel(k0, col, row);
                    data[x + dims[0] * (y + dims[1] * z)] = s.data[row * w + col];
                }
            }
        }
        Volume3D::new(dims, spacing, modality, data)
    }
}
