//! Synthetic head-and-neck PET/CT phantoms.
//!
//! A phantom is built from ellipsoids placed in millimetre coordinates: a soft
//! tissue body, a brain wrapped in a bone shell, a primary tumor and optional
//! nodal lesions. CT is in HU, PET in SUV, and the GTV mask is the set of voxel
//! centres inside the tumor ellipsoid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Modality, Volume3D};
use crate::error::{Error, Result};

pub const HU_AIR: f64 = -1000.0;
pub const HU_SOFT_TISSUE: f64 = 40.0;
pub const HU_BRAIN: f64 = 30.0;
pub const HU_BONE: f64 = 700.0;
pub const SUV_BODY: f64 = 1.0;
pub const SUV_BONE: f64 = 0.5;

/// Reference male and female brain volumes in cm³.
pub const BRAIN_VOLUME_MALE_CM3: f64 = 1260.0;
pub const BRAIN_VOLUME_FEMALE_CM3: f64 = 1130.0;

const BRAIN_SHAPE: [f64; 3] = [65.0, 80.0, 55.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub radii_mm: [f64; 3],
}

impl Ellipsoid {
    /// Squared normalised radius of `p`; `<= 1` means inside.
    #[inline]
    pub fn rho2(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| {
                let d = (p[i] - self.center_mm[i]) / self.radii_mm[i];
                d * d
            })
            .sum()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.rho2(p) <= 1.0
    }

    pub fn volume_mm3(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.radii_mm.iter().product::<f64>()
    }

    pub fn grown(&self, by_mm: f64) -> Ellipsoid {
        Ellipsoid {
            center_mm: self.center_mm,
            radii_mm: self.radii_mm.map(|r| r + by_mm),
        }
    }

    fn is_degenerate(&self) -> bool {
        self.radii_mm.iter().any(|&r| !(r.is_finite() && r > 0.0))
    }

    fn fits_inside(&self, extent_mm: [f64; 3]) -> bool {
        (0..3).all(|i| {
            self.center_mm[i] - self.radii_mm[i] >= 0.0
                && self.center_mm[i] + self.radii_mm[i] <= extent_mm[i]
        })
    }
}

/// A hot lesion: uptake falls from `peak_suv` at the centre to 60% at the rim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub shape: Ellipsoid,
    pub peak_suv: f64,
    pub hu_offset: f64,
}

impl Lesion {
    #[inline]
    fn suv_at(&self, rho2: f64) -> f64 {
        self.peak_suv * (1.0 - 0.4 * rho2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub ct_hu: f64,
    pub pet_suv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub body: Ellipsoid,
    pub brain: Ellipsoid,
    pub brain_peak_suv: f64,
    pub skull_thickness_mm: f64,
    pub tumor: Lesion,
    pub nodes: Vec<Lesion>,
    pub noise: NoiseSpec,
    /// Largest allowed fraction of tumor voxels lying inside the brain.
    pub max_overlap_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TStage {
    T1,
    T2,
    T3,
    T4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NStage {
    N0,
    N1,
    N2a,
    N2b,
    N2c,
    N3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hpv {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
    Unknown,
}

impl TStage {
    pub const ALL: [TStage; 4] = [TStage::T1, TStage::T2, TStage::T3, TStage::T4];
    pub fn label(self) -> &'static str {
        ["T1", "T2", "T3", "T4"][self as usize]
    }
}

impl NStage {
    pub const ALL: [NStage; 6] = [NStage::N0, NStage::N1, NStage::N2a, NStage::N2b, NStage::N2c, NStage::N3];
    pub fn label(self) -> &'static str {
        ["N0", "N1", "N2a", "N2b", "N2c", "N3"][self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub gender: Gender,
    pub t_stage: TStage,
    pub n_stage: NStage,
    pub hpv: Hpv,
}

fn pick<T: Copy>(rng: &mut impl Rng, items: &[(T, u32)]) -> T {
    let total: u32 = items.iter().map(|(_, w)| w).sum();
    let mut r = rng.gen_range(0..total);
    for &(item, w) in items {
        if r < w {
            return item;
        }
        r -= w;
    }
    items[items.len() - 1].0
}

impl PatientMeta {
    /// Draws metadata with cohort proportions resembling an oropharyngeal cancer cohort.
    pub fn sample(rng: &mut impl Rng) -> Self {
        PatientMeta {
            gender: pick(rng, &[(Gender::Male, 61), (Gender::Female, 39)]),
            t_stage: pick(
                rng,
                &[(TStage::T1, 14), (TStage::T2, 27), (TStage::T3, 11), (TStage::T4, 48)],
            ),
            n_stage: pick(
                rng,
                &[
                    (NStage::N0, 16),
                    (NStage::N1, 11),
                    (NStage::N2a, 5),
                    (NStage::N2b, 33),
                    (NStage::N2c, 32),
                    (NStage::N3, 3),
                ],
            ),
            hpv: pick(rng, &[(Hpv::Positive, 42), (Hpv::Negative, 42), (Hpv::Unknown, 16)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub ct: Volume3D,
    pub pet: Volume3D,
    pub gtv: Volume3D,
    pub meta: PatientMeta,
}

impl PatientRecord {
    pub fn new(id: impl Into<String>, ct: Volume3D, pet: Volume3D, gtv: Volume3D, meta: PatientMeta) -> Result<Self> {
        ct.require(Modality::Ct)?;
        pet.require(Modality::Pet)?;
        gtv.require(Modality::Mask)?;
        if !(ct.same_grid(&pet) && ct.same_grid(&gtv)) {
            return Err(Error::Shape(format!(
                "patient volumes are not co-registered: ct {:?}, pet {:?}, gtv {:?}",
                ct.dims(),
                pet.dims(),
                gtv.dims()
            )));
        }
        Ok(PatientRecord {
            id: id.into(),
            ct,
            pet,
            gtv,
            meta,
        })
    }
}

fn brain_radii_for_volume(volume_cm3: f64) -> [f64; 3] {
    let base = 4.0 / 3.0 * std::f64::consts::PI * BRAIN_SHAPE.iter().product::<f64>();
    let s = (volume_cm3 * 1000.0 / base).cbrt();
    BRAIN_SHAPE.map(|r| r * s)
}

impl PhantomSpec {
    fn extent(dims: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| (dims[i] - 1) as f64 * spacing[i])
    }

    /// A clean phantom on the given grid: one tumor, no nodes. The grid must
    /// span at least ~250 mm per axis.
    pub fn reference(seed: u64, dims: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        let e = Self::extent(dims, spacing_mm);
        let c = e.map(|x| x / 2.0);
        let brain_center = [c[0], c[1] + 4.0, c[2] + 62.0];
        PhantomSpec {
            seed,
            dims,
            spacing_mm,
            body: Ellipsoid {
                center_mm: c,
                radii_mm: [100.0, 110.0, 2.0 * e[2]],
            },
            brain: Ellipsoid {
                center_mm: brain_center,
                radii_mm: brain_radii_for_volume(BRAIN_VOLUME_MALE_CM3),
            },
            brain_peak_suv: 9.0,
            skull_thickness_mm: 8.0,
            tumor: Lesion {
                shape: Ellipsoid {
                    center_mm: [c[0], c[1] - 6.0, brain_center[2] - 92.0],
                    radii_mm: [22.0, 24.0, 20.0],
                },
                peak_suv: 10.0,
                hu_offset: 30.0,
            },
            nodes: Vec::new(),
            noise: NoiseSpec {
                ct_hu: 10.0,
                pet_suv: 0.3,
            },
            max_overlap_fraction: 0.05,
        }
    }

    /// Reference phantom plus a moderate-uptake bridge joining tumor and brain
    /// through the skull base. Joined at SUV thresholds 3 and 4, separated at 5.
    pub fn bridging(seed: u64, dims: [usize; 3], spacing_mm: [f64; 3]) -> Self {
        let mut spec = Self::reference(seed, dims, spacing_mm);
        let t = spec.tumor.shape.center_mm;
        let top = t[2] + spec.tumor.shape.radii_mm[2];
        let brain_bottom = spec.brain.center_mm[2] - spec.brain.radii_mm[2];
        let mid = 0.5 * (top + brain_bottom);
        let half = 0.5 * (brain_bottom - top) + 14.0;
        spec.nodes.push(Lesion {
            shape: Ellipsoid {
                center_mm: [t[0], t[1], mid],
                radii_mm: [10.0, 10.0, half],
            },
            peak_suv: 4.5,
            hu_offset: 0.0,
        });
        spec.noise.pet_suv = 0.05;
        spec
    }

    /// Per-patient geometry jittered around the reference layout; tumor size
    /// follows the T stage and the number of nodal lesions follows the N stage.
    pub fn for_patient(seed: u64, dims: [usize; 3], spacing_mm: [f64; 3], meta: &PatientMeta) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut spec = Self::reference(seed, dims, spacing_mm);
        let e = Self::extent(dims, spacing_mm);
        let c = e.map(|x| x / 2.0);

        let target = match meta.gender {
            Gender::Male => BRAIN_VOLUME_MALE_CM3,
            Gender::Female => BRAIN_VOLUME_FEMALE_CM3,
        } * rng.gen_range(0.95..1.05);
        spec.brain = Ellipsoid {
            center_mm: [
                c[0] + rng.gen_range(-4.0..4.0),
                c[1] + 4.0 + rng.gen_range(-4.0..4.0),
                c[2] + 62.0 + rng.gen_range(-3.0..3.0),
            ],
            radii_mm: brain_radii_for_volume(target),
        };
        spec.brain_peak_suv = rng.gen_range(8.0..10.0);

        let mean_r = match meta.t_stage {
            TStage::T1 => rng.gen_range(12.0..15.0),
            TStage::T2 => rng.gen_range(15.0..18.0),
            TStage::T3 => rng.gen_range(18.0..21.0),
            TStage::T4 => rng.gen_range(21.0..24.0),
        };
        let radii = [0; 3].map(|_| mean_r * rng.gen_range(0.85..1.15));
        let tumor_center = [
            c[0] + rng.gen_range(-12.0..12.0),
            c[1] - 6.0 + rng.gen_range(-10.0..10.0),
            spec.brain.center_mm[2] - 92.0 + rng.gen_range(-5.0..5.0),
        ];
        spec.tumor = Lesion {
            shape: Ellipsoid {
                center_mm: tumor_center,
                radii_mm: radii,
            },
            peak_suv: rng.gen_range(7.0..14.0),
            hu_offset: rng.gen_range(20.0..40.0),
        };

        let (count, bilateral, large) = match meta.n_stage {
            NStage::N0 => (0, false, false),
            NStage::N1 | NStage::N2a => (1, false, false),
            NStage::N2b => (2, false, false),
            NStage::N2c => (2, true, false),
            NStage::N3 => (1, false, true),
        };
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for i in 0..count {
            let r = if large {
                rng.gen_range(14.0..18.0)
            } else {
                rng.gen_range(7.0..12.0)
            };
            let s = if bilateral && i == 1 { -side } else { side };
            let dx = radii[0] + r + rng.gen_range(6.0..14.0);
            spec.nodes.push(Lesion {
                shape: Ellipsoid {
                    center_mm: [
                        tumor_center[0] + s * dx,
                        tumor_center[1] + rng.gen_range(0.0..15.0),
                        tumor_center[2] + rng.gen_range(-15.0..5.0) - 12.0 * i as f64,
                    ],
                    radii_mm: [r, r * rng.gen_range(0.9..1.1), r * rng.gen_range(0.9..1.3)],
                },
                peak_suv: rng.gen_range(4.0..9.0),
                hu_offset: rng.gen_range(10.0..25.0),
            });
        }
        spec
    }

    fn voxel_mm(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            x as f64 * self.spacing_mm[0],
            y as f64 * self.spacing_mm[1],
            z as f64 * self.spacing_mm[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::PhantomSpec(m));
        if self.dims.iter().any(|&d| d < 2) {
            return bad(format!("dims must be at least 2 per axis, got {:?}", self.dims));
        }
        if self.spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing_mm));
        }
        for (name, e) in [("body", &self.body), ("brain", &self.brain), ("tumor", &self.tumor.shape)] {
            if e.is_degenerate() {
                return bad(format!("{name} ellipsoid has degenerate radii {:?}", e.radii_mm));
            }
        }
        if let Some(i) = self.nodes.iter().position(|n| n.shape.is_degenerate()) {
            return bad(format!("node {i} has degenerate radii"));
        }
        if !(self.brain_peak_suv > 0.0 && self.tumor.peak_suv > 0.0) || self.nodes.iter().any(|n| !(n.peak_suv > 0.0)) {
            return bad("peak SUVs must be positive".into());
        }
        if self.noise.ct_hu < 0.0 || self.noise.pet_suv < 0.0 {
            return bad("noise sigmas must be non-negative".into());
        }
        let extent = Self::extent(self.dims, self.spacing_mm);
        if !self.brain.fits_inside(extent) {
            return bad(format!("brain ellipsoid leaves the {extent:?} mm field of view"));
        }
        if !self.tumor.shape.fits_inside(extent) {
            return bad(format!("tumor ellipsoid leaves the {extent:?} mm field of view"));
        }

        let (mut tumor, mut shared) = (0usize, 0usize);
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let p = self.voxel_mm(x, y, z);
                    if self.tumor.shape.contains(p) {
                        tumor += 1;
                        if self.brain.contains(p) {
                            shared += 1;
                        }
                    }
                }
            }
        }
        if tumor == 0 {
            return bad("tumor covers no voxel centre".into());
        }
        let overlap = shared as f64 / tumor as f64;
        if overlap > self.max_overlap_fraction {
            return bad(format!(
                "tumor/brain overlap {overlap:.3} exceeds {}",
                self.max_overlap_fraction
            ));
        }
        Ok(())
    }
}

/// Renders a phantom. Deterministic in `spec` (including its seed).
pub fn generate_phantom(id: impl Into<String>, spec: &PhantomSpec, meta: PatientMeta) -> Result<PatientRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ct_noise = Normal::new(0.0, spec.noise.ct_hu).map_err(|e| Error::PhantomSpec(e.to_string()))?;
    let pet_noise = Normal::new(0.0, spec.noise.pet_suv).map_err(|e| Error::PhantomSpec(e.to_string()))?;
    let skull = spec.brain.grown(spec.skull_thickness_mm);

    let n = spec.dims.iter().product();
    let (mut ct, mut pet, mut gtv) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for z in 0..spec.dims[2] {
        for y in 0..spec.dims[1] {
            for x in 0..spec.dims[0] {
                let p = spec.voxel_mm(x, y, z);
                let (mut hu, mut suv) = (HU_AIR, 0.0);
                if spec.body.contains(p) {
                    hu = HU_SOFT_TISSUE;
                    suv = SUV_BODY;
                    for lesion in spec.nodes.iter().chain(std::iter::once(&spec.tumor)) {
                        let r2 = lesion.shape.rho2(p);
                        if r2 <= 1.0 {
                            hu = HU_SOFT_TISSUE + lesion.hu_offset;
                            suv = f64::max(suv, lesion.suv_at(r2));
                        }
                    }
                    let brain_r2 = spec.brain.rho2(p);
                    if brain_r2 <= 1.0 {
                        hu = HU_BRAIN;
                        suv = suv.max(spec.brain_peak_suv);
                    } else if skull.contains(p) {
                        hu = HU_BONE;
                        suv = if suv > SUV_BODY { suv } else { SUV_BONE };
                    }
                }
                ct.push(hu + ct_noise.sample(&mut rng));
                pet.push(suv + pet_noise.sample(&mut rng));
                gtv.push(if spec.tumor.shape.contains(p) { 1.0 } else { 0.0 });
            }
        }
    }
    PatientRecord::new(
        id,
        Volume3D::new(spec.dims, spec.spacing_mm, Modality::Ct, ct)?,
        Volume3D::new(spec.dims, spec.spacing_mm, Modality::Pet, pet)?,
        Volume3D::new(spec.dims, spec.spacing_mm, Modality::Mask, gtv)?,
        meta,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: [usize; 3] = [64, 64, 64];
    const DESK_MM: [f64; 3] = [4.0, 4.0, 4.0];

    fn meta() -> PatientMeta {
        PatientMeta {
            gender: Gender::Male,
            t_stage: TStage::T3,
            n_stage: NStage::N0,
            hpv: Hpv::Unknown,
        }
    }

    #[test]
    fn degenerate_tumor_is_rejected() {
        let mut spec = PhantomSpec::reference(1, DESK, DESK_MM);
        spec.tumor.shape.radii_mm = [0.0, 0.0, 0.0];
        assert!(matches!(generate_phantom("p", &spec, meta()), Err(Error::PhantomSpec(_))));
    }

    #[test]
    fn tumor_overlapping_brain_is_rejected() {
        let mut spec = PhantomSpec::reference(1, DESK, DESK_MM);
        spec.tumor.shape.center_mm = spec.brain.center_mm;
        assert!(matches!(generate_phantom("p", &spec, meta()), Err(Error::PhantomSpec(m)) if m.contains("overlap")));
    }

    #[test]
    fn tumor_outside_field_of_view_is_rejected() {
        let mut spec = PhantomSpec::reference(1, DESK, DESK_MM);
        spec.tumor.shape.center_mm[0] = 5.0;
        assert!(generate_phantom("p", &spec, meta()).is_err());
    }

    #[test]
    fn gtv_voxel_count_matches_ellipsoid_volume() {
        // finer grid so the discretisation error stays well inside 10%
        let spec = PhantomSpec::reference(2, [128, 128, 128], [2.0; 3]);
        let p = generate_phantom("p", &spec, meta()).unwrap();
        let analytic = spec.tumor.shape.volume_mm3() / 8.0;
        let counted = p.gtv.count_positive() as f64;
        assert!((counted - analytic).abs() / analytic < 0.10, "{counted} vs {analytic}");

        let desk = PhantomSpec::reference(2, DESK, DESK_MM);
        let p = generate_phantom("p", &desk, meta()).unwrap();
        let analytic = desk.tumor.shape.volume_mm3() / 64.0;
        let counted = p.gtv.count_positive() as f64;
        assert!((counted - analytic).abs() / analytic < 0.10, "{counted} vs {analytic}");
    }

    #[test]
    fn same_seed_is_deterministic() {
        let spec = PhantomSpec::for_patient(5, DESK, DESK_MM, &meta());
        let a = generate_phantom("p", &spec, meta()).unwrap();
        let b = generate_phantom("p", &spec, meta()).unwrap();
        assert_eq!(a, b);
        let other = generate_phantom("p", &PhantomSpec { seed: 6, ..spec }, meta()).unwrap();
        assert_ne!(a.pet, other.pet);
    }

    #[test]
    fn intensities_follow_the_anatomy() {
        let spec = PhantomSpec::reference(3, DESK, DESK_MM);
        let p = generate_phantom("p", &spec, meta()).unwrap();
        let at = |c: [f64; 3]| {
            let v = c.map(|x| (x / 4.0).round() as usize);
            (p.ct.get(v[0], v[1], v[2]), p.pet.get(v[0], v[1], v[2]), p.gtv.get(v[0], v[1], v[2]))
        };
        let (hu, suv, g) = at(spec.tumor.shape.center_mm);
        assert!(suv > 8.0 && g == 1.0 && (hu - 70.0).abs() < 50.0);
        let (hu, suv, g) = at(spec.brain.center_mm);
        assert!(suv > 8.0 && g == 0.0 && hu.abs() < 80.0);
        let (hu, suv, _) = at([2.0, 2.0, 2.0]);
        assert!(hu < -900.0 && suv.abs() < 2.0);
    }

    #[test]
    fn sampled_patients_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..30 {
            let m = PatientMeta::sample(&mut rng);
            let spec = PhantomSpec::for_patient(i, DESK, DESK_MM, &m);
            spec.validate().unwrap_or_else(|e| panic!("patient {i} {m:?}: {e}"));
        }
    }
}
