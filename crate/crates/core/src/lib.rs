//! Slice-sequence tumor segmentation on co-registered PET/CT volumes.
//!
//! The crate covers the whole per-patient path: synthetic phantoms and the
//! volume bundle format ([`volume`]), brain-anchored ROI extraction and
//! intensity normalisation ([`roi`]), 3-slice sequence construction and fold
//! splits ([`sequence`]), the attention + bidirectional ConvLSTM network with
//! its training loop ([`model`]), per-slice probability reconstruction and
//! fold ensembling ([`reconstruct`], [`contour`]), and slice-wise metrics,
//! threshold sweeps and cohort reports ([`metrics`], [`report`]).

pub mod contour;
pub mod error;
pub mod metrics;
pub mod model;
pub mod reconstruct;
pub mod report;
pub mod roi;
pub mod sequence;
pub mod volume;

pub use error::{Error, Result};
pub use reconstruct::{ProbSequence, ProbVolume};
pub use volume::{Modality, PatientMeta, PatientRecord, Plane, Slice2D, Volume3D};
