//! Volume bundle: `<name>.json` header plus `<name>.raw` payload of
//! little-endian `f32` voxels in x-fastest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Modality, Volume3D};
use crate::error::{Error, Result};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub schema_version: u32,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub modality: String,
    pub dtype: String,
    /// Crop offset in the parent grid; omitted when zero.
    #[serde(default, skip_serializing_if = "is_zero_origin")]
    pub origin_vox: [i64; 3],
}

fn is_zero_origin(o: &[i64; 3]) -> bool {
    *o == [0, 0, 0]
}

/// Returns the `(header, payload)` paths for a bundle stem.
pub fn bundle_paths(stem: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let stem = stem.as_ref().as_os_str().to_owned();
    let mut json = stem.clone();
    json.push(".json");
    let mut raw = stem;
    raw.push(".raw");
    (PathBuf::from(json), PathBuf::from(raw))
}

/// Writes `v` as a bundle. Voxels are narrowed to `f32`.
pub fn write_bundle(v: &Volume3D, stem: impl AsRef<Path>) -> Result<()> {
    let (json_path, raw_path) = bundle_paths(stem);
    let header = BundleHeader {
        schema_version: BUNDLE_SCHEMA_VERSION,
        dims: v.dims(),
        spacing_mm: v.spacing(),
        modality: v.modality().tag().to_string(),
        dtype: DTYPE.to_string(),
        origin_vox: v.origin(),
    };
    let mut payload = Vec::with_capacity(v.len() * 4);
    for &x in v.data() {
        payload.extend_from_slice(&(x as f32).to_le_bytes());
    }
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&header)?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}

pub fn read_bundle(stem: impl AsRef<Path>) -> Result<Volume3D> {
    let (json_path, raw_path) = bundle_paths(stem);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: BundleHeader = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    let bad = |reason: String| Error::Header {
        path: json_path.clone(),
        reason,
    };
    if header.schema_version != BUNDLE_SCHEMA_VERSION {
        return Err(bad(format!("unsupported schema_version {}", header.schema_version)));
    }
    if header.dtype != DTYPE {
        return Err(bad(format!("unsupported dtype {:?}", header.dtype)));
    }
    let modality = Modality::from_tag(&header.modality)?;
    let expected = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(format!("dims {:?} overflow", header.dims)))?;

    let payload = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    if payload.len() != expected * 4 {
        return Err(Error::PayloadLength {
            path: raw_path,
            expected,
            actual: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Volume3D::with_origin(header.dims, header.spacing_mm, modality, header.origin_vox, data)
}
