//! Native raw format: `<name>.vol` holds little-endian f32 scalars in volume
//! order, `<name>.vol.json` holds `{"dims":[H,W,D,T],"spacing_mm":[sx,sy,sz],"tr_s":tr}`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, Volume4D, VolumeError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDescriptor {
    pub dims: [usize; 4],
    pub spacing_mm: [f64; 3],
    pub tr_s: f64,
}

pub fn sidecar_path(vol_path: &Path) -> PathBuf {
    let mut s: OsString = vol_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_raw_volume(vol: &Volume4D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::with_capacity(vol.data().len() * 4);
    for v in vol.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, payload).map_err(|e| VolumeError::io(path, e))?;

    let desc = RawDescriptor {
        dims: vol.dims(),
        spacing_mm: vol.spacing_mm,
        tr_s: vol.tr_seconds,
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string(&desc).expect("descriptor serializes");
    std::fs::write(&side, json).map_err(|e| VolumeError::io(&side, e))
}

pub(super) fn load_raw(path: &Path) -> Result<Volume4D> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| VolumeError::io(&side, e))?;
    let desc: RawDescriptor =
        serde_json::from_str(&text).map_err(|e| VolumeError::BadDescriptor(format!("{}: {e}", side.display())))?;

    let bytes = std::fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    let expected: usize = desc.dims.iter().product();
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            got: bytes.len() / 4,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume4D::new(desc.dims, data, desc.spacing_mm, desc.tr_s)
}
