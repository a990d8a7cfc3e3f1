//! Dense 4D volumes and their on-disk formats.
//!
//! Voxel data is stored x-fastest over space with time outermost, the same
//! order NIfTI uses, so a NIfTI payload maps onto [`Volume4D::data`] without
//! reordering.

mod nifti;
mod preprocess;
mod raw;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use nifti::{parse_nifti_header, Endian, NiftiDatatype, NiftiHeaderSubset, NIFTI_HEADER_SIZE};
pub use preprocess::{crop_or_pad, resample_spatial_trilinear, resample_time_linear, zscore_global};
pub use raw::{sidecar_path, write_raw_volume, RawDescriptor};

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("buffer too short: need {need} bytes, got {got}")]
    ShortBuffer { need: usize, got: usize },
    #[error("bad sizeof_hdr: neither byte order decodes to 348")]
    BadHeaderSize,
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("bad dims: {0}")]
    BadDims(String),
    #[error("bad descriptor: {0}")]
    BadDescriptor(String),
    #[error("payload holds {got} scalars, dims require {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFiniteData(usize),
    #[error("volume is constant; global z-scoring is undefined")]
    DegenerateVolume,
    #[error("time resampling needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("unknown volume format for {0}")]
    UnknownFormat(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VolumeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        VolumeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = VolumeError> = std::result::Result<T, E>;

/// A dense H×W×D×T scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    dims: [usize; 4],
    data: Vec<f32>,
    pub spacing_mm: [f64; 3],
    pub tr_seconds: f64,
}

impl Volume4D {
    /// Builds a volume, checking the payload length and finiteness.
    pub fn new(dims: [usize; 4], data: Vec<f32>, spacing_mm: [f64; 3], tr_seconds: f64) -> Result<Self> {
        if dims.contains(&0) {
            return Err(VolumeError::BadDims(format!("{dims:?} has a zero extent")));
        }
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(VolumeError::SizeMismatch {
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFiniteData(i));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) || !(tr_seconds.is_finite() && tr_seconds > 0.0) {
            return Err(VolumeError::BadDims(format!(
                "spacing {spacing_mm:?} / tr {tr_seconds} must be positive"
            )));
        }
        Ok(Volume4D {
            dims,
            data,
            spacing_mm,
            tr_seconds,
        })
    }

    /// Unit spacing, TR of one second.
    pub fn from_data(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        Self::new(dims, data, [1.0; 3], 1.0)
    }

    pub fn filled(dims: [usize; 4], value: f32) -> Self {
        Self::from_data(dims, vec![value; dims.iter().product()]).expect("finite fill value")
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let [h, w, d, t] = dims;
        let mut data = Vec::with_capacity(h * w * d * t);
        for ti in 0..t {
            for z in 0..d {
                for y in 0..w {
                    for x in 0..h {
                        data.push(f(x, y, z, ti));
                    }
                }
            }
        }
        Self::from_data(dims, data)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn spatial_dims(&self) -> [usize; 3] {
        [self.dims[0], self.dims[1], self.dims[2]]
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn frame_len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize, t: usize) -> usize {
        let [h, w, d, _] = self.dims;
        ((t * d + z) * w + y) * h + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize, t: usize) -> f32 {
        self.data[self.index(x, y, z, t)]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Replaces the payload, keeping dims and metadata.
    pub(crate) fn with_data(&self, dims: [usize; 4], data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Volume4D {
            dims,
            data,
            spacing_mm: self.spacing_mm,
            tr_seconds: self.tr_seconds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti,
    Raw,
}

impl VolumeFormat {
    /// `.nii` / `.hdr` are NIfTI, `.vol` is raw.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "nii" | "hdr" => Some(VolumeFormat::Nifti),
            "vol" => Some(VolumeFormat::Raw),
            _ => None,
        }
    }
}

pub fn load_volume(path: impl AsRef<Path>, format: VolumeFormat) -> Result<Volume4D> {
    let path = path.as_ref();
    match format {
        VolumeFormat::Nifti => nifti::load_nifti(path),
        VolumeFormat::Raw => raw::load_raw(path),
    }
}

/// [`load_volume`] with the format taken from the file extension.
pub fn load_volume_auto(path: impl AsRef<Path>) -> Result<Volume4D> {
    let path = path.as_ref();
    let format = VolumeFormat::from_path(path).ok_or_else(|| VolumeError::UnknownFormat(path.to_path_buf()))?;
    load_volume(path, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_x_fastest_time_outermost() {
        let v = Volume4D::from_fn([3, 2, 2, 2], |x, y, z, t| (x + 10 * y + 100 * z + 1000 * t) as f32).unwrap();
        assert_eq!(v.data()[0..4], [0.0, 1.0, 2.0, 10.0]);
        assert_eq!(v.get(2, 1, 1, 1), 1112.0);
        assert_eq!(v.frame(1)[0], 1000.0);
    }

    #[test]
    fn rejects_bad_payloads() {
        assert!(matches!(
            Volume4D::from_data([4, 4, 4, 2], vec![0.0; 100]),
            Err(VolumeError::SizeMismatch { expected: 128, got: 100 })
        ));
        assert!(matches!(
            Volume4D::from_data([1, 1, 1, 2], vec![0.0, f32::NAN]),
            Err(VolumeError::NonFiniteData(1))
        ));
    }
}
