//! Strict NIfTI-1 subset: single-file (`n+1`) and header/image pair (`ni1`),
//! int16 / float32 / float64 payloads, either byte order. Extensions and
//! affines are ignored.

use std::path::Path;

use super::{Result, Volume4D, VolumeError};

pub const NIFTI_HEADER_SIZE: usize = 348;

const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
const MAGIC_PAIR: [u8; 4] = *b"ni1\0";

// Byte offsets into the 348-byte header.
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

impl Endian {
    fn i16(self, b: &[u8]) -> i16 {
        let a = [b[0], b[1]];
        match self {
            Endian::Little => i16::from_le_bytes(a),
            Endian::Big => i16::from_be_bytes(a),
        }
    }

    fn i32(self, b: &[u8]) -> i32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => i32::from_le_bytes(a),
            Endian::Big => i32::from_be_bytes(a),
        }
    }

    fn f32(self, b: &[u8]) -> f32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => f32::from_le_bytes(a),
            Endian::Big => f32::from_be_bytes(a),
        }
    }

    fn f64(self, b: &[u8]) -> f64 {
        let mut a = [0u8; 8];
        a.copy_from_slice(&b[..8]);
        match self {
            Endian::Little => f64::from_le_bytes(a),
            Endian::Big => f64::from_be_bytes(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    Int16,
    Float32,
    Float64,
}

impl NiftiDatatype {
    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            4 => Some(NiftiDatatype::Int16),
            16 => Some(NiftiDatatype::Float32),
            64 => Some(NiftiDatatype::Float64),
            _ => None,
        }
    }

    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
            NiftiDatatype::Float64 => 64,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            NiftiDatatype::Int16 => 2,
            NiftiDatatype::Float32 => 4,
            NiftiDatatype::Float64 => 8,
        }
    }
}

/// The header fields this crate reads, converted to host order.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeaderSubset {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: NiftiDatatype,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    pub endian: Endian,
}

impl NiftiHeaderSubset {
    pub fn is_single_file(&self) -> bool {
        self.magic == MAGIC_SINGLE
    }

    /// Spatial dims and frame count; 3D headers report T = 1.
    pub fn volume_dims(&self) -> [usize; 4] {
        let t = if self.dim[0] >= 4 { self.dim[4] as usize } else { 1 };
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize, t]
    }
}

pub fn parse_nifti_header(buf: &[u8]) -> Result<NiftiHeaderSubset> {
    if buf.len() < NIFTI_HEADER_SIZE {
        return Err(VolumeError::ShortBuffer {
            need: NIFTI_HEADER_SIZE,
            got: buf.len(),
        });
    }
    let endian = if Endian::Little.i32(buf) == NIFTI_HEADER_SIZE as i32 {
        Endian::Little
    } else if Endian::Big.i32(buf) == NIFTI_HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(VolumeError::BadHeaderSize);
    };

    let mut magic = [0u8; 4];
    magic.copy_from_slice(&buf[OFF_MAGIC..OFF_MAGIC + 4]);
    if magic != MAGIC_SINGLE && magic != MAGIC_PAIR {
        return Err(VolumeError::BadMagic(magic));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = endian.i16(&buf[OFF_DIM + 2 * i..]);
    }
    if !(3..=4).contains(&dim[0]) {
        return Err(VolumeError::BadDims(format!("dim[0] = {} (expected 3 or 4)", dim[0])));
    }
    for (i, &d) in dim.iter().enumerate().skip(1).take(dim[0] as usize) {
        if d < 1 {
            return Err(VolumeError::BadDims(format!("dim[{i}] = {d}")));
        }
    }

    let code = endian.i16(&buf[OFF_DATATYPE..]);
    let datatype = NiftiDatatype::from_code(code).ok_or(VolumeError::UnsupportedDatatype(code))?;

    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = endian.f32(&buf[OFF_PIXDIM + 4 * i..]);
    }

    Ok(NiftiHeaderSubset {
        sizeof_hdr: NIFTI_HEADER_SIZE as i32,
        dim,
        datatype,
        bitpix: endian.i16(&buf[OFF_BITPIX..]),
        pixdim,
        vox_offset: endian.f32(&buf[OFF_VOX_OFFSET..]),
        scl_slope: endian.f32(&buf[OFF_SCL_SLOPE..]),
        scl_inter: endian.f32(&buf[OFF_SCL_INTER..]),
        magic,
        endian,
    })
}

fn positive_or_one(v: f32) -> f64 {
    let v = (v as f64).abs();
    if v.is_finite() && v > 0.0 {
        v
    } else {
        1.0
    }
}

pub(super) fn load_nifti(path: &Path) -> Result<Volume4D> {
    let bytes = std::fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    let hdr = parse_nifti_header(&bytes)?;

    let (payload, start) = if hdr.is_single_file() {
        if hdr.vox_offset < 352.0 {
            return Err(VolumeError::BadDims(format!(
                "vox_offset {} < 352 for single-file NIfTI",
                hdr.vox_offset
            )));
        }
        (bytes, hdr.vox_offset as usize)
    } else {
        let img = path.with_extension("img");
        let payload = std::fs::read(&img).map_err(|e| VolumeError::io(&img, e))?;
        (payload, hdr.vox_offset.max(0.0) as usize)
    };

    let dims = hdr.volume_dims();
    let n: usize = dims.iter().product();
    let elem = hdr.datatype.byte_size();
    let body = payload.get(start..).unwrap_or(&[]);
    if body.len() / elem != n {
        return Err(VolumeError::SizeMismatch {
            expected: n,
            got: body.len() / elem,
        });
    }

    let e = hdr.endian;
    let data: Vec<f32> = match hdr.datatype {
        NiftiDatatype::Int16 => {
            let slope = if hdr.scl_slope == 0.0 || !hdr.scl_slope.is_finite() {
                1.0
            } else {
                hdr.scl_slope
            };
            let inter = if hdr.scl_inter.is_finite() { hdr.scl_inter } else { 0.0 };
            body.chunks_exact(2).map(|c| e.i16(c) as f32 * slope + inter).collect()
        }
        NiftiDatatype::Float32 => body.chunks_exact(4).map(|c| e.f32(c)).collect(),
        NiftiDatatype::Float64 => body.chunks_exact(8).map(|c| e.f64(c) as f32).collect(),
    };

    let spacing = [
        positive_or_one(hdr.pixdim[1]),
        positive_or_one(hdr.pixdim[2]),
        positive_or_one(hdr.pixdim[3]),
    ];
    let tr = if hdr.dim[0] >= 4 { positive_or_one(hdr.pixdim[4]) } else { 1.0 };
    Volume4D::new(dims, data, spacing, tr)
}
