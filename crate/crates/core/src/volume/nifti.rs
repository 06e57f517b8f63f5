//! Minimal single-file NIfTI-1 reader/writer.
//!
//! Only the fields needed for axis-aligned 3D volumes are interpreted:
//! `sizeof_hdr`, `dim`, `datatype`, `bitpix`, `pixdim`, `vox_offset`,
//! `scl_slope`, `scl_inter`, `qform_code`/`qoffset_*` (origin only) and `magic`.

use std::fs;
use std::path::Path;

use super::{Volume3D, VolumeKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const NIFTI1_HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const NIFTI1_VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const QOFFSET_X: usize = 268;
    pub const MAGIC: usize = 344;
}

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    buf: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        if matches!(self.endian, Endian::Big) {
            b.reverse();
        }
        b
    }

    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }

    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.bytes(at))
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }

    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.bytes(at))
    }
}

/// Read a 3D NIfTI-1 volume. Values are converted to `T` after applying
/// `scl_slope`/`scl_inter` when the slope is non-zero.
pub fn read_nifti<T: Real>(path: impl AsRef<Path>) -> Result<Volume3D<T>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < NIFTI1_HEADER_SIZE {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "file shorter than NIfTI-1 header"),
        ));
    }
    let endian = match (
        i32::from_le_bytes(buf[0..4].try_into().unwrap()),
        i32::from_be_bytes(buf[0..4].try_into().unwrap()),
    ) {
        (348, _) => Endian::Little,
        (_, 348) => Endian::Big,
        (n, _) => return Err(Error::Format(format!("sizeof_hdr is {n}, expected 348"))),
    };
    let r = Reader { buf: &buf, endian };
    debug_assert_eq!(r.i32(offsets::SIZEOF_HDR), 348);

    let magic = &buf[offsets::MAGIC..offsets::MAGIC + 4];
    let single_file = match magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => return Err(Error::Format(format!("bad magic {magic:?}"))),
    };

    let ndim = r.i16(offsets::DIM);
    if ndim != 3 {
        return Err(Error::Dimensionality(ndim));
    }
    let mut dims = [0usize; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        let v = r.i16(offsets::DIM + 2 * (k + 1));
        if v < 1 {
            return Err(Error::Format(format!("dim[{}] = {v} must be >= 1", k + 1)));
        }
        *d = v as usize;
    }
    let datatype = r.i16(offsets::DATATYPE);
    let bytes_per = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let bitpix = r.i16(offsets::BITPIX);
    if bitpix as usize != 8 * bytes_per {
        return Err(Error::Format(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype}"
        )));
    }
    let mut spacing = [T::one(); 3];
    for (k, s) in spacing.iter_mut().enumerate() {
        let v = r.f32(offsets::PIXDIM + 4 * (k + 1)).abs();
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Format(format!("pixdim[{}] = {v} is not a valid spacing", k + 1)));
        }
        *s = T::lit(v as f64);
    }
    let origin = if r.i16(offsets::QFORM_CODE) > 0 {
        [0, 1, 2].map(|k| T::lit(r.f32(offsets::QOFFSET_X + 4 * k) as f64))
    } else {
        [T::zero(); 3]
    };
    let slope = r.f32(offsets::SCL_SLOPE) as f64;
    let inter = r.f32(offsets::SCL_INTER) as f64;
    let vox_offset = r.f32(offsets::VOX_OFFSET);
    if !(vox_offset >= 0.0) {
        return Err(Error::Format(format!("negative vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;

    let n = dims[0] * dims[1] * dims[2];
    let payload_owned;
    let payload: &[u8] = if single_file {
        &buf
    } else {
        let img = path.with_extension("img");
        payload_owned = fs::read(&img).map_err(|e| Error::io(&img, e))?;
        &payload_owned
    };
    let need = vox_offset + n * bytes_per;
    if payload.len() < need {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("payload truncated: need {need} bytes, have {}", payload.len()),
            ),
        ));
    }
    let pr = Reader {
        buf: &payload[vox_offset..need],
        endian,
    };
    let scale = slope != 0.0 && slope.is_finite();
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let at = i * bytes_per;
        let raw = match datatype {
            DT_UINT8 => pr.buf[at] as f64,
            DT_INT16 => pr.i16(at) as f64,
            DT_INT32 => pr.i32(at) as f64,
            DT_FLOAT32 => pr.f32(at) as f64,
            _ => pr.f64(at),
        };
        let v = if scale { raw * slope + inter } else { raw };
        data.push(T::lit(v));
    }
    Volume3D::new(dims, spacing, origin, data, VolumeKind::Intensity)
}

/// Write a volume as single-file little-endian NIfTI-1 with a float64 payload.
pub fn write_nifti<T: Real>(volume: &Volume3D<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dims = volume.dims();
    if dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Format(format!("dims {dims:?} exceed the NIfTI-1 limit")));
    }
    let mut out = vec![0u8; NIFTI1_VOX_OFFSET + 8 * volume.len()];
    let put = |out: &mut Vec<u8>, at: usize, b: &[u8]| out[at..at + b.len()].copy_from_slice(b);

    put(&mut out, offsets::SIZEOF_HDR, &348i32.to_le_bytes());
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        put(&mut out, offsets::DIM + 2 * k, &d.to_le_bytes());
    }
    put(&mut out, offsets::DATATYPE, &DT_FLOAT64.to_le_bytes());
    put(&mut out, offsets::BITPIX, &64i16.to_le_bytes());
    let sp = volume.spacing();
    let pixdim: [f32; 8] = [
        1.0,
        sp[0].as_f64() as f32,
        sp[1].as_f64() as f32,
        sp[2].as_f64() as f32,
        1.0,
        1.0,
        1.0,
        1.0,
    ];
    for (k, p) in pixdim.iter().enumerate() {
        put(&mut out, offsets::PIXDIM + 4 * k, &p.to_le_bytes());
    }
    put(&mut out, offsets::VOX_OFFSET, &(NIFTI1_VOX_OFFSET as f32).to_le_bytes());
    put(&mut out, offsets::SCL_SLOPE, &1.0f32.to_le_bytes());
    put(&mut out, offsets::SCL_INTER, &0.0f32.to_le_bytes());
    // mm
    out[offsets::XYZT_UNITS] = 2;
    put(&mut out, offsets::QFORM_CODE, &1i16.to_le_bytes());
    for (k, o) in volume.origin().iter().enumerate() {
        put(&mut out, offsets::QOFFSET_X + 4 * k, &(o.as_f64() as f32).to_le_bytes());
    }
    put(&mut out, offsets::MAGIC, b"n+1\0");
    for (i, v) in volume.data().iter().enumerate() {
        put(&mut out, NIFTI1_VOX_OFFSET + 8 * i, &v.as_f64().to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
