//! Voxel grids, axial slices, and the operations that move data between
//! files, grids, and training slices.
//!
//! Voxels are stored x-fastest (`x + nx * (y + ny * z)`), the same order as a
//! NIfTI payload. Orientation is assumed axis-aligned: qform/sform rotations
//! are ignored and only spacing and an origin offset are carried.

mod nifti;
mod raw;
mod resample;

pub use nifti::{read_nifti, write_nifti, NIFTI1_HEADER_SIZE, NIFTI1_VOX_OFFSET};
pub use raw::{read_raw, write_raw};
pub use resample::{resample, resample_slice, InterpMode};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// What the voxel values mean, which constrains what they may be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VolumeKind {
    Intensity,
    BinaryMask,
    IntegerLabels,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Intensity => "intensity",
            VolumeKind::BinaryMask => "binary-mask",
            VolumeKind::IntegerLabels => "integer-labels",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "intensity" => Some(VolumeKind::Intensity),
            "binary-mask" => Some(VolumeKind::BinaryMask),
            "integer-labels" => Some(VolumeKind::IntegerLabels),
            _ => None,
        }
    }

    fn check_value<T: Real>(self, v: T) -> bool {
        match self {
            VolumeKind::Intensity => v.is_finite(),
            VolumeKind::BinaryMask => v == T::zero() || v == T::one(),
            VolumeKind::IntegerLabels => v >= T::zero() && v.is_finite() && v.fract() == T::zero(),
        }
    }
}

/// Immutable scalar voxel grid with physical spacing (mm) and origin (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D<T = f64> {
    dims: [usize; 3],
    spacing: [T; 3],
    origin: [T; 3],
    data: Vec<T>,
    kind: VolumeKind,
}

impl<T: Real> Volume3D<T> {
    pub fn new(dims: [usize; 3], spacing: [T; 3], origin: [T; 3], data: Vec<T>, kind: VolumeKind) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidVolume("origin must be finite".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| !kind.check_value(v)) {
            return Err(Error::InvalidVolume(format!(
                "voxel {i} holds {} which is not a valid {} value",
                data[i],
                kind.as_str()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
            kind,
        })
    }

    /// Volume filled with a single value.
    pub fn filled(dims: [usize; 3], spacing: [T; 3], value: T, kind: VolumeKind) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        Self::new(dims, spacing, [T::zero(); 3], vec![value; n], kind)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [T; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [T; 3] {
        self.origin
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.index(x, y, z)]
    }

    /// Physical position (mm) of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [T; 3] {
        [
            self.origin[0] + T::from_usize_lossy(x) * self.spacing[0],
            self.origin[1] + T::from_usize_lossy(y) * self.spacing[1],
            self.origin[2] + T::from_usize_lossy(z) * self.spacing[2],
        ]
    }

    /// Continuous voxel index of a physical point.
    pub fn to_index_space(&self, p: [T; 3]) -> [T; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    pub fn voxel_volume(&self) -> T {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Same grid, new values and kind.
    pub fn with_data(&self, data: Vec<T>, kind: VolumeKind) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, data, kind)
    }

    /// Re-tag the volume, validating the values against the new kind.
    pub fn with_kind(self, kind: VolumeKind) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, self.data, kind)
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Number of voxels with a non-zero value.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != T::zero()).count()
    }

    pub fn cast<U: Real>(&self) -> Volume3D<U> {
        Volume3D {
            dims: self.dims,
            spacing: self.spacing.map(|s| U::lit(s.as_f64())),
            origin: self.origin.map(|o| U::lit(o.as_f64())),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            kind: self.kind,
        }
    }

    /// Zero-padded copy with `pad` extra voxels on every side; origin shifts so
    /// physical voxel positions are unchanged.
    pub fn padded(&self, pad: usize) -> Self {
        let [nx, ny, nz] = self.dims;
        let (px, py, pz) = (nx + 2 * pad, ny + 2 * pad, nz + 2 * pad);
        let mut data = vec![T::zero(); px * py * pz];
        for z in 0..nz {
            for y in 0..ny {
                let src = self.index(0, y, z);
                let dst = pad + px * (y + pad + py * (z + pad));
                data[dst..dst + nx].copy_from_slice(&self.data[src..src + nx]);
            }
        }
        let p = T::from_usize_lossy(pad);
        Self {
            dims: [px, py, pz],
            spacing: self.spacing,
            origin: [
                self.origin[0] - p * self.spacing[0],
                self.origin[1] - p * self.spacing[1],
                self.origin[2] - p * self.spacing[2],
            ],
            data,
            kind: self.kind,
        }
    }

    /// Axial (constant-z) plane at `index`.
    pub fn extract_slice(&self, index: usize) -> Result<Slice2D<T>> {
        let [nx, ny, nz] = self.dims;
        if index >= nz {
            return Err(Error::Bounds { index, len: nz });
        }
        let start = nx * ny * index;
        Ok(Slice2D {
            width: nx,
            height: ny,
            spacing: [self.spacing[0], self.spacing[1]],
            data: self.data[start..start + nx * ny].to_vec(),
        })
    }

    /// Copy of the volume with axial plane `index` replaced by `slice`.
    pub fn replace_slice(&self, index: usize, slice: &Slice2D<T>) -> Result<Self> {
        let [nx, ny, nz] = self.dims;
        if index >= nz {
            return Err(Error::Bounds { index, len: nz });
        }
        if slice.width != nx || slice.height != ny {
            return Err(Error::Shape(format!(
                "slice is {}x{}, volume plane is {nx}x{ny}",
                slice.width, slice.height
            )));
        }
        let mut data = self.data.clone();
        let start = nx * ny * index;
        data[start..start + nx * ny].copy_from_slice(&slice.data);
        Self::new(self.dims, self.spacing, self.origin, data, self.kind)
    }

    /// Iterator over all axial slices in ascending z.
    pub fn slices(&self) -> impl Iterator<Item = Slice2D<T>> + '_ {
        (0..self.dims[2]).map(move |z| self.extract_slice(z).expect("z in range"))
    }
}

/// A 2D raster, row-major with x fastest: `data[x + width * y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D<T = f64> {
    pub width: usize,
    pub height: usize,
    /// In-plane spacing (mm) along x and y.
    pub spacing: [T; 2],
    pub data: Vec<T>,
}

impl<T: Real> Slice2D<T> {
    pub fn new(width: usize, height: usize, spacing: [T; 2], data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("slice dimensions must be >= 1".into()));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "slice data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            spacing,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, spacing: [T; 2]) -> Self {
        Self {
            width,
            height,
            spacing,
            data: vec![T::zero(); width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x + self.width * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[x + self.width * y] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Slice2D<T>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Centered `size x size` window, zero-filled where it leaves the slice.
    pub fn crop_centered(&self, cx: isize, cy: isize, size_x: usize, size_y: usize) -> Self {
        let mut out = Self::zeros(size_x, size_y, self.spacing);
        let x0 = cx - (size_x / 2) as isize;
        let y0 = cy - (size_y / 2) as isize;
        for y in 0..size_y {
            let sy = y0 + y as isize;
            if sy < 0 || sy >= self.height as isize {
                continue;
            }
            for x in 0..size_x {
                let sx = x0 + x as isize;
                if sx < 0 || sx >= self.width as isize {
                    continue;
                }
                out.data[x + size_x * y] = self.data[sx as usize + self.width * sy as usize];
            }
        }
        out
    }

    /// 8-bit export raster of a `[0, 1]` slice: `round(255 * v)`.
    pub fn to_u8_raster(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| {
                let s = (v.max(T::zero()).min(T::one()) * T::lit(255.0)).round();
                s.to_u8().unwrap_or(0)
            })
            .collect()
    }
}

/// Map HU values through a soft-tissue window to `[0, 1]`.
pub fn window_normalize<T: Real>(volume: &Volume3D<T>, lo_hu: T, hi_hu: T) -> Result<Volume3D<T>> {
    if !(lo_hu < hi_hu) {
        return Err(Error::Parameter(format!(
            "window requires lo < hi, got ({lo_hu}, {hi_hu})"
        )));
    }
    let width = hi_hu - lo_hu;
    let data = volume
        .data()
        .iter()
        .map(|&v| ((v - lo_hu) / width).max(T::zero()).min(T::one()))
        .collect();
    volume.with_data(data, VolumeKind::Intensity)
}

/// Inverse of per-slice extraction: stack equally shaped slices into a volume.
pub fn volume_from_slices<T: Real>(
    slices: &[Slice2D<T>],
    spacing_z: T,
    origin: [T; 3],
    kind: VolumeKind,
) -> Result<Volume3D<T>> {
    let first = slices
        .first()
        .ok_or_else(|| Error::Shape("cannot stack zero slices".into()))?;
    let mut data = Vec::with_capacity(first.len() * slices.len());
    for s in slices {
        if !s.same_shape(first) {
            return Err(Error::Shape(format!(
                "slice shapes differ: {}x{} vs {}x{}",
                s.width, s.height, first.width, first.height
            )));
        }
        data.extend_from_slice(&s.data);
    }
    Volume3D::new(
        [first.width, first.height, slices.len()],
        [first.spacing[0], first.spacing[1], spacing_z],
        origin,
        data,
        kind,
    )
}
