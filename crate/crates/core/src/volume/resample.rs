use super::{Slice2D, Volume3D, VolumeKind};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMode {
    /// For intensities.
    Trilinear,
    /// For masks and label maps; never invents values.
    Nearest,
}

/// Output extent along one axis and the map from output index to continuous
/// input index. Both grids cover the same physical extent; voxel centers sit
/// half a voxel inside it.
#[derive(Clone, Copy)]
struct AxisMap<T> {
    n_out: usize,
    n_in: usize,
    ratio: T,
}

impl<T: Real> AxisMap<T> {
    fn new(n_in: usize, s_in: T, s_out: T) -> Self {
        let n = (T::from_usize_lossy(n_in) * s_in / s_out).round();
        let n_out = n.to_usize().unwrap_or(1).max(1);
        Self {
            n_out,
            n_in,
            ratio: s_out / s_in,
        }
    }

    #[inline]
    fn source(&self, j: usize) -> T {
        let half = T::lit(0.5);
        let u = (T::from_usize_lossy(j) + half) * self.ratio - half;
        u.max(T::zero()).min(T::from_usize_lossy(self.n_in - 1))
    }

    #[inline]
    fn nearest(&self, j: usize) -> usize {
        // floor(u + 0.5): ties go to the higher index.
        (self.source(j) + T::lit(0.5))
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(self.n_in - 1)
    }

    #[inline]
    fn linear(&self, j: usize) -> (usize, usize, T) {
        let u = self.source(j);
        let i0 = u.floor().to_usize().unwrap_or(0).min(self.n_in - 1);
        let i1 = (i0 + 1).min(self.n_in - 1);
        (i0, i1, u - T::from_usize_lossy(i0))
    }

    fn origin_shift(&self, s_in: T) -> T {
        // Output voxel 0 center relative to input voxel 0 center.
        (self.ratio - T::one()) * s_in * T::lit(0.5)
    }
}

/// Resample onto a grid with `target_spacing`, covering the same physical box.
pub fn resample<T: Real>(volume: &Volume3D<T>, target_spacing: [T; 3], mode: InterpMode) -> Result<Volume3D<T>> {
    if target_spacing.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::Parameter(format!(
            "target spacing must be > 0, got {target_spacing:?}"
        )));
    }
    if mode == InterpMode::Trilinear && volume.kind() == VolumeKind::IntegerLabels {
        return Err(Error::Mode("trilinear interpolation of an integer label map".into()));
    }
    let dims = volume.dims();
    let spacing = volume.spacing();
    if spacing == target_spacing {
        return Ok(volume.clone());
    }
    let maps: [AxisMap<T>; 3] = [0, 1, 2].map(|k| AxisMap::new(dims[k], spacing[k], target_spacing[k]));
    let [mx, my, mz] = maps;
    let out_dims = [mx.n_out, my.n_out, mz.n_out];
    let mut data = Vec::with_capacity(out_dims.iter().product());
    match mode {
        InterpMode::Nearest => {
            let xs: Vec<usize> = (0..mx.n_out).map(|j| mx.nearest(j)).collect();
            for z in 0..mz.n_out {
                let iz = mz.nearest(z);
                for y in 0..my.n_out {
                    let iy = my.nearest(y);
                    data.extend(xs.iter().map(|&ix| volume.get(ix, iy, iz)));
                }
            }
        }
        InterpMode::Trilinear => {
            let xs: Vec<(usize, usize, T)> = (0..mx.n_out).map(|j| mx.linear(j)).collect();
            for z in 0..mz.n_out {
                let (z0, z1, fz) = mz.linear(z);
                for y in 0..my.n_out {
                    let (y0, y1, fy) = my.linear(y);
                    for &(x0, x1, fx) in &xs {
                        let lerp = |a: T, b: T, t: T| a + (b - a) * t;
                        let c00 = lerp(volume.get(x0, y0, z0), volume.get(x1, y0, z0), fx);
                        let c10 = lerp(volume.get(x0, y1, z0), volume.get(x1, y1, z0), fx);
                        let c01 = lerp(volume.get(x0, y0, z1), volume.get(x1, y0, z1), fx);
                        let c11 = lerp(volume.get(x0, y1, z1), volume.get(x1, y1, z1), fx);
                        let c0 = lerp(c00, c10, fy);
                        let c1 = lerp(c01, c11, fy);
                        data.push(lerp(c0, c1, fz));
                    }
                }
            }
        }
    }
    let origin = volume.origin();
    let new_origin = [0, 1, 2].map(|k| origin[k] + maps[k].origin_shift(spacing[k]));
    Volume3D::new(out_dims, target_spacing, new_origin, data, volume.kind())
}

/// Nearest-neighbour 2D resampling of a slice onto a new in-plane spacing.
pub fn resample_slice<T: Real>(slice: &Slice2D<T>, target_spacing: [T; 2]) -> Result<Slice2D<T>> {
    if slice.spacing == target_spacing {
        return Ok(slice.clone());
    }
    let mx = AxisMap::new(slice.width, slice.spacing[0], target_spacing[0]);
    let my = AxisMap::new(slice.height, slice.spacing[1], target_spacing[1]);
    let mut data = Vec::with_capacity(mx.n_out * my.n_out);
    for y in 0..my.n_out {
        let iy = my.nearest(y);
        for x in 0..mx.n_out {
            data.push(slice.get(mx.nearest(x), iy));
        }
    }
    Slice2D::new(mx.n_out, my.n_out, target_spacing, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn labels_10() -> Volume3D {
        // Labels arranged in 2-voxel blocks along x so that a 2x downsample
        // still sees every label.
        let mut data = Vec::new();
        for _z in 0..10 {
            for y in 0..10 {
                for x in 0..10 {
                    data.push(((x / 2 + y / 4) % 4) as f64);
                }
            }
        }
        Volume3D::new([10, 10, 10], [0.5; 3], [0.0; 3], data, VolumeKind::IntegerLabels).unwrap()
    }

    #[test]
    fn constant_volume_stays_constant() {
        let v = Volume3D::filled([7, 5, 3], [0.8, 1.3, 2.5], 7.0, VolumeKind::Intensity).unwrap();
        let r = resample(&v, [1.0, 1.0, 1.0], InterpMode::Trilinear).unwrap();
        assert!(r.data().iter().all(|&x| x == 7.0));
        assert_eq!(r.dims(), [6, 7, 8]);
    }

    #[test]
    fn half_mm_to_one_mm_nearest() {
        let v = labels_10();
        let r = resample(&v, [1.0; 3], InterpMode::Nearest).unwrap();
        assert_eq!(r.dims(), [5, 5, 5]);
        // Index-mapping oracle: output j samples input floor((j+0.5)*2 - 0.5 + 0.5) = 2j+1.
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    assert_eq!(r.get(x, y, z), v.get(2 * x + 1, 2 * y + 1, 2 * z + 1));
                }
            }
        }
        let set = |vol: &Volume3D| vol.data().iter().map(|&x| x as i64).collect::<BTreeSet<_>>();
        assert_eq!(set(&r), set(&v));
        assert_eq!(r.origin(), [0.25; 3]);
    }

    #[test]
    fn identity_spacing_is_identity() {
        let v = labels_10();
        assert_eq!(resample(&v, [0.5; 3], InterpMode::Nearest).unwrap(), v);
        let f = v.clone().with_kind(VolumeKind::Intensity).unwrap();
        assert_eq!(resample(&f, [0.5; 3], InterpMode::Trilinear).unwrap(), f);
    }

    #[test]
    fn trilinear_on_labels_is_rejected() {
        assert!(matches!(
            resample(&labels_10(), [1.0; 3], InterpMode::Trilinear),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn minimum_one_voxel_per_axis() {
        let v = Volume3D::filled([2, 2, 2], [1.0; 3], 1.0, VolumeKind::Intensity).unwrap();
        let r = resample(&v, [10.0; 3], InterpMode::Trilinear).unwrap();
        assert_eq!(r.dims(), [1, 1, 1]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nearest_never_invents_values(
                data in proptest::collection::vec(0u8..5, 60),
                t in 0.3f64..3.0,
            ) {
                let v = Volume3D::new([5, 4, 3], [1.0, 0.7, 1.5], [0.0; 3],
                    data.iter().map(|&d| d as f64).collect(), VolumeKind::IntegerLabels).unwrap();
                let r = resample(&v, [t, t, t], InterpMode::Nearest).unwrap();
                let input: BTreeSet<u8> = data.iter().copied().collect();
                for &x in r.data() {
                    prop_assert!(input.contains(&(x as u8)));
                }
            }

            #[test]
            fn trilinear_is_bounded(
                data in proptest::collection::vec(-100.0f64..100.0, 60),
                t in 0.3f64..3.0,
            ) {
                let v = Volume3D::new([3, 4, 5], [1.0, 0.7, 1.5], [0.0; 3], data, VolumeKind::Intensity).unwrap();
                let (lo, hi) = v.min_max();
                let r = resample(&v, [t, 0.5 * t, 2.0 * t], InterpMode::Trilinear).unwrap();
                for &x in r.data() {
                    prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
                }
            }
        }
    }
}
