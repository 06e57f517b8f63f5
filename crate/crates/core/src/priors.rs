//! Organ exclusion masks, per-slice allow masks, and aorta-based slice
//! filtering from a multi-organ label map.
//!
//! Exclusion masks are used as given: no dilation or erosion is applied.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{resample_slice, Slice2D, Volume3D, VolumeKind};

/// Label id 0 is always background.
pub const BACKGROUND: u32 = 0;

/// Multi-organ segmentation output plus the configuration that says which
/// labels are vascular (never excluded) and which one is the aorta.
#[derive(Debug, Clone)]
pub struct OrganLabelMap<T = f64> {
    volume: Volume3D<T>,
    label_table: BTreeMap<u32, String>,
    vascular_ids: BTreeSet<u32>,
    aorta_id: u32,
}

impl<T: Real> OrganLabelMap<T> {
    pub fn new(
        volume: Volume3D<T>,
        label_table: BTreeMap<u32, String>,
        vascular_ids: BTreeSet<u32>,
        aorta_id: u32,
    ) -> Result<Self> {
        let volume = if volume.kind() == VolumeKind::IntegerLabels {
            volume
        } else {
            volume.with_kind(VolumeKind::IntegerLabels)?
        };
        let present: BTreeSet<u32> = volume.data().iter().map(|v| v.to_u32().unwrap_or(u32::MAX)).collect();
        if let Some(id) = present
            .iter()
            .find(|&&id| id != BACKGROUND && !label_table.contains_key(&id))
        {
            return Err(Error::Config(format!(
                "label {id} present in the volume but missing from the label table"
            )));
        }
        if let Some(id) = vascular_ids.iter().find(|id| !label_table.contains_key(id)) {
            return Err(Error::Config(format!("vascular id {id} is not in the label table")));
        }
        Ok(Self {
            volume,
            label_table,
            vascular_ids,
            aorta_id,
        })
    }

    pub fn volume(&self) -> &Volume3D<T> {
        &self.volume
    }

    pub fn label_table(&self) -> &BTreeMap<u32, String> {
        &self.label_table
    }

    pub fn vascular_ids(&self) -> &BTreeSet<u32> {
        &self.vascular_ids
    }

    pub fn aorta_id(&self) -> u32 {
        self.aorta_id
    }

    #[inline]
    fn label_at(&self, i: usize) -> u32 {
        self.volume.data()[i].to_u32().unwrap_or(u32::MAX)
    }
}

/// Binary allow mask `A` for one slice: 1 where the loss may look.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllowMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl AllowMask {
    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_slice<T: Real>(s: &Slice2D<T>) -> Result<Self> {
        let data = s
            .data
            .iter()
            .map(|&v| {
                if v == T::zero() {
                    Ok(0)
                } else if v == T::one() {
                    Ok(1)
                } else {
                    Err(Error::InvalidVolume(format!("allow mask value {v} is not binary")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            width: s.width,
            height: s.height,
            data,
        })
    }

    pub fn to_slice<T: Real>(&self, spacing: [T; 2]) -> Slice2D<T> {
        Slice2D {
            width: self.width,
            height: self.height,
            spacing,
            data: self
                .data
                .iter()
                .map(|&a| if a == 1 { T::one() } else { T::zero() })
                .collect(),
        }
    }

    pub fn as_real<T: Real>(&self) -> Vec<T> {
        self.data
            .iter()
            .map(|&a| if a == 1 { T::one() } else { T::zero() })
            .collect()
    }

    pub fn count_allowed(&self) -> usize {
        self.data.iter().filter(|&&a| a == 1).count()
    }

    pub fn crop_centered(&self, cx: isize, cy: isize, size_x: usize, size_y: usize) -> Self {
        let s: Slice2D<f64> = self.to_slice([1.0, 1.0]);
        let c = s.crop_centered(cx, cy, size_x, size_y);
        // Outside the source slice nothing is known to be excluded.
        let mut out = Self::from_slice(&c).expect("crop of binary is binary");
        let x0 = cx - (size_x / 2) as isize;
        let y0 = cy - (size_y / 2) as isize;
        for y in 0..size_y {
            for x in 0..size_x {
                let (sx, sy) = (x0 + x as isize, y0 + y as isize);
                if sx < 0 || sy < 0 || sx >= self.width as isize || sy >= self.height as isize {
                    out.data[x + size_x * y] = 1;
                }
            }
        }
        out
    }
}

/// Union of all non-background, non-vascular labels.
pub fn build_exclusion_mask<T: Real>(labels: &OrganLabelMap<T>) -> Volume3D<T> {
    let data = (0..labels.volume.len())
        .map(|i| {
            let id = labels.label_at(i);
            if id != BACKGROUND && !labels.vascular_ids.contains(&id) {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    labels
        .volume
        .with_data(data, VolumeKind::BinaryMask)
        .expect("same grid, binary values")
}

/// Allow mask for axial slice `slice_index`, aligned to the ground-truth
/// slice grid. Ground-truth positive pixels are always allowed, so that
/// registration noise in the exclusion mask cannot remove true supervision.
pub fn allow_mask_for_slice<T: Real>(
    exclusion: &Volume3D<T>,
    slice_index: usize,
    gt: &Slice2D<T>,
) -> Result<AllowMask> {
    if exclusion.kind() != VolumeKind::BinaryMask {
        return Err(Error::InvalidVolume("exclusion mask must be a binary mask".into()));
    }
    let excl = exclusion.extract_slice(slice_index)?;
    let aligned = resample_slice(&excl, gt.spacing)?;
    if !aligned.same_shape(gt) {
        return Err(Error::Alignment(format!(
            "exclusion slice resampled to {}x{} but ground truth is {}x{}",
            aligned.width, aligned.height, gt.width, gt.height
        )));
    }
    let data = aligned
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&e, &g)| if g != T::zero() || e == T::zero() { 1 } else { 0 })
        .collect();
    Ok(AllowMask {
        width: gt.width,
        height: gt.height,
        data,
    })
}

/// Allow mask for inference: plain complement of the exclusion slice, no
/// ground-truth override.
pub fn inference_allow_mask<T: Real>(exclusion: &Volume3D<T>, slice_index: usize) -> Result<AllowMask> {
    let excl = exclusion.extract_slice(slice_index)?;
    Ok(AllowMask {
        width: excl.width,
        height: excl.height,
        data: excl.data.iter().map(|&e| u8::from(e == T::zero())).collect(),
    })
}

/// Ascending axial indices whose aorta voxel count reaches `min_voxels`.
pub fn filter_slices_by_aorta<T: Real>(labels: &OrganLabelMap<T>, min_voxels: usize) -> Result<Vec<usize>> {
    if min_voxels < 1 {
        return Err(Error::Config("min_voxels must be >= 1".into()));
    }
    if !labels.label_table.contains_key(&labels.aorta_id) {
        return Err(Error::Config(format!(
            "aorta id {} is not in the label table",
            labels.aorta_id
        )));
    }
    let [nx, ny, nz] = labels.volume.dims();
    let plane = nx * ny;
    Ok((0..nz)
        .filter(|&z| {
            (z * plane..(z + 1) * plane)
                .filter(|&i| labels.label_at(i) == labels.aorta_id)
                .count()
                >= min_voxels
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const VERTEBRA: u32 = 3;
    const BOWEL: u32 = 4;
    const AORTA: u32 = 1;

    fn table() -> BTreeMap<u32, String> {
        [
            (AORTA, "aorta"),
            (2, "iliac_artery"),
            (VERTEBRA, "vertebra"),
            (BOWEL, "bowel"),
        ]
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect()
    }

    fn map(dims: [usize; 3], data: Vec<f64>) -> OrganLabelMap {
        let v = Volume3D::new(dims, [1.0; 3], [0.0; 3], data, VolumeKind::IntegerLabels).unwrap();
        OrganLabelMap::new(v, table(), [AORTA, 2].into_iter().collect(), AORTA).unwrap()
    }

    #[test]
    fn background_and_aorta_are_never_excluded() {
        assert_eq!(build_exclusion_mask(&map([2, 2, 1], vec![0.0; 4])).count_nonzero(), 0);
        assert_eq!(build_exclusion_mask(&map([2, 2, 1], vec![1.0; 4])).count_nonzero(), 0);
    }

    #[test]
    fn exclusion_set_membership() {
        let m = map([2, 2, 1], vec![VERTEBRA as f64, BOWEL as f64, AORTA as f64, 0.0]);
        assert_eq!(build_exclusion_mask(&m).data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let v = Volume3D::new([1, 1, 1], [1.0; 3], [0.0; 3], vec![9.0], VolumeKind::IntegerLabels).unwrap();
        assert!(OrganLabelMap::new(v, table(), BTreeSet::new(), AORTA).is_err());
    }

    fn excl(data: Vec<f64>, w: usize, h: usize) -> Volume3D {
        Volume3D::new([w, h, 1], [1.0; 3], [0.0; 3], data, VolumeKind::BinaryMask).unwrap()
    }

    #[test]
    fn allow_is_complement() {
        let gt = Slice2D::zeros(2, 2, [1.0, 1.0]);
        let a = allow_mask_for_slice(&excl(vec![0.0; 4], 2, 2), 0, &gt).unwrap();
        assert_eq!(a.data, vec![1; 4]);
        let a = allow_mask_for_slice(&excl(vec![1.0; 4], 2, 2), 0, &gt).unwrap();
        assert_eq!(a.data, vec![0; 4]);
        let checker: Vec<f64> = (0..16).map(|i| ((i % 4 + i / 4) % 2) as f64).collect();
        let gt = Slice2D::zeros(4, 4, [1.0, 1.0]);
        let a = allow_mask_for_slice(&excl(checker.clone(), 4, 4), 0, &gt).unwrap();
        for (e, a) in checker.iter().zip(&a.data) {
            assert_eq!(*e as u8 + a, 1);
        }
    }

    #[test]
    fn gt_positive_pixels_override_exclusion() {
        let mut gt = Slice2D::zeros(2, 1, [1.0, 1.0]);
        gt.set(0, 0, 1.0);
        let a = allow_mask_for_slice(&excl(vec![1.0, 1.0], 2, 1), 0, &gt).unwrap();
        assert_eq!(a.data, vec![1, 0]);
    }

    #[test]
    fn exclusion_resampled_onto_gt_grid() {
        // 4x4 exclusion at 0.5 mm, gt grid 2x2 at 1 mm.
        let data: Vec<f64> = (0..16).map(|i| if i % 4 >= 2 { 1.0 } else { 0.0 }).collect();
        let e = Volume3D::new([4, 4, 1], [0.5, 0.5, 1.0], [0.0; 3], data, VolumeKind::BinaryMask).unwrap();
        let gt = Slice2D::zeros(2, 2, [1.0, 1.0]);
        let a = allow_mask_for_slice(&e, 0, &gt).unwrap();
        assert_eq!(a.data, vec![1, 0, 1, 0]);
        let gt_bad = Slice2D::zeros(3, 2, [1.0, 1.0]);
        assert!(matches!(allow_mask_for_slice(&e, 0, &gt_bad), Err(Error::Alignment(_))));
    }

    fn aorta_in_slices(range: std::ops::Range<usize>, per_slice: usize) -> OrganLabelMap {
        let (w, h, d) = (4, 4, 10);
        let mut data = vec![0.0; w * h * d];
        for z in range {
            for i in 0..per_slice {
                data[z * w * h + i] = AORTA as f64;
            }
        }
        map([w, h, d], data)
    }

    #[test]
    fn aorta_filter_examples() {
        assert_eq!(
            filter_slices_by_aorta(&aorta_in_slices(3..8, 2), 1).unwrap(),
            vec![3, 4, 5, 6, 7]
        );
        assert!(filter_slices_by_aorta(&map([2, 2, 3], vec![0.0; 12]), 1)
            .unwrap()
            .is_empty());
        assert!(filter_slices_by_aorta(&aorta_in_slices(0..10, 9), 10)
            .unwrap()
            .is_empty());
        assert_eq!(
            filter_slices_by_aorta(&aorta_in_slices(0..2, 9), 9).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn aorta_id_must_be_configured() {
        let v = Volume3D::new([1, 1, 1], [1.0; 3], [0.0; 3], vec![0.0], VolumeKind::IntegerLabels).unwrap();
        let m = OrganLabelMap::new(v, table(), BTreeSet::new(), 42).unwrap();
        assert!(matches!(filter_slices_by_aorta(&m, 1), Err(Error::Config(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vascular_voxels_always_allowed(labels in proptest::collection::vec(0u32..5, 27)) {
                let m = map([3, 3, 3], labels.iter().map(|&l| l as f64).collect());
                let e = build_exclusion_mask(&m);
                for z in 0..3 {
                    let gt = Slice2D::zeros(3, 3, [1.0, 1.0]);
                    let a = allow_mask_for_slice(&e, z, &gt).unwrap();
                    for i in 0..9 {
                        let l = labels[z * 9 + i];
                        let ev = e.data()[z * 9 + i];
                        prop_assert_eq!((ev as u8) & a.data[i], 0);
                        if l == AORTA || l == 2 {
                            prop_assert_eq!(a.data[i], 1);
                        }
                    }
                }
            }

            #[test]
            fn filter_is_monotone_in_threshold(counts in proptest::collection::vec(0usize..17, 10), t in 1usize..16) {
                let mut data = vec![0.0; 16 * 10];
                for (z, &c) in counts.iter().enumerate() {
                    for i in 0..c { data[z * 16 + i] = AORTA as f64; }
                }
                let m = map([4, 4, 10], data);
                let lo = filter_slices_by_aorta(&m, t).unwrap();
                let hi = filter_slices_by_aorta(&m, t + 1).unwrap();
                prop_assert!(hi.iter().all(|z| lo.contains(z)));
            }
        }
    }
}
