//! Synthetic CTA-like phantoms: an aorta with a Gaussian aneurysmal bulge,
//! thrombus between lumen and outer wall, and thrombus-like distractor
//! organs, all with known geometry.
//!
//! The outer wall is an axial-disc sweep: at height `z` the cross-section is
//! the disc of radius `r(z) = r_l + (r_b − r_l)·exp(−(z − z₀)² / 2σ_z²)`
//! centred on the axis point `c(z)`. Ground truth is 1 exactly where a voxel
//! centre falls inside that disc and `z` lies in the aorta's axial extent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::priors::OrganLabelMap;
use crate::volume::{Volume3D, VolumeKind};

pub const LABEL_AORTA: u32 = 1;
pub const LABEL_ILIAC: u32 = 2;
pub const LABEL_VERTEBRA: u32 = 3;
pub const LABEL_BOWEL: u32 = 4;
pub const LABEL_KIDNEY: u32 = 5;

/// Label table used by generated phantoms.
pub fn default_label_table() -> BTreeMap<u32, String> {
    [
        (LABEL_AORTA, "aorta"),
        (LABEL_ILIAC, "iliac_artery"),
        (LABEL_VERTEBRA, "vertebra"),
        (LABEL_BOWEL, "bowel"),
        (LABEL_KIDNEY, "kidney"),
    ]
    .into_iter()
    .map(|(id, name)| (id, name.to_string()))
    .collect()
}

pub fn default_vascular_ids() -> BTreeSet<u32> {
    [LABEL_AORTA, LABEL_ILIAC].into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisShape {
    Straight,
    /// `x(z) = x₀ + amplitude·sin(2π z / period)`.
    Sinusoid {
        amplitude_mm: f64,
        period_mm: f64,
    },
}

/// Axis-aligned ellipsoidal organ.
#[derive(Debug, Clone, PartialEq)]
pub struct Distractor {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub label: u32,
    pub intensity_hu: f64,
}

impl Distractor {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|k| ((p[k] - self.center[k]) / self.semi_axes[k]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Organ hugging the aneurysm: an angular sector of a shell that follows
/// the outer wall at a fixed gap, over an axial range. Where the gap is
/// below a voxel, organ and thrombus touch with no visible boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct WallShell {
    /// Sector centre direction in the axial plane (radians from +x).
    pub angle: f64,
    pub half_width: f64,
    pub gap_mm: f64,
    pub thickness_mm: f64,
    pub z_range: [f64; 2],
    pub label: u32,
    pub intensity_hu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueIntensities {
    pub lumen: f64,
    pub thrombus: f64,
    pub background: f64,
    pub noise_sigma: f64,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self {
            lumen: 300.0,
            thrombus: 60.0,
            background: -50.0,
            noise_sigma: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Axis position (mm) in the axial plane at `z = 0`.
    pub axis_xy: [f64; 2],
    pub axis: AxisShape,
    /// Axial extent of the aorta (mm), inclusive of boundary voxels.
    pub z_extent: [f64; 2],
    pub lumen_radius: f64,
    /// Lumen centre offset from the wall axis, as a fraction of the local
    /// thrombus thickness `r(z) − r_l` along x and y. Nonzero values give
    /// an eccentric, crescent-shaped thrombus; the outer wall is unaffected.
    pub lumen_offset: [f64; 2],
    pub bulge_center_z: f64,
    pub bulge_radius: f64,
    pub bulge_sigma_z: f64,
    pub distractors: Vec<Distractor>,
    pub wall_shells: Vec<WallShell>,
    pub intensities: TissueIntensities,
    pub seed: u64,
}

impl Default for PhantomSpec {
    /// 96³ at 1 mm, straight axis, r_l = 10 mm, r_b = 25 mm, with a
    /// vertebra, a bowel loop and a kidney hugging the aneurysm.
    fn default() -> Self {
        Self {
            dims: [96, 96, 96],
            spacing: [1.0; 3],
            axis_xy: [47.5, 47.5],
            axis: AxisShape::Straight,
            z_extent: [3.5, 91.5],
            lumen_radius: 10.0,
            lumen_offset: [0.0, 0.0],
            bulge_center_z: 48.0,
            bulge_radius: 25.0,
            bulge_sigma_z: 12.0,
            distractors: vec![
                Distractor {
                    center: [47.5, 82.5, 47.5],
                    semi_axes: [12.0, 8.0, 40.0],
                    label: LABEL_VERTEBRA,
                    intensity_hu: 70.0,
                },
                Distractor {
                    center: [14.5, 35.0, 48.0],
                    semi_axes: [6.0, 6.0, 10.0],
                    label: LABEL_BOWEL,
                    intensity_hu: 50.0,
                },
                Distractor {
                    center: [81.5, 40.0, 40.0],
                    semi_axes: [7.0, 10.0, 15.0],
                    label: LABEL_KIDNEY,
                    intensity_hu: 45.0,
                },
            ],
            wall_shells: Vec::new(),
            intensities: TissueIntensities::default(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn outer_radius(&self, z: f64) -> f64 {
        let dz = z - self.bulge_center_z;
        self.lumen_radius
            + (self.bulge_radius - self.lumen_radius) * (-dz * dz / (2.0 * self.bulge_sigma_z.powi(2))).exp()
    }

    fn outer_radius_slope(&self, z: f64) -> f64 {
        let dz = z - self.bulge_center_z;
        let s2 = self.bulge_sigma_z.powi(2);
        -(self.bulge_radius - self.lumen_radius) * dz / s2 * (-dz * dz / (2.0 * s2)).exp()
    }

    pub fn axis_point(&self, z: f64) -> [f64; 2] {
        match self.axis {
            AxisShape::Straight => self.axis_xy,
            AxisShape::Sinusoid {
                amplitude_mm,
                period_mm,
            } => [
                self.axis_xy[0] + amplitude_mm * (std::f64::consts::TAU * z / period_mm).sin(),
                self.axis_xy[1],
            ],
        }
    }

    fn axis_slope(&self, z: f64) -> [f64; 2] {
        match self.axis {
            AxisShape::Straight => [0.0, 0.0],
            AxisShape::Sinusoid {
                amplitude_mm,
                period_mm,
            } => {
                let w = std::f64::consts::TAU / period_mm;
                [amplitude_mm * w * (w * z).cos(), 0.0]
            }
        }
    }

    fn axis_amplitude(&self) -> f64 {
        match self.axis {
            AxisShape::Straight => 0.0,
            AxisShape::Sinusoid { amplitude_mm, .. } => amplitude_mm.abs(),
        }
    }

    /// Whether a physical point lies inside the outer wall.
    pub fn inside_outer_wall(&self, p: [f64; 3]) -> bool {
        if p[2] < self.z_extent[0] || p[2] > self.z_extent[1] {
            return false;
        }
        let c = self.axis_point(p[2]);
        let r = self.outer_radius(p[2]);
        (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r * r
    }

    fn inside_lumen(&self, p: [f64; 3]) -> bool {
        if p[2] < self.z_extent[0] || p[2] > self.z_extent[1] {
            return false;
        }
        let c = self.axis_point(p[2]);
        let t = self.outer_radius(p[2]) - self.lumen_radius;
        let c = [c[0] + self.lumen_offset[0] * t, c[1] + self.lumen_offset[1] * t];
        (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= self.lumen_radius.powi(2)
    }

    /// Whether `p` lies inside wall shell `w`. The inner boundary is
    /// strictly outside the outer wall, so shells never overlap the wall.
    pub fn shell_contains(&self, w: &WallShell, p: [f64; 3]) -> bool {
        if p[2] < w.z_range[0] || p[2] > w.z_range[1] {
            return false;
        }
        let c = self.axis_point(p[2]);
        let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
        let rho = dx.hypot(dy);
        let r = self.outer_radius(p[2]) + w.gap_mm;
        if !(rho > r && rho <= r + w.thickness_mm) {
            return false;
        }
        let d = (dy.atan2(dx) - w.angle).rem_euclid(std::f64::consts::TAU);
        d.min(std::f64::consts::TAU - d) <= w.half_width
    }

    fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [
            x as f64 * self.spacing[0],
            y as f64 * self.spacing[1],
            z as f64 * self.spacing[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Specification(m));
        if self.dims.iter().any(|&d| d < 3) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("dims {:?} / spacing {:?} invalid", self.dims, self.spacing));
        }
        if !(self.lumen_radius > 0.0) {
            return bad(format!("lumen radius {} must be > 0", self.lumen_radius));
        }
        if self.bulge_radius < self.lumen_radius {
            return bad(format!(
                "bulge radius {} smaller than lumen radius {}",
                self.bulge_radius, self.lumen_radius
            ));
        }
        if !(self.lumen_offset[0].hypot(self.lumen_offset[1]) <= 1.0) {
            return bad(format!(
                "lumen offset {:?} would push the lumen through the wall",
                self.lumen_offset
            ));
        }
        if !(self.bulge_sigma_z > 0.0) {
            return bad("bulge sigma must be > 0".into());
        }
        let ext = [0, 1, 2].map(|k| (self.dims[k] - 1) as f64 * self.spacing[k]);
        let margin = [0, 1, 2].map(|k| self.spacing[k]);
        if !(self.z_extent[0] < self.z_extent[1])
            || self.z_extent[0] < margin[2]
            || self.z_extent[1] > ext[2] - margin[2]
        {
            return bad(format!(
                "axial extent {:?} must lie inside the volume with a one-voxel margin",
                self.z_extent
            ));
        }
        let r_max = self.max_outer_radius();
        let amp = self.axis_amplitude();
        for k in 0..2 {
            let lo = self.axis_xy[k] - r_max - if k == 0 { amp } else { 0.0 };
            let hi = self.axis_xy[k] + r_max + if k == 0 { amp } else { 0.0 };
            if lo < margin[k] || hi > ext[k] - margin[k] {
                return bad(format!("outer wall leaves the volume along axis {k}"));
            }
        }
        let table = default_label_table();
        for (i, d) in self.distractors.iter().enumerate() {
            if d.semi_axes.iter().any(|&a| !(a > 0.0)) {
                return bad(format!("distractor {i} has non-positive semi-axes"));
            }
            if !table.contains_key(&d.label) || default_vascular_ids().contains(&d.label) {
                return bad(format!(
                    "distractor {i} uses label {} which is not a non-vascular organ",
                    d.label
                ));
            }
            if self.distractor_hits_wall(d) {
                return bad(format!("distractor {i} intersects the aneurysm outer wall"));
            }
        }
        for (i, w) in self.wall_shells.iter().enumerate() {
            if !(w.gap_mm >= 0.0 && w.thickness_mm > 0.0 && w.half_width > 0.0 && w.z_range[0] <= w.z_range[1]) {
                return bad(format!("wall shell {i} has invalid geometry"));
            }
            if !table.contains_key(&w.label) || default_vascular_ids().contains(&w.label) {
                return bad(format!(
                    "wall shell {i} uses label {} which is not a non-vascular organ",
                    w.label
                ));
            }
            let reach = r_max + amp + w.gap_mm + w.thickness_mm;
            if (0..2).any(|k| self.axis_xy[k] - reach < 0.0 || self.axis_xy[k] + reach > ext[k]) {
                return bad(format!("wall shell {i} leaves the volume"));
            }
        }
        Ok(())
    }

    /// Sampled test on a grid four times finer than the voxel grid.
    fn distractor_hits_wall(&self, d: &Distractor) -> bool {
        let step = [0, 1, 2].map(|k| self.spacing[k] / 4.0);
        let lo = [0, 1, 2].map(|k| d.center[k] - d.semi_axes[k]);
        let n = [0, 1, 2].map(|k| (2.0 * d.semi_axes[k] / step[k]).ceil() as usize + 1);
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let p = [
                        lo[0] + i as f64 * step[0],
                        lo[1] + j as f64 * step[1],
                        lo[2] + k as f64 * step[2],
                    ];
                    if d.contains(p) && self.inside_outer_wall(p) {
                        return true;
                    }
                }
            }
        }
        false
    }

    pub fn max_outer_radius(&self) -> f64 {
        let [a, b] = self.z_extent;
        if self.bulge_center_z >= a && self.bulge_center_z <= b {
            self.bulge_radius
        } else {
            self.outer_radius(a).max(self.outer_radius(b))
        }
    }

    /// Randomised patient-like phantom at the desk training scale: smaller
    /// aneurysm, eccentric lumen, ellipsoidal distractors placed 0 to 1 mm from
    /// the outer wall, and one or two organ shells hugging the wall.
    pub fn patient(patient_id: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ patient_id);
        let dims = [96, 96, 64];
        let lumen_radius = rng.gen_range(6.0..8.5);
        let bulge_radius = rng.gen_range(13.0..20.0);
        let axis = if rng.gen_bool(0.5) {
            AxisShape::Straight
        } else {
            AxisShape::Sinusoid {
                amplitude_mm: rng.gen_range(1.0..3.0),
                period_mm: rng.gen_range(100.0..160.0),
            }
        };
        let mut spec = Self {
            dims,
            spacing: [1.0; 3],
            axis_xy: [47.5 + rng.gen_range(-2.0..2.0), 47.5 + rng.gen_range(-2.0..2.0)],
            axis,
            z_extent: [3.5, 59.5],
            lumen_radius,
            lumen_offset: [0.0, 0.0],
            bulge_center_z: rng.gen_range(24.0..40.0),
            bulge_radius,
            bulge_sigma_z: rng.gen_range(7.0..12.0),
            distractors: Vec::new(),
            wall_shells: Vec::new(),
            intensities: TissueIntensities::default(),
            seed: seed ^ (patient_id << 32),
        };
        let organs = [
            (LABEL_VERTEBRA, std::f64::consts::FRAC_PI_2, [11.0, 7.0, 40.0]),
            (LABEL_KIDNEY, rng.gen_range(-0.4..0.4), [6.0, 9.0, 14.0]),
            (
                LABEL_BOWEL,
                std::f64::consts::PI + rng.gen_range(-0.5..0.5),
                [6.0, 6.0, 9.0],
            ),
            (
                LABEL_BOWEL,
                -std::f64::consts::FRAC_PI_2 + rng.gen_range(-0.6..0.6),
                [5.0, 5.0, 8.0],
            ),
            (
                LABEL_BOWEL,
                -std::f64::consts::FRAC_PI_4 + rng.gen_range(-0.3..0.3),
                [4.0, 4.0, 7.0],
            ),
        ];
        for (label, angle, semi) in organs {
            let zc = spec.bulge_center_z + rng.gen_range(-10.0..10.0);
            let gap = rng.gen_range(0.0..1.0);
            let intensity = rng.gen_range(40.0..80.0);
            let (s, c) = f64::sin_cos(angle);
            let reach = (semi[0] * c).hypot(semi[1] * s);
            let mut dist = spec.outer_radius(zc) + spec.axis_amplitude() + gap + reach;
            let axis_c = spec.axis_xy;
            loop {
                let d = Distractor {
                    center: [axis_c[0] + dist * c, axis_c[1] + dist * s, zc],
                    semi_axes: semi,
                    label,
                    intensity_hu: intensity,
                };
                if !spec.distractor_hits_wall(&d) {
                    spec.distractors.push(d);
                    break;
                }
                dist += 1.0;
            }
        }
        let (s, c) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();
        let e = rng.gen_range(0.3..0.9);
        spec.lumen_offset = [e * c, e * s];
        let shells = if rng.gen_bool(0.5) { 2 } else { 1 };
        for k in 0..shells {
            let half = rng.gen_range(8.0..16.0);
            let zc = spec.bulge_center_z + rng.gen_range(-8.0..8.0);
            spec.wall_shells.push(WallShell {
                angle: rng.gen_range(0.0..std::f64::consts::TAU),
                half_width: rng.gen_range(0.5..1.2),
                gap_mm: rng.gen_range(0.0..1.0),
                thickness_mm: rng.gen_range(3.0..6.0),
                z_range: [zc - half, zc + half],
                label: if k == 0 { LABEL_BOWEL } else { LABEL_KIDNEY },
                intensity_hu: rng.gen_range(40.0..80.0),
            });
        }
        // Keep only distractors that stay inside the volume.
        let ext = [0, 1, 2].map(|k| (dims[k] - 1) as f64 * spec.spacing[k]);
        spec.distractors
            .retain(|d| (0..2).all(|k| d.center[k] - d.semi_axes[k] >= 0.0 && d.center[k] + d.semi_axes[k] <= ext[k]));
        spec
    }
}

/// Closed-form (quadrature) geometry of the outer wall.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRecord {
    pub max_outer_diameter_mm: f64,
    pub surface_area_mm2: f64,
    pub volume_mm3: f64,
    /// Axis point at every voxel plane inside the aorta's extent.
    pub centerline: Vec<[f64; 3]>,
}

impl AnalyticRecord {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "max_outer_diameter_mm = {:?}", self.max_outer_diameter_mm);
        let _ = writeln!(s, "surface_area_mm2 = {:?}", self.surface_area_mm2);
        let _ = writeln!(s, "volume_mm3 = {:?}", self.volume_mm3);
        let _ = writeln!(s, "centerline_points = {}", self.centerline.len());
        for (i, p) in self.centerline.iter().enumerate() {
            let _ = writeln!(s, "centerline.{i} = {:?} {:?} {:?}", p[0], p[1], p[2]);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        let mut centerline = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("analytic record line {}: expected `key = value`", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("analytic record line {}: `{s}` is not a number", n + 1)))
            };
            if let Some(idx) = k.strip_prefix("centerline.") {
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::Format(format!("analytic record line {}: bad index", n + 1)))?;
                let xyz: Vec<f64> = v.split_whitespace().map(num).collect::<Result<_>>()?;
                let p: [f64; 3] = xyz
                    .try_into()
                    .map_err(|_| Error::Format(format!("analytic record line {}: expected 3 coordinates", n + 1)))?;
                centerline.insert(idx, p);
            } else {
                fields.insert(k.to_string(), num(v)?);
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("analytic record lacks `{k}`")))
        };
        Ok(Self {
            max_outer_diameter_mm: get("max_outer_diameter_mm")?,
            surface_area_mm2: get("surface_area_mm2")?,
            volume_mm3: get("volume_mm3")?,
            centerline: centerline.into_values().collect(),
        })
    }
}

/// Everything `generate` produces.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: Volume3D,
    pub gt_mask: Volume3D,
    pub labels: OrganLabelMap,
    pub analytic: AnalyticRecord,
}

impl Phantom {
    /// Write `image.nii`, `gt.nii`, `labels.nii` and `analytic.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::volume::write_nifti(&self.image, dir.join("image.nii"))?;
        crate::volume::write_nifti(&self.gt_mask, dir.join("gt.nii"))?;
        crate::volume::write_nifti(self.labels.volume(), dir.join("labels.nii"))?;
        let p = dir.join("analytic.txt");
        fs::write(&p, self.analytic.to_text()).map_err(|e| Error::io(&p, e))
    }
}

const QUAD_Z_INTERVALS: usize = 10_000;
const QUAD_THETA_NODES: usize = 256;

fn analytic_record(spec: &PhantomSpec) -> AnalyticRecord {
    let [za, zb] = spec.z_extent;
    let h = (zb - za) / QUAD_Z_INTERVALS as f64;
    // Composite Simpson in z, periodic trapezoid in θ.
    let thetas: Vec<(f64, f64)> = (0..QUAD_THETA_NODES)
        .map(|i| f64::sin_cos(std::f64::consts::TAU * i as f64 / QUAD_THETA_NODES as f64))
        .collect();
    let lateral = |z: f64| {
        let r = spec.outer_radius(z);
        let dr = spec.outer_radius_slope(z);
        let dc = spec.axis_slope(z);
        let mean: f64 = thetas
            .iter()
            .map(|&(s, c)| (1.0 + (dr + dc[0] * c + dc[1] * s).powi(2)).sqrt())
            .sum::<f64>()
            / QUAD_THETA_NODES as f64;
        std::f64::consts::TAU * r * mean
    };
    let disc = |z: f64| std::f64::consts::PI * spec.outer_radius(z).powi(2);
    let simpson = |f: &dyn Fn(f64) -> f64| {
        let mut acc = f(za) + f(zb);
        for i in 1..QUAD_Z_INTERVALS {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(za + i as f64 * h);
        }
        acc * h / 3.0
    };
    let volume = simpson(&disc);
    let area = simpson(&lateral) + disc(za) + disc(zb);

    let mut r_max: f64 = 0.0;
    for i in 0..=QUAD_Z_INTERVALS {
        r_max = r_max.max(spec.outer_radius(za + i as f64 * h));
    }
    if spec.bulge_center_z >= za && spec.bulge_center_z <= zb {
        r_max = r_max.max(spec.bulge_radius);
    }
    let centerline = (0..spec.dims[2])
        .map(|k| k as f64 * spec.spacing[2])
        .filter(|&z| z >= za && z <= zb)
        .map(|z| {
            let c = spec.axis_point(z);
            [c[0], c[1], z]
        })
        .collect();
    AnalyticRecord {
        max_outer_diameter_mm: 2.0 * r_max,
        surface_area_mm2: area,
        volume_mm3: volume,
        centerline,
    }
}

/// Generate a phantom. Identical specs give bit-identical volumes.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let n = nx * ny * nz;
    let mut image = vec![spec.intensities.background; n];
    let mut gt = vec![0.0; n];
    let mut labels = vec![0.0; n];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                let p = spec.voxel_center(x, y, z);
                if spec.inside_outer_wall(p) {
                    gt[i] = 1.0;
                    labels[i] = LABEL_AORTA as f64;
                    image[i] = if spec.inside_lumen(p) {
                        spec.intensities.lumen
                    } else {
                        spec.intensities.thrombus
                    };
                    continue;
                }
                for d in &spec.distractors {
                    if d.contains(p) {
                        labels[i] = d.label as f64;
                        image[i] = d.intensity_hu;
                    }
                }
                for w in &spec.wall_shells {
                    if spec.shell_contains(w, p) {
                        labels[i] = w.label as f64;
                        image[i] = w.intensity_hu;
                    }
                }
            }
        }
    }
    if spec.intensities.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.intensities.noise_sigma)
            .map_err(|e| Error::Specification(format!("noise sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in &mut image {
            *v += normal.sample(&mut rng);
        }
    }
    let spacing = spec.spacing;
    let origin = [0.0; 3];
    let image = Volume3D::new(spec.dims, spacing, origin, image, VolumeKind::Intensity)?;
    let gt_mask = Volume3D::new(spec.dims, spacing, origin, gt, VolumeKind::BinaryMask)?;
    let label_vol = Volume3D::new(spec.dims, spacing, origin, labels, VolumeKind::IntegerLabels)?;
    let labels = OrganLabelMap::new(label_vol, default_label_table(), default_vascular_ids(), LABEL_AORTA)?;
    Ok(Phantom {
        image,
        gt_mask,
        labels,
        analytic: analytic_record(spec),
    })
}

/// Patient-level split of phantom ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl Partition {
    /// Which split a patient id belongs to.
    pub fn split_of(&self, id: u64) -> Option<&'static str> {
        if self.train.contains(&id) {
            Some("train")
        } else if self.val.contains(&id) {
            Some("val")
        } else if self.test.contains(&id) {
            Some("test")
        } else {
            None
        }
    }
}

pub fn split_patients(ids: &[u64], n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Partition> {
    if n_train + n_val + n_test != ids.len() {
        return Err(Error::Config(format!(
            "split sizes {n_train}+{n_val}+{n_test} do not add up to {} patients",
            ids.len()
        )));
    }
    let unique: BTreeSet<u64> = ids.iter().copied().collect();
    if unique.len() != ids.len() {
        return Err(Error::Config("patient ids must be unique".into()));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut rest = order.into_iter();
    let mut take = |k: usize| {
        let mut v: Vec<u64> = rest.by_ref().take(k).collect();
        v.sort_unstable();
        v
    };
    Ok(Partition {
        train: take(n_train),
        val: take(n_val),
        test: take(n_test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            dims: [40, 40, 30],
            axis_xy: [19.5, 19.5],
            z_extent: [2.5, 26.5],
            lumen_radius: 5.0,
            bulge_center_z: 15.0,
            bulge_radius: 10.0,
            bulge_sigma_z: 5.0,
            distractors: vec![Distractor {
                center: [19.5, 34.0, 15.0],
                semi_axes: [6.0, 3.0, 6.0],
                label: LABEL_VERTEBRA,
                intensity_hu: 70.0,
            }],
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::default().validate().unwrap();
        for id in 0..15 {
            PhantomSpec::patient(id, 1).validate().unwrap();
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small_spec();
        s.bulge_radius = 4.0;
        assert!(matches!(generate(&s), Err(Error::Specification(_))));
        let mut s = small_spec();
        s.bulge_radius = 30.0;
        assert!(matches!(generate(&s), Err(Error::Specification(_))));
        let mut s = small_spec();
        s.distractors[0].center = [19.5, 28.0, 15.0];
        assert!(matches!(generate(&s), Err(Error::Specification(_))));
    }

    #[test]
    fn degenerate_bulge_is_a_cylinder() {
        let mut s = small_spec();
        s.bulge_radius = s.lumen_radius;
        s.distractors.clear();
        let p = generate(&s).unwrap();
        assert_eq!(p.analytic.max_outer_diameter_mm, 2.0 * s.lumen_radius);
        let planes: Vec<usize> = (3..27)
            .map(|z| {
                p.gt_mask
                    .extract_slice(z)
                    .unwrap()
                    .data
                    .iter()
                    .filter(|&&v| v == 1.0)
                    .count()
            })
            .collect();
        assert!(planes.windows(2).all(|w| w[0] == w[1]));
        let h = s.z_extent[1] - s.z_extent[0];
        let expected_volume = std::f64::consts::PI * 25.0 * h;
        assert!((p.analytic.volume_mm3 - expected_volume).abs() < 1e-9 * expected_volume);
        let expected_area = std::f64::consts::TAU * 5.0 * h + 2.0 * std::f64::consts::PI * 25.0;
        assert!((p.analytic.surface_area_mm2 - expected_area).abs() < 1e-9 * expected_area);
    }

    #[test]
    fn zero_noise_is_piecewise_constant() {
        let mut s = small_spec();
        s.intensities.noise_sigma = 0.0;
        let p = generate(&s).unwrap();
        let allowed = [300.0, 60.0, -50.0, 70.0];
        assert!(p.image.data().iter().all(|v| allowed.contains(v)));
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = small_spec();
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.gt_mask, b.gt_mask);
        let mut s2 = s.clone();
        s2.seed = 99;
        assert_ne!(generate(&s2).unwrap().image, a.image);
    }

    #[test]
    fn distractors_never_overlap_ground_truth() {
        for id in 0..4 {
            let p = generate(&PhantomSpec::patient(id, 3)).unwrap();
            for (g, l) in p.gt_mask.data().iter().zip(p.labels.volume().data()) {
                if *g == 1.0 {
                    assert_eq!(*l, LABEL_AORTA as f64);
                }
            }
            assert!(p.labels.volume().data().contains(&(LABEL_BOWEL as f64)));
        }
    }

    #[test]
    fn eccentric_lumen_stays_inside_the_wall() {
        let mut spec = PhantomSpec::default();
        spec.intensities.noise_sigma = 0.0;
        spec.lumen_offset = [0.9, 0.0];
        let p = generate(&spec).unwrap();
        let lumen = spec.intensities.lumen;
        let mut n_lumen = 0;
        for (v, g) in p.image.data().iter().zip(p.gt_mask.data()) {
            if *v == lumen {
                n_lumen += 1;
                assert_eq!(*g, 1.0);
            }
        }
        assert!(n_lumen > 0);
        // Shifted towards +x: at the bulge the lumen is off-axis.
        let z = 48;
        let xs: Vec<usize> = (0..96).filter(|&x| p.image.get(x, 47, z) == lumen).collect();
        let mid = (xs[0] + xs[xs.len() - 1]) as f64 / 2.0;
        assert!(mid > 47.5 + 0.5 * 0.9 * 15.0, "lumen centre {mid}");
        spec.lumen_offset = [0.8, 0.8];
        assert!(matches!(spec.validate(), Err(Error::Specification(_))));
    }

    #[test]
    fn wall_shells_hug_the_wall_with_their_label() {
        let spec = PhantomSpec::patient(2, 5);
        assert!(!spec.wall_shells.is_empty());
        let p = generate(&spec).unwrap();
        for w in &spec.wall_shells {
            let mut n = 0;
            for (x, y, z) in itertools(96) {
                let c = spec.voxel_center(x, y, z);
                if spec.shell_contains(w, c) {
                    n += 1;
                    assert_eq!(p.gt_mask.get(x, y, z), 0.0);
                    let r =
                        ((c[0] - spec.axis_point(c[2])[0]).powi(2) + (c[1] - spec.axis_point(c[2])[1]).powi(2)).sqrt();
                    assert!(r - spec.outer_radius(c[2]) <= w.gap_mm + w.thickness_mm + 1e-9);
                }
            }
            assert!(n > 0);
            assert!(p.labels.volume().data().contains(&(w.label as f64)));
        }
    }

    #[test]
    fn voxelized_width_matches_analytic_diameter() {
        let mut s = PhantomSpec::default();
        s.distractors.clear();
        s.intensities.noise_sigma = 0.0;
        let p = generate(&s).unwrap();
        assert_eq!(p.analytic.max_outer_diameter_mm, 50.0);
        let slice = p.gt_mask.extract_slice(48).unwrap();
        let widest = (0..slice.height)
            .map(|y| (0..slice.width).filter(|&x| slice.get(x, y) == 1.0).count())
            .max()
            .unwrap();
        assert!((widest as f64 - 50.0).abs() <= 1.0, "widest row {widest}");
    }

    #[test]
    fn voxel_volume_tracks_analytic_volume() {
        let s = small_spec();
        let p = generate(&s).unwrap();
        let vox = p.gt_mask.count_nonzero() as f64;
        assert!((vox - p.analytic.volume_mm3).abs() / p.analytic.volume_mm3 < 0.02);
    }

    /// Symmetric difference against a 4x supersampled indicator is confined
    /// to a band no thicker than one voxel around the wall.
    #[test]
    fn gt_matches_indicator_up_to_wall_band() {
        let s = small_spec();
        let p = generate(&s).unwrap();
        let [nx, ny, nz] = s.dims;
        let sub = 4;
        let mut sym_diff = 0.0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let g = p.gt_mask.get(x, y, z);
                    let mut inside = 0;
                    for (i, j, k) in itertools(sub) {
                        let q = [
                            x as f64 + (i as f64 + 0.5) / sub as f64 - 0.5,
                            y as f64 + (j as f64 + 0.5) / sub as f64 - 0.5,
                            z as f64 + (k as f64 + 0.5) / sub as f64 - 0.5,
                        ];
                        inside += s.inside_outer_wall(q) as usize;
                    }
                    let frac = inside as f64 / (sub * sub * sub) as f64;
                    sym_diff += if g == 1.0 { 1.0 - frac } else { frac };
                }
            }
        }
        let band = p.analytic.surface_area_mm2 * 1.0;
        assert!(sym_diff / band <= 1.0, "ratio {}", sym_diff / band);
    }

    fn itertools(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
        (0..n).flat_map(move |i| (0..n).flat_map(move |j| (0..n).map(move |k| (i, j, k))))
    }

    #[test]
    fn analytic_record_round_trips_as_text() {
        let p = generate(&small_spec()).unwrap();
        let back = AnalyticRecord::parse(&p.analytic.to_text()).unwrap();
        assert_eq!(back, p.analytic);
    }

    #[test]
    fn split_examples() {
        let ids: Vec<u64> = (0..15).collect();
        let p = split_patients(&ids, 10, 2, 3, 5).unwrap();
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (10, 2, 3));
        let all: BTreeSet<u64> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
        assert_eq!(all.len(), 15);
        assert_eq!(split_patients(&ids, 10, 2, 3, 5).unwrap(), p);

        let ids: Vec<u64> = (0..20).collect();
        let p = split_patients(&ids, 16, 0, 4, 1).unwrap();
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (16, 0, 4));

        assert!(matches!(split_patients(&ids, 10, 2, 3, 0), Err(Error::Config(_))));
    }
}
