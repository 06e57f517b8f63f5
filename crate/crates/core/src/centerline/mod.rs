//! Centerline extraction and vessel morphometry.
//!
//! Pipeline: exact EDT of the mask → speed `F = d^p + ε` → fast marching from
//! the inlet → steepest-descent backtracking from the outlet → 1 mm
//! resampling → local frames → mesh cross-sections → radii and descriptors.

mod edt;
mod fmm;
mod geometry;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mesh::{mesh_measures, TriMesh};
use crate::scalar::vec3::{self, Vec3};
use crate::scalar::Real;
use crate::volume::{Volume3D, VolumeKind};

pub use edt::{distance_transform, squared_distance_transform};
pub use fmm::{backtrack, fast_march_speed, speed_from_distance, ArrivalField, Backtrack, SpeedConfig};
pub use geometry::{
    circumcurvature, cross_section, local_frames, point_in_polygon, polygon_centroid, radius_measures, resample_path,
    Contour, Frame, RadiusRecord,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineConfig {
    pub speed: SpeedConfig,
    /// Arc-length spacing of the output path (mm).
    pub step_mm: f64,
    /// Half-width (points) of the central-difference tangent stencil.
    pub frame_window: usize,
    pub inlet: Option<[usize; 3]>,
    pub outlet: Option<[usize; 3]>,
    /// Move each interior path point to the centroid of its orthogonal
    /// section; the seed endpoints stay put.
    pub recenter: bool,
}

impl Default for CenterlineConfig {
    fn default() -> Self {
        Self {
            speed: SpeedConfig::default(),
            step_mm: 1.0,
            frame_window: 2,
            inlet: None,
            outlet: None,
            recenter: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Centerline<T = f64> {
    pub points: Vec<Vec3<T>>,
    pub frames: Vec<Frame<T>>,
    pub arc_length: Vec<T>,
    pub curvature: Vec<T>,
    /// `None` where the orthogonal plane gave no usable section.
    pub radii: Vec<Option<RadiusRecord<T>>>,
    pub inlet: [usize; 3],
    pub outlet: [usize; 3],
    /// Backtracked path before resampling (voxel index space).
    pub raw: Backtrack,
}

impl<T: Real> Centerline<T> {
    pub fn length(&self) -> T {
        self.arc_length.last().copied().unwrap_or_else(T::zero)
    }

    pub fn tortuosity(&self) -> T {
        let chord = vec3::dist(self.points[0], *self.points.last().unwrap());
        if chord > T::zero() {
            self.length() / chord
        } else {
            T::one()
        }
    }

    /// `x,y,z,s,kappa,r_inscribed,r_equiv_area,d_max_chord`; missing radii are
    /// left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z,s,kappa,r_inscribed,r_equiv_area,d_max_chord\n");
        for i in 0..self.points.len() {
            let p = self.points[i];
            let _ = write!(
                s,
                "{:.4},{:.4},{:.4},{:.4},{:.6}",
                p[0], p[1], p[2], self.arc_length[i], self.curvature[i]
            );
            match self.radii[i] {
                Some(r) => {
                    let _ = writeln!(s, ",{:.4},{:.4},{:.4}", r.r_inscribed, r.r_equiv_area, r.d_max_chord);
                }
                None => s.push_str(",,,\n"),
            }
        }
        s
    }

    /// Diameter profile `s,d_max_chord`.
    pub fn diameter_profile_csv(&self) -> String {
        let mut s = String::from("s,d_max_chord\n");
        for (a, r) in self.arc_length.iter().zip(&self.radii) {
            if let Some(r) = r {
                let _ = writeln!(s, "{a:.4},{:.4}", r.d_max_chord);
            }
        }
        s
    }
}

/// Squared in-plane distances for one axial plane: the plane is stacked
/// three deep with a huge z spacing so only in-plane background counts.
fn in_plane_distance<T: Real>(mask: &Volume3D<T>, z: usize) -> Result<Vec<T>> {
    let slice = mask.extract_slice(z)?;
    let mut data = Vec::with_capacity(3 * slice.len());
    for _ in 0..3 {
        data.extend_from_slice(&slice.data);
    }
    let sp = mask.spacing();
    let vol = Volume3D::new(
        [slice.width, slice.height, 3],
        [sp[0], sp[1], T::lit(1e6)],
        [T::zero(); 3],
        data,
        VolumeKind::BinaryMask,
    )?;
    let sq = squared_distance_transform(&vol)?;
    Ok(sq[slice.len()..2 * slice.len()].to_vec())
}

/// Voxel of maximal in-plane distance in the first and last axial planes
/// that contain mask voxels; ties go to the voxel nearest the plane's
/// mask centroid.
pub fn default_endpoints<T: Real>(mask: &Volume3D<T>) -> Result<([usize; 3], [usize; 3])> {
    let [nx, ny, nz] = mask.dims();
    let occupied: Vec<usize> = (0..nz)
        .filter(|&z| (0..ny).any(|y| (0..nx).any(|x| mask.get(x, y, z) == T::one())))
        .collect();
    let (Some(&first), Some(&last)) = (occupied.first(), occupied.last()) else {
        return Err(Error::Endpoint("mask is empty".into()));
    };
    if first == last {
        return Err(Error::Endpoint("mask occupies a single axial plane".into()));
    }
    let pick = |z: usize| -> Result<[usize; 3]> {
        let d = in_plane_distance(mask, z)?;
        let (mut cx, mut cy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..ny {
            for x in 0..nx {
                if mask.get(x, y, z) == T::one() {
                    cx += x as f64;
                    cy += y as f64;
                    n += 1.0;
                }
            }
        }
        let (cx, cy) = (cx / n, cy / n);
        let mut best: Option<(T, f64, [usize; 3])> = None;
        for y in 0..ny {
            for x in 0..nx {
                let v = d[x + nx * y];
                if mask.get(x, y, z) != T::one() {
                    continue;
                }
                let off = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let better = match best {
                    None => true,
                    Some((bv, bo, _)) => v > bv || (v == bv && off < bo),
                };
                if better {
                    best = Some((v, off, [x, y, z]));
                }
            }
        }
        Ok(best.expect("plane is occupied").2)
    };
    Ok((pick(first)?, pick(last)?))
}

fn check_endpoint<T: Real>(dist: &Volume3D<T>, p: [usize; 3], what: &str) -> Result<()> {
    let d = dist.dims();
    if (0..3).any(|k| p[k] >= d[k]) {
        return Err(Error::Endpoint(format!("{what} {p:?} lies outside the grid {d:?}")));
    }
    if !(dist.get(p[0], p[1], p[2]) > T::zero()) {
        return Err(Error::Endpoint(format!("{what} {p:?} is not inside the mask")));
    }
    Ok(())
}

/// Minimal-cost path from inlet to outlet through `mask`, in physical mm,
/// inlet first, together with the raw backtrack.
pub fn centerline_path<T: Real>(
    mask: &Volume3D<T>,
    cfg: &CenterlineConfig,
) -> Result<(Vec<Vec3<T>>, Backtrack, [usize; 3], [usize; 3])> {
    let dist = distance_transform(mask)?;
    let (inlet, outlet) = match (cfg.inlet, cfg.outlet) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let (da, db) = default_endpoints(mask)?;
            (a.unwrap_or(da), b.unwrap_or(db))
        }
    };
    check_endpoint(&dist, inlet, "inlet")?;
    check_endpoint(&dist, outlet, "outlet")?;
    let speed = speed_from_distance(&dist, cfg.speed);
    let field = fast_march_speed(dist.dims(), dist.spacing(), &speed, inlet, Some(outlet))?;
    if !field.at(outlet).is_finite() {
        return Err(Error::Unreachable);
    }
    let domain: Vec<bool> = speed.iter().map(|&s| s > T::zero()).collect();
    let raw = backtrack(&field, &domain, inlet, outlet)?;
    let sp = mask.spacing();
    let org = mask.origin();
    let mut pts: Vec<Vec3<T>> = raw
        .points
        .iter()
        .map(|p| std::array::from_fn(|k| org[k] + T::lit(p[k]) * sp[k]))
        .collect();
    pts.reverse();
    let path = resample_path(&pts, T::lit(cfg.step_mm))?;
    Ok((path, raw, inlet, outlet))
}

/// Full centerline with frames, curvature and per-point section radii on
/// `mesh`.
pub fn extract_centerline<T: Real>(
    mask: &Volume3D<T>,
    mesh: &TriMesh<T>,
    cfg: &CenterlineConfig,
) -> Result<Centerline<T>> {
    let (mut points, raw, inlet, outlet) = centerline_path(mask, cfg)?;
    let mut frames = local_frames(&points, cfg.frame_window)?;
    if cfg.recenter && !mesh.is_empty() {
        let last = points.len() - 1;
        let moved: Vec<Vec3<T>> = points
            .iter()
            .zip(&frames)
            .enumerate()
            .map(|(i, (&p, f))| match cross_section(mesh, p, f) {
                _ if i == 0 || i == last => p,
                Ok(c) if c.planar.len() >= 3 && point_in_polygon([T::zero(), T::zero()], &c.planar) => {
                    let [u, v] = polygon_centroid(&c.planar);
                    vec3::add(p, vec3::add(vec3::scale(f.normal, u), vec3::scale(f.binormal, v)))
                }
                _ => p,
            })
            .collect();
        points = resample_path(&moved, T::lit(cfg.step_mm))?;
        frames = local_frames(&points, cfg.frame_window)?;
    }
    let mut arc_length = vec![T::zero()];
    for w in points.windows(2) {
        let l = *arc_length.last().unwrap() + vec3::dist(w[0], w[1]);
        arc_length.push(l);
    }
    let n = points.len();
    let mut curvature: Vec<T> = (0..n)
        .map(|i| {
            if i == 0 || i + 1 == n {
                T::zero()
            } else {
                circumcurvature(points[i - 1], points[i], points[i + 1])
            }
        })
        .collect();
    if n >= 3 {
        curvature[0] = curvature[1];
        curvature[n - 1] = curvature[n - 2];
    }
    let radii = points
        .iter()
        .zip(&frames)
        .map(|(&p, f)| {
            cross_section(mesh, p, f)
                .and_then(|c| radius_measures(&c.planar, [T::zero(), T::zero()]))
                .ok()
        })
        .collect();
    Ok(Centerline {
        points,
        frames,
        arc_length,
        curvature,
        radii,
        inlet,
        outlet,
        raw,
    })
}

/// Optional, explicitly chosen shape indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeIndex {
    /// `d_max_chord / (2 r_inscribed)` at the widest section.
    MaxChordToInscribed,
    /// Maximal diameter over the diameter at the inlet section.
    MaxToInletDiameter,
}

impl ShapeIndex {
    pub fn name(self) -> &'static str {
        match self {
            ShapeIndex::MaxChordToInscribed => "max_chord_to_inscribed",
            ShapeIndex::MaxToInletDiameter => "max_to_inlet_diameter",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "max_chord_to_inscribed" => Some(ShapeIndex::MaxChordToInscribed),
            "max_to_inlet_diameter" => Some(ShapeIndex::MaxToInletDiameter),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Morphometry {
    pub max_diameter_mm: f64,
    pub surface_area_mm2: f64,
    pub volume_mm3: f64,
    pub centerline_length_mm: f64,
    pub tortuosity: f64,
    pub max_curvature: f64,
    pub mean_curvature: f64,
    pub diameter_to_length: f64,
    pub shape_indices: Vec<(String, f64)>,
    /// Centerline points without a usable section.
    pub missing_sections: usize,
}

pub fn morphometry<T: Real>(
    cl: &Centerline<T>,
    mesh: &TriMesh<T>,
    shape_indices: &[ShapeIndex],
) -> Result<Morphometry> {
    let m = mesh_measures(mesh)?;
    let defined: Vec<(usize, RadiusRecord<T>)> = cl
        .radii
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .collect();
    let (imax, rmax) = defined
        .iter()
        .copied()
        .max_by(|a, b| {
            a.1.d_max_chord
                .partial_cmp(&b.1.d_max_chord)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .ok_or_else(|| Error::Measurement("no centerline point has a valid cross-section".into()))?;
    let _ = imax;
    let max_d = rmax.d_max_chord.as_f64();
    let length = cl.length().as_f64();
    let kappa: Vec<f64> = cl.curvature.iter().map(|k| k.as_f64()).collect();
    let mut indices = Vec::new();
    for &s in shape_indices {
        let v = match s {
            ShapeIndex::MaxChordToInscribed => max_d / (2.0 * rmax.r_inscribed.as_f64()),
            ShapeIndex::MaxToInletDiameter => max_d / defined[0].1.d_max_chord.as_f64(),
        };
        indices.push((s.name().to_string(), v));
    }
    Ok(Morphometry {
        max_diameter_mm: max_d,
        surface_area_mm2: m.surface_area.as_f64(),
        volume_mm3: m.volume.as_f64(),
        centerline_length_mm: length,
        tortuosity: cl.tortuosity().as_f64(),
        max_curvature: kappa.iter().copied().fold(0.0, f64::max),
        mean_curvature: kappa.iter().sum::<f64>() / kappa.len().max(1) as f64,
        diameter_to_length: if length > 0.0 { max_d / length } else { 0.0 },
        shape_indices: indices,
        missing_sections: cl.radii.len() - defined.len(),
    })
}

impl Morphometry {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("descriptor,value\n");
        let rows = [
            ("max_diameter_mm", self.max_diameter_mm),
            ("surface_area_mm2", self.surface_area_mm2),
            ("volume_mm3", self.volume_mm3),
            ("centerline_length_mm", self.centerline_length_mm),
            ("tortuosity", self.tortuosity),
            ("max_curvature_per_mm", self.max_curvature),
            ("mean_curvature_per_mm", self.mean_curvature),
            ("max_diameter_to_length", self.diameter_to_length),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v:.6}");
        }
        for (k, v) in &self.shape_indices {
            let _ = writeln!(s, "{k},{v:.6}");
        }
        let _ = writeln!(s, "missing_sections,{}", self.missing_sections);
        s
    }
}

/// Reference values for the report's "true" column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceDescriptors {
    pub max_diameter_mm: f64,
    pub surface_area_mm2: f64,
    pub volume_mm3: f64,
}

/// Plain-text descriptor table in cm units, e.g.
/// `Maximal Diameter (pred) 5.3 cm / (true) 5.8 cm`.
pub fn descriptor_report(pred: &Morphometry, truth: Option<&ReferenceDescriptors>, surface_label: &str) -> String {
    let mut s = format!("Morphometric descriptors ({surface_label} surface)\n");
    let rows: [(&str, f64, Option<f64>, &str); 3] = [
        (
            "Maximal Diameter",
            pred.max_diameter_mm / 10.0,
            truth.map(|t| t.max_diameter_mm / 10.0),
            "cm",
        ),
        (
            "Surface Area",
            pred.surface_area_mm2 / 100.0,
            truth.map(|t| t.surface_area_mm2 / 100.0),
            "cm²",
        ),
        (
            "Volume",
            pred.volume_mm3 / 1000.0,
            truth.map(|t| t.volume_mm3 / 1000.0),
            "cm³",
        ),
    ];
    for (name, p, t, unit) in rows {
        let _ = match t {
            Some(t) => writeln!(s, "{name} (pred) {p:.1} {unit} / (true) {t:.1} {unit}"),
            None => writeln!(s, "{name} (pred) {p:.1} {unit}"),
        };
    }
    let _ = writeln!(s, "Centerline Length {:.1} cm", pred.centerline_length_mm / 10.0);
    let _ = writeln!(s, "Tortuosity {:.3}", pred.tortuosity);
    let _ = writeln!(s, "Max Curvature {:.4} 1/mm", pred.max_curvature);
    for (k, v) in &pred.shape_indices {
        let _ = writeln!(s, "{k} {v:.3}");
    }
    s
}
