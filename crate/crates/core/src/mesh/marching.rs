use std::collections::HashMap;

use super::tables::{EDGE_TABLE, TRI_TABLE};
use super::TriMesh;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Slice2D, Volume3D, VolumeKind};

/// Stack binary masks at strictly increasing, uniformly spaced `z_positions`
/// into a mask volume with origin `(0, 0, z₀)`.
pub fn stack_slices<T: Real>(masks: &[Slice2D<T>], spacing: [T; 3], z_positions: &[T]) -> Result<Volume3D<T>> {
    let first = masks.first().ok_or_else(|| Error::Shape("no slices to stack".into()))?;
    if masks.len() != z_positions.len() {
        return Err(Error::Metadata(format!(
            "{} slices but {} z positions",
            masks.len(),
            z_positions.len()
        )));
    }
    if let Some(m) = masks.iter().find(|m| !m.same_shape(first)) {
        return Err(Error::Shape(format!(
            "slice {}x{} differs from {}x{}",
            m.width, m.height, first.width, first.height
        )));
    }
    let tol = spacing[2] * T::lit(1e-3);
    for w in z_positions.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Metadata(format!(
                "z positions not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if (w[1] - w[0] - spacing[2]).abs() > tol {
            return Err(Error::Metadata(format!(
                "slice gap {} does not match z spacing {}",
                w[1] - w[0],
                spacing[2]
            )));
        }
    }
    let mut data = Vec::with_capacity(first.len() * masks.len());
    for m in masks {
        if m.data.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::Shape("stacked slices must be binary".into()));
        }
        data.extend_from_slice(&m.data);
    }
    Volume3D::new(
        [first.width, first.height, masks.len()],
        spacing,
        [T::zero(), T::zero(), z_positions[0]],
        data,
        VolumeKind::BinaryMask,
    )
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

/// Half-sample symmetric reflection into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur with σ in voxels on every axis.
pub fn gaussian_smooth<T: Real>(volume: &Volume3D<T>, sigma_voxels: T) -> Result<Volume3D<T>> {
    let sigma = sigma_voxels.as_f64();
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be ≥ 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(volume.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let dims = volume.dims();
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut cur: Vec<f64> = volume.data().iter().map(|v| v.as_f64()).collect();
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        let mut next = vec![0.0; cur.len()];
        for start in 0..cur.len() {
            // Visit each line once, from its first element.
            if !(start / strides[axis]).is_multiple_of(n) {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|i| cur[start + i * strides[axis]]));
            for i in 0..n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * line[reflect(i as isize + k as isize - r, n)];
                }
                next[start + i * strides[axis]] = acc;
            }
        }
        cur = next;
    }
    volume.with_data(cur.into_iter().map(T::lit).collect(), VolumeKind::Intensity)
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Isosurface at `iso`, with values `≥ iso` inside. The volume is padded by
/// one voxel of outside value so surfaces touching the border still close.
/// Output is welded by grid edge, cleaned, and wound outward.
pub fn marching_cubes<T: Real>(volume: &Volume3D<T>, iso: T) -> TriMesh<T> {
    let (lo, hi) = volume.min_max();
    if !(hi >= iso) {
        return TriMesh::default();
    }
    let iso_f = iso.as_f64();
    let mut pad = lo.as_f64().min(2.0 * iso_f - hi.as_f64());
    if pad >= iso_f {
        pad = iso_f - 1.0;
    }
    let d = volume.dims();
    let n = [d[0] + 2, d[1] + 2, d[2] + 2];
    let mut grid = vec![pad; n[0] * n[1] * n[2]];
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                grid[(x + 1) + n[0] * ((y + 1) + n[1] * (z + 1))] = volume.get(x, y, z).as_f64();
            }
        }
    }
    let at = |p: [usize; 3]| grid[p[0] + n[0] * (p[1] + n[1] * p[2])];
    let sp = volume.spacing().map(|s| s.as_f64());
    let org = volume.origin().map(|o| o.as_f64());
    let to_phys = |g: [f64; 3]| [0, 1, 2].map(|k| org[k] + (g[k] - 1.0) * sp[k]);

    let mut ids: HashMap<usize, usize> = HashMap::new();
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut tris = Vec::new();
    for z in 0..n[2] - 1 {
        for y in 0..n[1] - 1 {
            for x in 0..n[0] - 1 {
                let corner = |c: usize| [x + CORNERS[c][0], y + CORNERS[c][1], z + CORNERS[c][2]];
                let vals: [f64; 8] = std::array::from_fn(|c| at(corner(c)));
                let case = (0..8).fold(0usize, |acc, c| acc | (((vals[c] < iso_f) as usize) << c));
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut edge_vertex = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (pa, pb) = (corner(a), corner(b));
                    let axis = (0..3).find(|&k| pa[k] != pb[k]).unwrap_or(0);
                    let base = if pa[axis] < pb[axis] { pa } else { pb };
                    let key = 3 * (base[0] + n[0] * (base[1] + n[1] * base[2])) + axis;
                    edge_vertex[e] = *ids.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[a], vals[b]);
                        let t = if vb == va { 0.5 } else { (iso_f - va) / (vb - va) };
                        let g = [0, 1, 2].map(|k| pa[k] as f64 + t * (pb[k] as f64 - pa[k] as f64));
                        verts.push(to_phys(g));
                        verts.len() - 1
                    });
                }
                for tri in TRI_TABLE[case].chunks(3).take_while(|c| c[0] >= 0) {
                    // With "below iso" as the case bit the table winds outward.
                    tris.push([
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[1] as usize],
                        edge_vertex[tri[2] as usize],
                    ]);
                }
            }
        }
    }
    let mesh = TriMesh {
        vertices: verts.into_iter().map(|v| v.map(T::lit)).collect(),
        triangles: tris,
    };
    mesh.cleaned()
}
