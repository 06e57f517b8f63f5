//! Surface reconstruction: slice stacking, volume smoothing, marching cubes,
//! mesh smoothing and surface measurements.

mod io;
mod marching;
mod smooth;
mod tables;

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::scalar::vec3::{self, Vec3};
use crate::scalar::Real;

pub use io::{read_obj, read_stl, write_obj, write_stl};
pub use marching::{gaussian_smooth, marching_cubes, stack_slices};
pub use smooth::{laplacian_smooth, taubin_smooth};

/// Zero-area tolerance used by cleanup (mm²).
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh<T = f64> {
    pub vertices: Vec<Vec3<T>>,
    pub triangles: Vec<[usize; 3]>,
}

impl<T: Real> TriMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::Topology(format!(
                "triangle {t:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: [usize; 3]) -> T {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a))) * T::lit(0.5)
    }

    pub fn translated(&self, offset: Vec3<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| vec3::add(v, offset)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn cast<U: Real>(&self) -> TriMesh<U> {
        TriMesh {
            vertices: self.vertices.iter().map(|v| v.map(|c| U::lit(c.as_f64()))).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Every directed edge appears once and is matched by its reverse.
    pub fn is_watertight(&self) -> bool {
        let mut directed: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        !self.triangles.is_empty()
            && directed
                .iter()
                .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Merge bit-identical vertices, then drop triangles that collapse or
    /// have area below [`DEGENERATE_AREA`]; unused vertices are removed.
    pub fn cleaned(&self) -> Self {
        let mut key_to_new: HashMap<[u64; 3], usize> = HashMap::new();
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut verts = Vec::new();
        for v in &self.vertices {
            let key = v.map(|c| (c.as_f64() + 0.0).to_bits());
            let id = *key_to_new.entry(key).or_insert_with(|| {
                verts.push(*v);
                verts.len() - 1
            });
            remap.push(id);
        }
        let merged = Self {
            vertices: verts,
            triangles: self.triangles.iter().map(|t| t.map(|i| remap[i])).collect(),
        };
        let tris: Vec<[usize; 3]> = merged
            .triangles
            .iter()
            .copied()
            .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
            .filter(|&t| merged.triangle_area(t).as_f64() > DEGENERATE_AREA)
            .collect();
        Self::compact(&merged.vertices, &tris)
    }

    fn compact(vertices: &[Vec3<T>], tris: &[[usize; 3]]) -> Self {
        let mut remap = vec![usize::MAX; vertices.len()];
        let mut verts = Vec::new();
        let triangles = tris
            .iter()
            .map(|t| {
                t.map(|i| {
                    if remap[i] == usize::MAX {
                        remap[i] = verts.len();
                        verts.push(vertices[i]);
                    }
                    remap[i]
                })
            })
            .collect();
        Self {
            vertices: verts,
            triangles,
        }
    }

    /// Triangle counts of vertex-connected components, largest first.
    pub fn component_sizes(&self) -> Vec<usize> {
        let labels = self.component_labels();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_default() += 1;
        }
        let mut sizes: Vec<usize> = counts.into_values().collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    fn component_labels(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for t in &self.triangles {
            let r0 = find(&mut parent, t[0]);
            for &v in &t[1..] {
                let r = find(&mut parent, v);
                if r != r0 {
                    let (lo, hi) = if r < r0 { (r, r0) } else { (r0, r) };
                    parent[hi] = lo;
                }
            }
            let r = find(&mut parent, t[0]);
            for &v in t {
                let rv = find(&mut parent, v);
                parent[rv] = r;
            }
        }
        self.triangles.iter().map(|t| find(&mut parent, t[0])).collect()
    }

    /// Keep the component with the most triangles (ties: lowest vertex id).
    pub fn largest_component(&self) -> Self {
        if self.triangles.is_empty() {
            return self.clone();
        }
        let labels = self.component_labels();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_default() += 1;
        }
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&l, _)| l)
            .unwrap_or(0);
        let tris: Vec<[usize; 3]> = self
            .triangles
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == best)
            .map(|(t, _)| *t)
            .collect();
        Self::compact(&self.vertices, &tris)
    }

    pub fn surface_area(&self) -> T {
        self.triangles.iter().map(|&t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume, accumulated relative to the vertex centroid.
    pub fn signed_volume(&self) -> T {
        if self.vertices.is_empty() {
            return T::zero();
        }
        let n = T::from_usize_lossy(self.vertices.len());
        let c = vec3::scale(
            self.vertices.iter().fold([T::zero(); 3], |acc, &v| vec3::add(acc, v)),
            T::one() / n,
        );
        let six = T::lit(6.0);
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, d] = t.map(|i| vec3::sub(self.vertices[i], c));
                vec3::dot(a, vec3::cross(b, d)) / six
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshMeasures<T = f64> {
    pub surface_area: T,
    pub volume: T,
}

pub fn mesh_measures<T: Real>(mesh: &TriMesh<T>) -> Result<MeshMeasures<T>> {
    if !mesh.is_watertight() {
        return Err(Error::Measurement("mesh is not watertight".into()));
    }
    Ok(MeshMeasures {
        surface_area: mesh.surface_area(),
        volume: mesh.signed_volume().abs(),
    })
}

/// Parameters of the mask → mesh pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructConfig {
    /// Gaussian σ (voxels) applied to the binary mask; 0 disables.
    pub sigma_voxels: f64,
    pub iso: f64,
    pub laplacian_iterations: usize,
    pub laplacian_lambda: f64,
    pub taubin_iterations: usize,
    pub taubin_lambda: f64,
    pub taubin_mu: f64,
    /// Keep only the largest connected surface.
    pub largest_component: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            sigma_voxels: 1.0,
            iso: 0.5,
            laplacian_iterations: 10,
            laplacian_lambda: 0.5,
            taubin_iterations: 10,
            taubin_lambda: 0.5,
            taubin_mu: -0.53,
            largest_component: true,
        }
    }
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_voxels >= 0.0) {
            return Err(Error::Config(format!("sigma {} must be >= 0", self.sigma_voxels)));
        }
        if !(self.laplacian_lambda > 0.0 && self.laplacian_lambda <= 1.0) {
            return Err(Error::Config(format!(
                "laplacian lambda {} outside (0, 1]",
                self.laplacian_lambda
            )));
        }
        if !(self.taubin_lambda > 0.0 && self.taubin_mu < 0.0 && -self.taubin_mu > self.taubin_lambda) {
            return Err(Error::Config(format!(
                "taubin parameters need lambda > 0 > mu and |mu| > lambda, got {} / {}",
                self.taubin_lambda, self.taubin_mu
            )));
        }
        Ok(())
    }
}

/// Surface plus what was discarded on the way.
#[derive(Debug, Clone)]
pub struct Reconstruction<T = f64> {
    pub mesh: TriMesh<T>,
    /// Triangle counts of every connected surface before selection,
    /// largest first.
    pub component_sizes: Vec<usize>,
}

/// Smooth the mask, extract the iso-surface, keep the largest component and
/// apply Laplacian then Taubin smoothing.
pub fn reconstruct<T: Real>(mask: &crate::volume::Volume3D<T>, cfg: &ReconstructConfig) -> Result<Reconstruction<T>> {
    cfg.validate()?;
    let field = gaussian_smooth(mask, T::lit(cfg.sigma_voxels))?;
    let raw = marching_cubes(&field, T::lit(cfg.iso));
    if raw.is_empty() {
        return Err(Error::EmptySet("mask has no iso-surface".into()));
    }
    let mut component_sizes = raw.component_sizes();
    component_sizes.sort_unstable_by(|a, b| b.cmp(a));
    let mut mesh = if cfg.largest_component {
        raw.largest_component()
    } else {
        raw
    };
    mesh = laplacian_smooth(&mesh, cfg.laplacian_iterations, T::lit(cfg.laplacian_lambda))?;
    mesh = taubin_smooth(
        &mesh,
        cfg.taubin_iterations,
        T::lit(cfg.taubin_lambda),
        T::lit(cfg.taubin_mu),
    )?;
    Ok(Reconstruction { mesh, component_sizes })
}

/// Undirected neighbour lists; errors if an edge borders more than two
/// triangles.
pub(crate) fn vertex_neighbours<T: Real>(mesh: &TriMesh<T>) -> Result<Vec<Vec<usize>>> {
    let mut edge_use: HashMap<(usize, usize), u32> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let e = (a.min(b), a.max(b));
            let n = edge_use.entry(e).or_default();
            *n += 1;
            if *n > 2 {
                return Err(Error::Topology(format!(
                    "edge {e:?} is shared by more than two triangles"
                )));
            }
        }
    }
    let mut nb = vec![Vec::new(); mesh.vertices.len()];
    let mut edges: Vec<(usize, usize)> = edge_use.into_keys().collect();
    edges.sort_unstable();
    for (a, b) in edges {
        nb[a].push(b);
        nb[b].push(a);
    }
    Ok(nb)
}
