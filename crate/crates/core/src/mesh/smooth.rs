//! Synchronous (Jacobi) umbrella-operator smoothing.

use super::{vertex_neighbours, TriMesh};
use crate::error::{Error, Result};
use crate::scalar::vec3;
use crate::scalar::Real;

fn umbrella_step<T: Real>(verts: &[[T; 3]], nb: &[Vec<usize>], factor: T) -> Vec<[T; 3]> {
    verts
        .iter()
        .zip(nb)
        .map(|(&v, n)| {
            if n.is_empty() {
                return v;
            }
            let sum = n.iter().fold([T::zero(); 3], |acc, &j| vec3::add(acc, verts[j]));
            let mean = vec3::scale(sum, T::one() / T::from_usize_lossy(n.len()));
            vec3::add(v, vec3::scale(vec3::sub(mean, v), factor))
        })
        .collect()
}

/// `v ← v + λ (mean(neighbours) − v)`, `iterations` times.
pub fn laplacian_smooth<T: Real>(mesh: &TriMesh<T>, iterations: usize, lambda: T) -> Result<TriMesh<T>> {
    let nb = vertex_neighbours(mesh)?;
    let mut verts = mesh.vertices.clone();
    for _ in 0..iterations {
        verts = umbrella_step(&verts, &nb, lambda);
    }
    Ok(TriMesh {
        vertices: verts,
        triangles: mesh.triangles.clone(),
    })
}

/// Alternating λ (shrink) and μ (inflate) steps; one iteration is one pair.
pub fn taubin_smooth<T: Real>(mesh: &TriMesh<T>, iterations: usize, lambda: T, mu: T) -> Result<TriMesh<T>> {
    if !(lambda > T::zero() && mu < T::zero() && -mu > lambda) {
        return Err(Error::Parameter(format!(
            "Taubin smoothing needs λ > 0 > μ and |μ| > λ, got λ = {lambda}, μ = {mu}"
        )));
    }
    let nb = vertex_neighbours(mesh)?;
    let mut verts = mesh.vertices.clone();
    for _ in 0..iterations {
        verts = umbrella_step(&verts, &nb, lambda);
        verts = umbrella_step(&verts, &nb, mu);
    }
    Ok(TriMesh {
        vertices: verts,
        triangles: mesh.triangles.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_shapes::*;
    use super::*;

    #[test]
    fn zero_iterations_is_identity() {
        let c = unit_cube();
        assert_eq!(laplacian_smooth(&c, 0, 0.5).unwrap(), c);
        assert_eq!(taubin_smooth(&c, 0, 0.5, -0.53).unwrap(), c);
    }

    #[test]
    fn tetrahedron_contracts_to_opposite_centroids() {
        let t = regular_tetrahedron();
        let s = laplacian_smooth(&t, 1, 1.0).unwrap();
        for i in 0..4 {
            let mut c = [0.0; 3];
            for j in (0..4).filter(|&j| j != i) {
                c = vec3::add(c, t.vertices[j]);
            }
            let c = vec3::scale(c, 1.0 / 3.0);
            assert!(vec3::dist(s.vertices[i], c) < 1e-15);
        }
        assert_eq!(s.triangles, t.triangles);
    }

    #[test]
    fn taubin_parameter_order() {
        let c = unit_cube();
        for (l, m) in [(0.5, -0.4), (-0.5, -0.6), (0.5, 0.6)] {
            assert!(matches!(taubin_smooth(&c, 1, l, m), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn non_manifold_edge_is_rejected() {
        let mut c = unit_cube();
        c.vertices.push([5.0, 5.0, 5.0]);
        c.triangles.push([0, 2, 8]);
        assert!(matches!(laplacian_smooth(&c, 1, 0.5), Err(Error::Topology(_))));
    }
}
