//! Path resampling, local frames, mesh–plane sections and section radii.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::scalar::vec3::{self, Vec3};
use crate::scalar::Real;

/// Resample a polyline at uniform arc-length `step`; the last point is kept.
pub fn resample_path<T: Real>(path: &[Vec3<T>], step: T) -> Result<Vec<Vec3<T>>> {
    if path.len() < 2 {
        return Ok(path.to_vec());
    }
    if !(step > T::zero()) {
        return Err(Error::Parameter(format!("resampling step must be > 0, got {step}")));
    }
    let mut cum = vec![T::zero()];
    for w in path.windows(2) {
        let l = *cum.last().unwrap() + vec3::dist(w[0], w[1]);
        cum.push(l);
    }
    let total = *cum.last().unwrap();
    if !(total > T::zero()) {
        return Err(Error::Path("path has zero length".into()));
    }
    let mut out = Vec::new();
    let mut seg = 0;
    let mut s = T::zero();
    while s < total {
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let u = if len > T::zero() {
            (s - cum[seg]) / len
        } else {
            T::zero()
        };
        out.push(vec3::add(
            path[seg],
            vec3::scale(vec3::sub(path[seg + 1], path[seg]), u),
        ));
        s += step;
    }
    let last = *path.last().unwrap();
    // Avoid a near-duplicate final point.
    if out.last().is_none_or(|&p| vec3::dist(p, last) > step * T::lit(0.25)) {
        out.push(last);
    } else {
        *out.last_mut().unwrap() = last;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame<T = f64> {
    pub tangent: Vec3<T>,
    pub normal: Vec3<T>,
    pub binormal: Vec3<T>,
}

fn any_perpendicular<T: Real>(t: Vec3<T>) -> Vec3<T> {
    let abs = t.map(|c| c.abs());
    let k = if abs[0] <= abs[1] && abs[0] <= abs[2] {
        0
    } else if abs[1] <= abs[2] {
        1
    } else {
        2
    };
    let mut e = [T::zero(); 3];
    e[k] = T::one();
    vec3::normalize(vec3::sub(e, vec3::scale(t, vec3::dot(e, t)))).expect("axis not parallel to tangent")
}

/// Central-difference tangents over ±`window` points and parallel-transported
/// normals.
pub fn local_frames<T: Real>(path: &[Vec3<T>], window: usize) -> Result<Vec<Frame<T>>> {
    if path.len() < 3 {
        return Err(Error::Path(format!(
            "need at least 3 points for frames, got {}",
            path.len()
        )));
    }
    if let Some(i) = path.windows(2).position(|w| w[0] == w[1]) {
        return Err(Error::Path(format!("repeated point at index {i}")));
    }
    let w = window.max(1);
    let n = path.len();
    let tangents: Vec<Vec3<T>> = (0..n)
        .map(|i| {
            let a = path[i.saturating_sub(w)];
            let b = path[(i + w).min(n - 1)];
            vec3::normalize(vec3::sub(b, a)).ok_or_else(|| Error::Path(format!("degenerate tangent at {i}")))
        })
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(n);
    let mut normal = any_perpendicular(tangents[0]);
    for (i, &t) in tangents.iter().enumerate() {
        if i > 0 {
            normal = vec3::normalize(vec3::sub(normal, vec3::scale(t, vec3::dot(normal, t))))
                .unwrap_or_else(|| any_perpendicular(t));
        }
        frames.push(Frame {
            tangent: t,
            normal,
            binormal: vec3::cross(t, normal),
        });
    }
    Ok(frames)
}

/// Curvature `1/R` of the circle through three points; 0 when collinear.
pub fn circumcurvature<T: Real>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> T {
    let (u, v) = (vec3::sub(a, b), vec3::sub(c, b));
    let denom = vec3::norm(u) * vec3::norm(v) * vec3::dist(a, c);
    if !(denom > T::zero()) {
        return T::zero();
    }
    T::lit(2.0) * vec3::norm(vec3::cross(u, v)) / denom
}

/// Closed planar contour from a mesh–plane intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour<T = f64> {
    pub points: Vec<Vec3<T>>,
    /// Coordinates in the `(normal, binormal)` plane basis about the centre.
    pub planar: Vec<[T; 2]>,
    pub area: T,
}

fn shoelace<T: Real>(p: &[[T; 2]]) -> T {
    let n = p.len();
    let s: T = (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum();
    s * T::lit(0.5)
}

pub fn point_in_polygon<T: Real>(q: [T; 2], poly: &[[T; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > q[1]) != (b[1] > q[1]) {
            let x = a[0] + (q[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if q[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segment_distance<T: Real>(q: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let aq = [q[0] - a[0], q[1] - a[1]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if l2 > T::zero() {
        ((aq[0] * ab[0] + aq[1] * ab[1]) / l2).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    let d = [aq[0] - t * ab[0], aq[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn polygon_distance<T: Real>(q: [T; 2], poly: &[[T; 2]]) -> T {
    (0..poly.len())
        .map(|i| segment_distance(q, poly[i], poly[(i + 1) % poly.len()]))
        .fold(T::infinity(), T::min)
}

/// Intersect `mesh` with the plane through `center` orthogonal to `frame`'s
/// tangent and return the loop enclosing the centre (innermost if nested,
/// nearest if none encloses it).
pub fn cross_section<T: Real>(mesh: &TriMesh<T>, center: Vec3<T>, frame: &Frame<T>) -> Result<Contour<T>> {
    let s: Vec<T> = mesh
        .vertices
        .iter()
        .map(|&v| vec3::dot(frame.tangent, vec3::sub(v, center)))
        .collect();
    let pos = |i: usize| s[i] >= T::zero();
    let mut point_of: HashMap<(usize, usize), Vec3<T>> = HashMap::new();
    let mut adj: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    for t in &mesh.triangles {
        let mut hits = Vec::with_capacity(2);
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if pos(a) != pos(b) {
                let key = (a.min(b), a.max(b));
                point_of.entry(key).or_insert_with(|| {
                    let u = s[a] / (s[a] - s[b]);
                    vec3::add(
                        mesh.vertices[a],
                        vec3::scale(vec3::sub(mesh.vertices[b], mesh.vertices[a]), u),
                    )
                });
                hits.push(key);
            }
        }
        if hits.len() == 2 {
            adj.entry(hits[0]).or_default().push(hits[1]);
            adj.entry(hits[1]).or_default().push(hits[0]);
        }
    }
    if adj.is_empty() {
        return Err(Error::EmptySection);
    }
    if let Some((k, _)) = adj.iter().find(|(_, v)| v.len() != 2) {
        return Err(Error::Topology(format!("section polyline is open at mesh edge {k:?}")));
    }
    let mut keys: Vec<(usize, usize)> = adj.keys().copied().collect();
    keys.sort_unstable();
    let mut visited: HashMap<(usize, usize), bool> = HashMap::new();
    let mut loops = Vec::new();
    for &start in &keys {
        if visited.contains_key(&start) {
            continue;
        }
        let mut lp = vec![start];
        visited.insert(start, true);
        let (mut prev, mut cur) = (start, adj[&start][0]);
        while cur != start {
            if visited.insert(cur, true).is_some() {
                return Err(Error::Topology("section loops intersect".into()));
            }
            lp.push(cur);
            let nb = &adj[&cur];
            let next = if nb[0] == prev { nb[1] } else { nb[0] };
            prev = cur;
            cur = next;
        }
        loops.push(lp);
    }
    let to_plane = |p: Vec3<T>| {
        let d = vec3::sub(p, center);
        [vec3::dot(d, frame.normal), vec3::dot(d, frame.binormal)]
    };
    let contours: Vec<Contour<T>> = loops
        .into_iter()
        .map(|lp| {
            let points: Vec<Vec3<T>> = lp.iter().map(|k| point_of[k]).collect();
            let planar: Vec<[T; 2]> = points.iter().map(|&p| to_plane(p)).collect();
            let area = shoelace(&planar).abs();
            Contour { points, planar, area }
        })
        .collect();
    let origin = [T::zero(), T::zero()];
    let enclosing = contours
        .iter()
        .filter(|c| c.planar.len() >= 3 && point_in_polygon(origin, &c.planar))
        .min_by(|a, b| a.area.partial_cmp(&b.area).unwrap_or(std::cmp::Ordering::Equal));
    let chosen = match enclosing {
        Some(c) => c,
        None => contours
            .iter()
            .min_by(|a, b| {
                polygon_distance(origin, &a.planar)
                    .partial_cmp(&polygon_distance(origin, &b.planar))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .expect("at least one loop"),
    };
    Ok(chosen.clone())
}

/// Area centroid of a simple polygon; vertex mean if the area vanishes.
pub fn polygon_centroid<T: Real>(p: &[[T; 2]]) -> [T; 2] {
    let n = p.len();
    let (mut a, mut cx, mut cy) = (T::zero(), T::zero(), T::zero());
    for i in 0..n {
        let (u, v) = (p[i], p[(i + 1) % n]);
        let cr = u[0] * v[1] - v[0] * u[1];
        a += cr;
        cx += (u[0] + v[0]) * cr;
        cy += (u[1] + v[1]) * cr;
    }
    if a.abs() > T::epsilon() {
        let six_a = T::lit(3.0) * a;
        [cx / six_a, cy / six_a]
    } else {
        let k = T::from_usize_lossy(n.max(1));
        [
            p.iter().map(|q| q[0]).sum::<T>() / k,
            p.iter().map(|q| q[1]).sum::<T>() / k,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusRecord<T = f64> {
    pub r_inscribed: T,
    pub r_equiv_area: T,
    pub d_max_chord: T,
}

/// Radii of a closed planar contour about `center` (plane coordinates).
pub fn radius_measures<T: Real>(contour: &[[T; 2]], center: [T; 2]) -> Result<RadiusRecord<T>> {
    if contour.len() < 3 {
        return Err(Error::Geometry(format!("contour has only {} points", contour.len())));
    }
    if !point_in_polygon(center, contour) {
        return Err(Error::Geometry("centre lies outside the contour".into()));
    }
    let area = shoelace(contour).abs();
    let mut chord = T::zero();
    for i in 0..contour.len() {
        for j in i + 1..contour.len() {
            let d = [contour[i][0] - contour[j][0], contour[i][1] - contour[j][1]];
            chord = chord.max((d[0] * d[0] + d[1] * d[1]).sqrt());
        }
    }
    Ok(RadiusRecord {
        r_inscribed: polygon_distance(center, contour),
        r_equiv_area: (area / T::PI()).sqrt(),
        d_max_chord: chord,
    })
}
