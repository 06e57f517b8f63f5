use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::scalar::vec3;
use crate::scalar::Real;

pub fn write_obj<T: Real>(mesh: &TriMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v[0].as_f64(), v[1].as_f64(), v[2].as_f64());
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_obj<T: Real>(path: impl AsRef<Path>) -> Result<TriMesh<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let bad = || Error::Format(format!("{}:{}: malformed OBJ record", path.display(), n + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.map(|t| t.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                if c.len() < 3 {
                    return Err(bad());
                }
                vertices.push([T::lit(c[0]), T::lit(c[1]), T::lit(c[2])]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|i| i.parse::<usize>().ok())
                            .filter(|&i| i > 0)
                            .map(|i| i - 1)
                            .ok_or_else(bad)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad());
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

/// Binary little-endian STL.
pub fn write_stl<T: Real>(mesh: &TriMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(84 + 50 * mesh.triangles.len());
    let mut header = [0u8; 80];
    let tag = b"anatomask binary STL";
    header[..tag.len()].copy_from_slice(tag);
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| mesh.vertices[i].map(|x| x.as_f64()));
        let nrm = vec3::normalize(vec3::cross(vec3::sub(b, a), vec3::sub(c, a))).unwrap_or([0.0; 3]);
        for v in [nrm, a, b, c] {
            for x in v {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        buf.extend_from_slice(&0u16.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads binary STL, welding vertices with identical coordinates.
pub fn read_stl<T: Real>(path: impl AsRef<Path>) -> Result<TriMesh<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 84 {
        return Err(Error::Format(format!(
            "{}: STL shorter than its header",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() < 84 + 50 * count {
        return Err(Error::Format(format!(
            "{}: STL declares {count} triangles but is truncated",
            path.display()
        )));
    }
    let f = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let mut ids: HashMap<[u32; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(count);
    for i in 0..count {
        let rec = 84 + 50 * i;
        let tri = [0, 1, 2].map(|k| {
            let p = [0, 1, 2].map(|c| f(rec + 12 + 12 * k + 4 * c));
            *ids.entry(p.map(f32::to_bits)).or_insert_with(|| {
                vertices.push(p.map(|x| T::lit(x as f64)));
                vertices.len() - 1
            })
        });
        triangles.push(tri);
    }
    TriMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::super::test_shapes::unit_cube;
    use super::*;

    #[test]
    fn obj_and_stl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = unit_cube();
        write_obj(&c, dir.path().join("c.obj")).unwrap();
        assert_eq!(read_obj::<f64>(dir.path().join("c.obj")).unwrap(), c);
        write_stl(&c, dir.path().join("c.stl")).unwrap();
        let bytes = fs::read(dir.path().join("c.stl")).unwrap();
        assert_eq!(bytes.len(), 84 + 50 * 12);
        let back: TriMesh = read_stl(dir.path().join("c.stl")).unwrap();
        assert_eq!(back.triangles.len(), 12);
        assert_eq!(back.vertices.len(), 8);
        assert!(back.is_watertight());
        assert!((back.signed_volume() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncated_stl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.stl");
        let mut b = vec![0u8; 84];
        b[80] = 2;
        fs::write(&p, b).unwrap();
        assert!(matches!(read_stl::<f64>(&p), Err(Error::Format(_))));
    }
}
