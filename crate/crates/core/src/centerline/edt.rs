//! Exact Euclidean distance transform (separable lower-envelope method).

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Volume3D, VolumeKind};

/// Squared distance transform of one line: `out[q] = min_p f[p] + ((q−p)·h)²`.
/// Parabola intersections only choose a candidate; the minimum over it and
/// its envelope neighbours is what gets written, which keeps the result
/// exact under rounding.
fn envelope_1d<T: Real>(f: &[T], h: T, out: &mut [T], v: &mut Vec<usize>, z: &mut Vec<T>) {
    let n = f.len();
    let cost = |q: usize, p: usize| {
        let d = T::from_usize_lossy(q.abs_diff(p)) * h;
        f[p] + d * d
    };
    v.clear();
    z.clear();
    let sq = |i: usize| {
        let x = T::from_usize_lossy(i) * h;
        x * x
    };
    let two = T::lit(2.0);
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(T::neg_infinity());
                break;
            };
            let s = ((f[q] + sq(q)) - (f[p] + sq(p))) / (two * h * h * T::from_usize_lossy(q - p));
            let s = s * h; // physical abscissa
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = T::infinity());
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = T::from_usize_lossy(q) * h;
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let mut best = cost(q, v[k]);
        if k > 0 {
            best = best.min(cost(q, v[k - 1]));
        }
        if k + 1 < v.len() {
            best = best.min(cost(q, v[k + 1]));
        }
        *o = best;
    }
}

/// Squared distances (mm²) to the nearest background voxel centre. Space
/// outside the volume counts as background.
pub fn squared_distance_transform<T: Real>(mask: &Volume3D<T>) -> Result<Vec<T>> {
    if let Some(v) = mask.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::Shape(format!(
            "distance transform needs a binary mask, found {v}"
        )));
    }
    let p = mask.padded(1);
    let [nx, ny, nz] = p.dims();
    let sp = p.spacing();
    let mut g: Vec<T> = p
        .data()
        .iter()
        .map(|&v| if v == T::one() { T::infinity() } else { T::zero() })
        .collect();
    let strides = [1, nx, nx * ny];
    let dims = [nx, ny, nz];
    let (mut line, mut out, mut v, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = dims[axis];
        line.resize(n, T::zero());
        out.resize(n, T::zero());
        for start in 0..g.len() {
            if (start / strides[axis]) % n != 0 {
                continue;
            }
            for i in 0..n {
                line[i] = g[start + i * strides[axis]];
            }
            envelope_1d(&line, sp[axis], &mut out, &mut v, &mut z);
            for i in 0..n {
                g[start + i * strides[axis]] = out[i];
            }
        }
    }
    let [mx, my, mz] = mask.dims();
    let mut res = Vec::with_capacity(mx * my * mz);
    for zz in 0..mz {
        for yy in 0..my {
            for xx in 0..mx {
                res.push(g[(xx + 1) + nx * ((yy + 1) + ny * (zz + 1))]);
            }
        }
    }
    Ok(res)
}

/// Distance (mm) from each voxel centre to the nearest background voxel
/// centre; zero on background.
pub fn distance_transform<T: Real>(mask: &Volume3D<T>) -> Result<Volume3D<T>> {
    let sq = squared_distance_transform(mask)?;
    mask.with_data(sq.into_iter().map(|v| v.sqrt()).collect(), VolumeKind::Intensity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_only() {
        let m = Volume3D::<f64>::filled([4, 3, 2], [1.0; 3], 0.0, VolumeKind::BinaryMask).unwrap();
        assert!(distance_transform(&m).unwrap().data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn single_voxel_is_one_spacing() {
        let mut data = vec![0.0; 27];
        data[13] = 1.0;
        let m = Volume3D::new([3; 3], [0.7, 0.5, 2.0], [0.0; 3], data, VolumeKind::BinaryMask).unwrap();
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.get(1, 1, 1), 0.5);
    }

    #[test]
    fn full_volume_sees_outside_background() {
        let m = Volume3D::<f64>::filled([5, 1, 1], [1.0; 3], 1.0, VolumeKind::BinaryMask).unwrap();
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.data(), &[1.0; 5]);
        let m = Volume3D::<f64>::filled([5, 5, 5], [1.0; 3], 1.0, VolumeKind::BinaryMask).unwrap();
        assert_eq!(distance_transform(&m).unwrap().get(2, 2, 2), 3.0);
    }

    #[test]
    fn rejects_non_binary() {
        let m = Volume3D::<f64>::filled([2, 2, 2], [1.0; 3], 0.3, VolumeKind::Intensity).unwrap();
        assert!(matches!(distance_transform(&m), Err(Error::Shape(_))));
    }
}
