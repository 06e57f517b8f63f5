//! First-order fast marching on the 6-neighbour stencil and steepest-descent
//! backtracking of the minimal-cost path.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::Volume3D;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedConfig {
    /// Regulariser added to the distance: `F = d^power + epsilon`.
    pub epsilon: f64,
    pub power: f64,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            power: 1.0,
        }
    }
}

/// Speed field `F = d^p + ε` on `d > 0`, zero elsewhere (outside the domain).
pub fn speed_from_distance<T: Real>(dist: &Volume3D<T>, cfg: SpeedConfig) -> Vec<T> {
    let (eps, p) = (T::lit(cfg.epsilon), T::lit(cfg.power));
    dist.data()
        .iter()
        .map(|&d| if d > T::zero() { d.powf(p) + eps } else { T::zero() })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ArrivalField<T = f64> {
    pub dims: [usize; 3],
    pub spacing: [T; 3],
    /// Arrival time; `+∞` where not reached.
    pub time: Vec<T>,
    /// Voxel indices in the order they were frozen.
    pub accepted: Vec<usize>,
}

impl<T: Real> ArrivalField<T> {
    pub fn at(&self, v: [usize; 3]) -> T {
        self.time[v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])]
    }
}

#[derive(PartialEq)]
struct Node(f64, usize);
impl Eq for Node {}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.partial_cmp(&self.0)
            .unwrap_or(Ordering::Equal)
            .then(o.1.cmp(&self.1))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Voxels within this many voxels of the source start from the exact
/// straight-line travel time, which damps the point-source error of the
/// first-order stencil.
pub const EXACT_INIT_RADIUS: usize = 3;

/// Every voxel the segment from `source` to `source + delta` passes near
/// (sampled at 0.1-voxel steps) lies in the domain.
fn line_of_sight(source: [usize; 3], delta: [i64; 3], dims: [usize; 3], fs: &[f64]) -> bool {
    let steps = 10 * delta.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0).max(1);
    (0..=steps).all(|s| {
        let u = s as f64 / steps as f64;
        let c: [usize; 3] = std::array::from_fn(|k| (source[k] as f64 + u * delta[k] as f64).round() as usize);
        c.iter().zip(dims).all(|(&v, d)| v < d) && fs[flat(c, dims)] > 0.0
    })
}

fn coords(i: usize, d: [usize; 3]) -> [usize; 3] {
    [i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1])]
}

fn flat(c: [usize; 3], d: [usize; 3]) -> usize {
    c[0] + d[0] * (c[1] + d[1] * c[2])
}

/// Upwind update: solve Σ_k ((T − a_k)/h_k)² = w² over the axes whose
/// upwind value is finite, adding axes in increasing order of `a_k`. The
/// slowness `w` averages the node's `1/F` with the mean `1/F` of the upwind
/// neighbours in use, so cost is sampled at both ends of each step.
fn solve_local(mut a: Vec<(f64, f64, f64)>, f: f64) -> f64 {
    a.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal));
    let mut t = f64::INFINITY;
    let (mut sa, mut sb, mut sc) = (0.0, 0.0, 0.0);
    let mut slow_up = 0.0;
    for (k, &(ak, hk, fk)) in a.iter().enumerate() {
        let w = 1.0 / (hk * hk);
        sa += w;
        sb += -2.0 * ak * w;
        sc += ak * ak * w;
        slow_up += 1.0 / fk;
        let slow = 0.5 * (1.0 / f + slow_up / (k + 1) as f64);
        let c = sc - slow * slow;
        let disc = sb * sb - 4.0 * sa * c;
        if disc < 0.0 {
            break;
        }
        let cand = (-sb + disc.sqrt()) / (2.0 * sa);
        t = cand;
        if !(k + 1 < a.len() && cand > a[k + 1].0) {
            break;
        }
    }
    t
}

/// Solve `|∇T| = 1/F` from `source` over voxels with `speed > 0`.
/// Voxels within [`EXACT_INIT_RADIUS`] start from the straight-line travel
/// time with the mean speed of the two endpoints.
pub fn fast_march_speed<T: Real>(
    dims: [usize; 3],
    spacing: [T; 3],
    speed: &[T],
    source: [usize; 3],
    stop_at: Option<[usize; 3]>,
) -> Result<ArrivalField<T>> {
    let n = dims[0] * dims[1] * dims[2];
    if speed.len() != n {
        return Err(Error::Shape(format!("speed has {} values, grid has {n}", speed.len())));
    }
    if source.iter().zip(dims).any(|(&c, d)| c >= d) {
        return Err(Error::Endpoint(format!("source {source:?} outside grid {dims:?}")));
    }
    let h = spacing.map(|s| s.as_f64());
    let fs: Vec<f64> = speed.iter().map(|s| s.as_f64()).collect();
    let src = flat(source, dims);
    if !(fs[src] > 0.0) {
        return Err(Error::Endpoint(format!("source {source:?} lies outside the domain")));
    }
    let mut time = vec![f64::INFINITY; n];
    let mut frozen = vec![false; n];
    let mut heap = BinaryHeap::new();
    time[src] = 0.0;
    heap.push(Node(0.0, src));
    let r = EXACT_INIT_RADIUS as i64;
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let c = [source[0] as i64 + dx, source[1] as i64 + dy, source[2] as i64 + dz];
                if (dx, dy, dz) == (0, 0, 0) || (0..3).any(|k| c[k] < 0 || c[k] >= dims[k] as i64) {
                    continue;
                }
                if dx * dx + dy * dy + dz * dz > r * r {
                    continue;
                }
                let i = flat(c.map(|v| v as usize), dims);
                if fs[i] > 0.0 && line_of_sight(source, [dx, dy, dz], dims, &fs) {
                    let len =
                        ((dx as f64 * h[0]).powi(2) + (dy as f64 * h[1]).powi(2) + (dz as f64 * h[2]).powi(2)).sqrt();
                    time[i] = len / (0.5 * (fs[i] + fs[src]));
                    heap.push(Node(time[i], i));
                }
            }
        }
    }
    let stop = stop_at.map(|c| flat(c, dims));
    let mut accepted = Vec::new();
    while let Some(Node(t, i)) = heap.pop() {
        if frozen[i] || t > time[i] {
            continue;
        }
        frozen[i] = true;
        accepted.push(i);
        if Some(i) == stop {
            break;
        }
        let c = coords(i, dims);
        for axis in 0..3 {
            for dir in [-1i64, 1] {
                let nc = c[axis] as i64 + dir;
                if nc < 0 || nc >= dims[axis] as i64 {
                    continue;
                }
                let mut cc = c;
                cc[axis] = nc as usize;
                let j = flat(cc, dims);
                if frozen[j] || !(fs[j] > 0.0) {
                    continue;
                }
                let mut up = Vec::with_capacity(3);
                for ax in 0..3 {
                    let mut best = (f64::INFINITY, 0.0);
                    for d2 in [-1i64, 1] {
                        let m = cc[ax] as i64 + d2;
                        if m < 0 || m >= dims[ax] as i64 {
                            continue;
                        }
                        let mut mc = cc;
                        mc[ax] = m as usize;
                        let k = flat(mc, dims);
                        if frozen[k] && time[k] < best.0 {
                            best = (time[k], fs[k]);
                        }
                    }
                    if best.0.is_finite() {
                        up.push((best.0, h[ax], best.1));
                    }
                }
                let cand = solve_local(up, fs[j]);
                if cand < time[j] {
                    time[j] = cand;
                    heap.push(Node(cand, j));
                }
            }
        }
    }
    Ok(ArrivalField {
        dims,
        spacing,
        time: time.into_iter().map(T::lit).collect(),
        accepted,
    })
}

/// Raw backtracked path (index space, outlet → inlet) with the interpolated
/// arrival time at every point.
#[derive(Debug, Clone)]
pub struct Backtrack {
    pub points: Vec<[f64; 3]>,
    pub times: Vec<f64>,
}

struct Interp<'a> {
    dims: [usize; 3],
    t: &'a [f64],
    /// Central-difference gradient at voxel centres.
    grad: Vec<[f64; 3]>,
}

impl<'a> Interp<'a> {
    fn new(dims: [usize; 3], t: &'a [f64], reached: &[bool]) -> Self {
        let mut grad = vec![[0.0; 3]; t.len()];
        for (i, g) in grad.iter_mut().enumerate() {
            if !reached[i] {
                continue;
            }
            let c = coords(i, dims);
            for k in 0..3 {
                let side = |dir: i64| {
                    let m = c[k] as i64 + dir;
                    if m < 0 || m >= dims[k] as i64 {
                        return None;
                    }
                    let mut mc = c;
                    mc[k] = m as usize;
                    let j = flat(mc, dims);
                    reached[j].then(|| t[j])
                };
                g[k] = match (side(-1), side(1)) {
                    (Some(a), Some(b)) => 0.5 * (b - a),
                    (Some(a), None) => t[i] - a,
                    (None, Some(b)) => b - t[i],
                    (None, None) => 0.0,
                };
            }
        }
        Self { dims, t, grad }
    }

    fn cell(&self, p: [f64; 3]) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut fr = [0.0; 3];
        for k in 0..3 {
            let x = p[k].clamp(0.0, (self.dims[k] - 1) as f64);
            let b = (x.floor() as usize).min(self.dims[k].saturating_sub(2));
            base[k] = b;
            fr[k] = if self.dims[k] > 1 { x - b as f64 } else { 0.0 };
        }
        (base, fr)
    }

    /// Trilinear blend of per-voxel values.
    fn blend<V: Copy + Default + std::ops::AddAssign + std::ops::Mul<f64, Output = V>>(
        &self,
        p: [f64; 3],
        f: impl Fn(usize) -> V,
    ) -> V {
        let (base, fr) = self.cell(p);
        let mut acc = V::default();
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { fr[0] } else { 1.0 - fr[0] })
                        * (if dy == 1 { fr[1] } else { 1.0 - fr[1] })
                        * (if dz == 1 { fr[2] } else { 1.0 - fr[2] });
                    let c = [
                        (base[0] + dx).min(self.dims[0] - 1),
                        (base[1] + dy).min(self.dims[1] - 1),
                        (base[2] + dz).min(self.dims[2] - 1),
                    ];
                    acc += f(flat(c, self.dims)) * w;
                }
            }
        }
        acc
    }

    fn value(&self, p: [f64; 3]) -> f64 {
        self.blend(p, |i| self.t[i])
    }

    fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        let g = self.blend(p, |i| G(self.grad[i]));
        g.0
    }
}

#[derive(Clone, Copy, Default)]
struct G([f64; 3]);
impl std::ops::AddAssign for G {
    fn add_assign(&mut self, o: Self) {
        for k in 0..3 {
            self.0[k] += o.0[k];
        }
    }
}
impl std::ops::Mul<f64> for G {
    type Output = G;
    fn mul(self, w: f64) -> G {
        G(self.0.map(|v| v * w))
    }
}

/// Gradient descent along the trilinearly interpolated central-difference
/// gradient of `T` with a 0.25-voxel step, falling back to
/// the lowest-`T` 26-neighbour whenever a gradient step fails to descend.
/// Stops within one voxel of `inlet`, which is appended last.
pub fn backtrack<T: Real>(
    field: &ArrivalField<T>,
    domain: &[bool],
    inlet: [usize; 3],
    outlet: [usize; 3],
) -> Result<Backtrack> {
    let dims = field.dims;
    let finite_max = field
        .time
        .iter()
        .map(|t| t.as_f64())
        .filter(|t| t.is_finite())
        .fold(0.0, f64::max);
    // Unreached voxels act as high walls.
    let t: Vec<f64> = field
        .time
        .iter()
        .map(|&v| {
            let v = v.as_f64();
            if v.is_finite() {
                v
            } else {
                2.0 * finite_max + 1.0
            }
        })
        .collect();
    if !field.at(outlet).is_finite() {
        return Err(Error::Unreachable);
    }
    let reached: Vec<bool> = field.time.iter().map(|v| v.as_f64().is_finite()).collect();
    let interp = Interp::new(dims, &t, &reached);
    let target = inlet.map(|c| c as f64);
    let mut p = outlet.map(|c| c as f64);
    let mut tp = interp.value(p);
    let mut points = vec![p];
    let mut times = vec![tp];
    let near_inlet = |q: [f64; 3]| (0..3).all(|k| (q[k] - target[k]).abs() <= 1.0);
    let in_domain = |q: [f64; 3]| {
        let c: [usize; 3] = std::array::from_fn(|k| q[k].round().clamp(0.0, (dims[k] - 1) as f64) as usize);
        domain[flat(c, dims)]
    };
    let max_steps = 40 * (dims[0] + dims[1] + dims[2]) * 4;
    for _ in 0..max_steps {
        if near_inlet(p) {
            if p != target {
                points.push(target);
                times.push(0.0);
            }
            return Ok(Backtrack { points, times });
        }
        let g = interp.gradient(p);
        let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        let mut next = None;
        if gn > 0.0 && gn.is_finite() {
            let q = [0, 1, 2].map(|k| p[k] - 0.25 * g[k] / gn);
            let tq = interp.value(q);
            if tq < tp && in_domain(q) {
                next = Some((q, tq));
            }
        }
        if next.is_none() {
            let c = p.map(|v| v.round() as i64);
            let mut best: Option<([f64; 3], f64)> = None;
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|k| q[k] < 0 || q[k] >= dims[k] as i64) {
                            continue;
                        }
                        let qu = q.map(|v| v as usize);
                        let i = flat(qu, dims);
                        if !domain[i] || !field.time[i].as_f64().is_finite() {
                            continue;
                        }
                        if t[i] < tp && best.is_none_or(|b| t[i] < b.1) {
                            best = Some((qu.map(|v| v as f64), t[i]));
                        }
                    }
                }
            }
            next = best;
        }
        match next {
            Some((q, tq)) => {
                p = q;
                tp = tq;
                points.push(p);
                times.push(tp);
            }
            None => return Err(Error::Path(format!("backtracking stalled at {p:?}"))),
        }
    }
    Err(Error::Path("backtracking did not reach the inlet".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_solver_one_and_two_axes() {
        assert_eq!(solve_local(vec![(1.0, 1.0, 1.0)], 1.0), 2.0);
        let t = solve_local(vec![(0.0, 1.0, 1.0), (0.0, 1.0, 1.0)], 1.0);
        assert!((t - 0.5f64.sqrt()).abs() < 1e-15);
        // Second axis too far upwind to contribute.
        assert_eq!(solve_local(vec![(0.0, 1.0, 1.0), (5.0, 1.0, 1.0)], 1.0), 1.0);
        // Slowness is the mean of both ends: (1/2 + 1/1)/2 per unit step.
        assert_eq!(solve_local(vec![(0.0, 1.0, 2.0)], 1.0), 0.75);
    }

    #[test]
    fn uniform_line_is_exact() {
        let speed = vec![1.0; 10];
        let f = fast_march_speed([10, 1, 1], [0.5, 1.0, 1.0], &speed, [0, 0, 0], None).unwrap();
        for (i, &t) in f.time.iter().enumerate() {
            assert!((t - 0.5 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn source_outside_domain() {
        let speed = vec![0.0, 1.0];
        assert!(matches!(
            fast_march_speed([2, 1, 1], [1.0; 3], &speed, [0, 0, 0], None),
            Err(Error::Endpoint(_))
        ));
    }
}
