//! Paired augmentation: one random spatial transform applied identically
//! to image, ground truth and allow mask, plus image-only intensity jitter
//! and Gaussian noise.
//!
//! Output pixel `q` samples the inputs at
//! `c + R(−θ)·(q' − c − shift)/s + elastic(q')`, where `q'` is `q` after the
//! optional flips. The image is sampled bilinearly (edge-clamped), masks by
//! nearest neighbour; ground truth outside the frame is 0, allow is 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::priors::AllowMask;
use crate::scalar::Real;
use crate::volume::Slice2D;

/// Sampling ranges for random augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    pub enabled: bool,
    pub rotation_deg: f64,
    pub flip_prob: f64,
    pub shift_px: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Side of the coarse random displacement grid.
    pub elastic_grid: usize,
    pub elastic_max_px: f64,
    /// Multiplicative intensity jitter `1 ± intensity_jitter`. The ±10%
    /// default is a guess; the source gives no magnitude.
    pub intensity_jitter: f64,
    /// Noise standard deviation is drawn from `[0, noise_sigma_max]`.
    pub noise_sigma_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            enabled: true,
            rotation_deg: 10.0,
            flip_prob: 0.5,
            shift_px: 10.0,
            scale_min: 0.9,
            scale_max: 1.1,
            elastic_grid: 4,
            elastic_max_px: 5.0,
            intensity_jitter: 0.1,
            noise_sigma_max: 0.02,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rotation_deg >= 0.0
            && (0.0..=1.0).contains(&self.flip_prob)
            && self.shift_px >= 0.0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && self.elastic_grid >= 2
            && self.elastic_max_px >= 0.0
            && (0.0..1.0).contains(&self.intensity_jitter)
            && self.noise_sigma_max >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation ranges {self:?}")))
        }
    }

    /// Draw one parameter set.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> AugmentParams {
        if !self.enabled {
            return AugmentParams::identity();
        }
        let g = self.elastic_grid;
        let m = self.elastic_max_px;
        let elastic = if m > 0.0 {
            Some(
                (0..g * g)
                    .map(|_| [rng.gen_range(-m..=m), rng.gen_range(-m..=m)])
                    .collect(),
            )
        } else {
            None
        };
        let r = self.rotation_deg;
        AugmentParams {
            rotation_deg: if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 },
            flip_x: rng.gen_bool(self.flip_prob),
            flip_y: rng.gen_bool(self.flip_prob),
            shift: [0; 2].map(|_| {
                if self.shift_px > 0.0 {
                    rng.gen_range(-self.shift_px..=self.shift_px)
                } else {
                    0.0
                }
            }),
            scale: rng.gen_range(self.scale_min..=self.scale_max),
            elastic_grid: g,
            elastic,
            gain: 1.0 + rng.gen_range(-self.intensity_jitter..=self.intensity_jitter),
            noise_sigma: rng.gen_range(0.0..=self.noise_sigma_max),
            noise_seed: rng.gen(),
        }
    }
}

/// One concrete augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Mirror columns (`x → W−1−x`).
    pub flip_x: bool,
    /// Mirror rows.
    pub flip_y: bool,
    /// Translation in pixels, `[dx, dy]`.
    pub shift: [f64; 2],
    pub scale: f64,
    pub elastic_grid: usize,
    /// Row-major `grid x grid` displacements `[dx, dy]` in pixels.
    pub elastic: Option<Vec<[f64; 2]>>,
    pub gain: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            flip_x: false,
            flip_y: false,
            shift: [0.0, 0.0],
            scale: 1.0,
            elastic_grid: 4,
            elastic: None,
            gain: 1.0,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    fn elastic_at(&self, x: f64, y: f64, w: usize, h: usize) -> [f64; 2] {
        let Some(grid) = &self.elastic else { return [0.0, 0.0] };
        let g = self.elastic_grid;
        let gx = if w > 1 {
            x / (w - 1) as f64 * (g - 1) as f64
        } else {
            0.0
        };
        let gy = if h > 1 {
            y / (h - 1) as f64 * (g - 1) as f64
        } else {
            0.0
        };
        let (i0, j0) = ((gx.floor() as usize).min(g - 2), (gy.floor() as usize).min(g - 2));
        let (fx, fy) = (gx - i0 as f64, gy - j0 as f64);
        let at = |i: usize, j: usize| grid[j * g + i];
        let mut d = [0.0; 2];
        for k in 0..2 {
            d[k] = (1.0 - fy) * ((1.0 - fx) * at(i0, j0)[k] + fx * at(i0 + 1, j0)[k])
                + fy * ((1.0 - fx) * at(i0, j0 + 1)[k] + fx * at(i0 + 1, j0 + 1)[k]);
        }
        d
    }

    /// Source coordinate sampled by output pixel `(x, y)`.
    fn source(&self, x: usize, y: usize, w: usize, h: usize, cos: f64, sin: f64) -> [f64; 2] {
        let qx = if self.flip_x { (w - 1 - x) as f64 } else { x as f64 };
        let qy = if self.flip_y { (h - 1 - y) as f64 } else { y as f64 };
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let dx = (qx - cx - self.shift[0]) / self.scale;
        let dy = (qy - cy - self.shift[1]) / self.scale;
        let e = self.elastic_at(qx, qy, w, h);
        [cx + cos * dx + sin * dy + e[0], cy - sin * dx + cos * dy + e[1]]
    }
}

fn bilinear<T: Real>(s: &Slice2D<T>, x: f64, y: f64) -> T {
    let xm = (s.width - 1) as f64;
    let ym = (s.height - 1) as f64;
    let x = x.clamp(0.0, xm);
    let y = y.clamp(0.0, ym);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(s.width - 1), (y0 + 1).min(s.height - 1));
    let (fx, fy) = (T::lit(x - x0 as f64), T::lit(y - y0 as f64));
    if fx == T::zero() && fy == T::zero() {
        return s.get(x0, y0);
    }
    let top = s.get(x0, y0) * (T::one() - fx) + s.get(x1, y0) * fx;
    let bot = s.get(x0, y1) * (T::one() - fx) + s.get(x1, y1) * fx;
    top * (T::one() - fy) + bot * fy
}

fn nearest(x: f64, y: f64, w: usize, h: usize) -> Option<(usize, usize)> {
    let (rx, ry) = (x.round(), y.round());
    if rx < 0.0 || ry < 0.0 || rx > (w - 1) as f64 || ry > (h - 1) as f64 {
        None
    } else {
        Some((rx as usize, ry as usize))
    }
}

/// Apply `params` to an aligned `(image, gt, allow)` triple.
pub fn augment_pair<T: Real>(
    image: &Slice2D<T>,
    gt: &Slice2D<T>,
    allow: &AllowMask,
    params: &AugmentParams,
) -> Result<(Slice2D<T>, Slice2D<T>, AllowMask)> {
    let (w, h) = (image.width, image.height);
    if gt.width != w || gt.height != h || allow.width != w || allow.height != h {
        return Err(Error::Shape(format!(
            "augmentation inputs differ: image {w}x{h}, gt {}x{}, allow {}x{}",
            gt.width, gt.height, allow.width, allow.height
        )));
    }
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let mut img = Slice2D::zeros(w, h, image.spacing);
    let mut g = Slice2D::zeros(w, h, gt.spacing);
    let mut a = AllowMask::ones(w, h);
    for y in 0..h {
        for x in 0..w {
            let [sx, sy] = params.source(x, y, w, h, cos, sin);
            img.set(x, y, bilinear(image, sx, sy));
            match nearest(sx, sy, w, h) {
                Some((nx, ny)) => {
                    g.set(
                        x,
                        y,
                        if gt.get(nx, ny) > T::zero() {
                            T::one()
                        } else {
                            T::zero()
                        },
                    );
                    a.data[y * w + x] = allow.data[ny * w + nx];
                }
                None => {
                    g.set(x, y, T::zero());
                    a.data[y * w + x] = 1;
                }
            }
        }
    }
    if params.gain != 1.0 {
        let gain = T::lit(params.gain);
        for v in &mut img.data {
            *v *= gain;
        }
    }
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        for v in &mut img.data {
            *v += T::lit(normal.sample(&mut rng));
        }
    }
    Ok((img, g, a))
}
