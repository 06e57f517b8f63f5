//! Anatomy-aware masked Dice / BCE losses with closed-form gradients, and
//! the unmasked Dice baseline.
//!
//! With `I = Σ aᵢpᵢyᵢ`, `S = Σ aᵢpᵢ + Σ aᵢyᵢ`, `M = Σ aᵢ`:
//!
//! ```text
//! L_dice = 1 − (2I + ε) / (S + ε)
//! L_bce  = Σ aᵢ·bce(p̃ᵢ, yᵢ) / (M + ε),   p̃ = clamp(p, δ, 1 − δ)
//! L      = w·L_bce + (1 − w)·L_dice
//!
//! ∂L_dice/∂pᵢ = aᵢ·((2I + ε) − 2yᵢ(S + ε)) / (S + ε)²
//! ∂L_bce/∂pᵢ  = aᵢ·((1 − yᵢ)/(1 − p̃ᵢ) − yᵢ/p̃ᵢ) / (M + ε)   (0 where clamped)
//! ```
//!
//! Pixels with `aᵢ = 0` contribute exact zeros to every sum, so the losses
//! and gradients do not depend on `pᵢ` there, bit for bit.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Flattened `(P, Y, A)` triple for one `H x W` slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTensor<T = f64> {
    p: Vec<T>,
    y: Vec<T>,
    a: Vec<T>,
    height: usize,
    width: usize,
}

impl<T: Real> SliceTensor<T> {
    pub fn new(p: Vec<T>, y: Vec<T>, a: Vec<T>, height: usize, width: usize) -> Result<Self> {
        let n = height * width;
        if p.len() != n || y.len() != n || a.len() != n {
            return Err(Error::Shape(format!(
                "P/Y/A lengths {}/{}/{} do not all equal H*W = {n}",
                p.len(),
                y.len(),
                a.len()
            )));
        }
        check_predictions(&p)?;
        let binary = |v: &[T], name: &str| {
            if v.iter().all(|&x| x == T::zero() || x == T::one()) {
                Ok(())
            } else {
                Err(Error::NumericInput(format!("{name} must be binary")))
            }
        };
        binary(&y, "Y")?;
        binary(&a, "A")?;
        Ok(Self { p, y, a, height, width })
    }

    /// Flat tensor with `H = 1`.
    pub fn flat(p: Vec<T>, y: Vec<T>, a: Vec<T>) -> Result<Self> {
        let n = p.len();
        Self::new(p, y, a, 1, n)
    }

    pub fn p(&self) -> &[T] {
        &self.p
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn a(&self) -> &[T] {
        &self.a
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Replace the predictions, keeping `Y` and `A`.
    pub fn with_p(&self, p: Vec<T>) -> Result<Self> {
        Self::new(p, self.y.clone(), self.a.clone(), self.height, self.width)
    }

    /// Same tensor with `A ≡ 1`.
    pub fn unmasked(&self) -> Self {
        Self {
            a: vec![T::one(); self.a.len()],
            ..self.clone()
        }
    }
}

fn check_predictions<T: Real>(p: &[T]) -> Result<()> {
    if let Some(i) = p.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("prediction {i} is {}", p[i])));
    }
    if let Some(i) = p.iter().position(|&v| v < T::zero() || v > T::one()) {
        return Err(Error::NumericInput(format!("prediction {i} = {} outside [0, 1]", p[i])));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLossConfig {
    /// BCE weight `w` in the combined loss.
    pub w: f64,
    /// Smoothing `ε`, shared by the Dice and BCE terms.
    pub epsilon: f64,
    /// Probability clamp `δ` applied before the BCE logarithms.
    pub clamp: f64,
    /// Treat `A ≡ 1`.
    pub baseline_mode: bool,
}

impl Default for MaskedLossConfig {
    fn default() -> Self {
        Self {
            w: 0.5,
            epsilon: 1e-6,
            clamp: 1e-7,
            baseline_mode: false,
        }
    }
}

impl MaskedLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!("loss weight w = {} outside [0, 1]", self.w)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon = {} must be > 0", self.epsilon)));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::Config(format!("clamp = {} must lie in (0, 0.5)", self.clamp)));
        }
        Ok(())
    }

    /// Dice-only, unmasked: the conventional baseline objective.
    pub fn baseline_dice() -> Self {
        Self {
            w: 0.0,
            baseline_mode: true,
            ..Self::default()
        }
    }
}

struct DiceSums<T> {
    inter: T,
    denom: T,
}

fn dice_sums<T: Real>(p: &[T], y: &[T], a: Option<&[T]>) -> DiceSums<T> {
    let (mut i, mut sp, mut sy) = (T::zero(), T::zero(), T::zero());
    match a {
        Some(a) => {
            for k in 0..p.len() {
                let ap = a[k] * p[k];
                i += ap * y[k];
                sp += ap;
                sy += a[k] * y[k];
            }
        }
        None => {
            for k in 0..p.len() {
                i += p[k] * y[k];
                sp += p[k];
                sy += y[k];
            }
        }
    }
    DiceSums {
        inter: i,
        denom: sp + sy,
    }
}

fn dice_from_sums<T: Real>(s: &DiceSums<T>, eps: T) -> T {
    T::one() - (T::lit(2.0) * s.inter + eps) / (s.denom + eps)
}

#[inline]
fn bce_term<T: Real>(p: T, y: T, delta: T) -> T {
    let p = p.max(delta).min(T::one() - delta);
    -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
}

fn effective_a<'a, T: Real>(t: &'a SliceTensor<T>, cfg: &MaskedLossConfig) -> Option<&'a [T]> {
    if cfg.baseline_mode {
        None
    } else {
        Some(&t.a)
    }
}

/// `1 − (2·ΣAPY + ε) / (ΣAP + ΣAY + ε)`.
pub fn masked_dice_loss<T: Real>(t: &SliceTensor<T>, cfg: &MaskedLossConfig) -> Result<T> {
    check_predictions(&t.p)?;
    let s = dice_sums(&t.p, &t.y, effective_a(t, cfg));
    Ok(dice_from_sums(&s, T::lit(cfg.epsilon)))
}

/// `ΣA·bce(P, Y) / (ΣA + ε)`.
pub fn masked_bce_loss<T: Real>(t: &SliceTensor<T>, cfg: &MaskedLossConfig) -> Result<T> {
    check_predictions(&t.p)?;
    let delta = T::lit(cfg.clamp);
    let eps = T::lit(cfg.epsilon);
    let (num, m) = match effective_a(t, cfg) {
        Some(a) => {
            let mut num = T::zero();
            let mut m = T::zero();
            for k in 0..t.p.len() {
                num += a[k] * bce_term(t.p[k], t.y[k], delta);
                m += a[k];
            }
            (num, m)
        }
        None => {
            let num = t.p.iter().zip(&t.y).map(|(&p, &y)| bce_term(p, y, delta)).sum();
            (num, T::from_usize_lossy(t.p.len()))
        }
    };
    Ok(num / (m + eps))
}

/// `w·L_bce + (1 − w)·L_dice`.
pub fn combined_loss<T: Real>(t: &SliceTensor<T>, cfg: &MaskedLossConfig) -> Result<T> {
    let w = T::lit(cfg.w);
    if cfg.w == 1.0 {
        return masked_bce_loss(t, cfg);
    }
    if cfg.w == 0.0 {
        return masked_dice_loss(t, cfg);
    }
    Ok(w * masked_bce_loss(t, cfg)? + (T::one() - w) * masked_dice_loss(t, cfg)?)
}

/// `∂L/∂Pᵢ` of [`combined_loss`].
pub fn combined_loss_grad<T: Real>(t: &SliceTensor<T>, cfg: &MaskedLossConfig) -> Result<Vec<T>> {
    check_predictions(&t.p)?;
    let n = t.p.len();
    let ones;
    let a: &[T] = match effective_a(t, cfg) {
        Some(a) => a,
        None => {
            ones = vec![T::one(); n];
            &ones
        }
    };
    let eps = T::lit(cfg.epsilon);
    let delta = T::lit(cfg.clamp);
    let w = T::lit(cfg.w);
    let two = T::lit(2.0);
    let mut g = vec![T::zero(); n];

    if cfg.w < 1.0 {
        let s = dice_sums(&t.p, &t.y, Some(a));
        let d = s.denom + eps;
        let num = two * s.inter + eps;
        let scale = (T::one() - w) / (d * d);
        for k in 0..n {
            if a[k] != T::zero() {
                g[k] += a[k] * (num - two * t.y[k] * d) * scale;
            }
        }
    }
    if cfg.w > 0.0 {
        let m: T = a.iter().copied().sum();
        let scale = w / (m + eps);
        for k in 0..n {
            if a[k] == T::zero() {
                continue;
            }
            let p = t.p[k];
            if p <= delta || p >= T::one() - delta {
                continue;
            }
            let y = t.y[k];
            g[k] += a[k] * ((T::one() - y) / (T::one() - p) - y / p) * scale;
        }
    }
    Ok(g)
}

/// Dice loss with every pixel contributing equally.
pub fn baseline_dice_loss<T: Real>(t: &SliceTensor<T>, cfg: &MaskedLossConfig) -> Result<T> {
    check_predictions(&t.p)?;
    let s = dice_sums(&t.p, &t.y, None);
    Ok(dice_from_sums(&s, T::lit(cfg.epsilon)))
}

/// Unmasked BCE (`A ≡ 1`), computed without touching `A`.
pub fn unmasked_bce_loss<T: Real>(t: &SliceTensor<T>, cfg: &MaskedLossConfig) -> Result<T> {
    masked_bce_loss(
        t,
        &MaskedLossConfig {
            baseline_mode: true,
            ..*cfg
        },
    )
}

/// Unmasked combined loss (`A ≡ 1`).
pub fn unmasked_combined_loss<T: Real>(t: &SliceTensor<T>, cfg: &MaskedLossConfig) -> Result<T> {
    combined_loss(
        t,
        &MaskedLossConfig {
            baseline_mode: true,
            ..*cfg
        },
    )
}

/// Mean of per-slice combined losses.
pub fn batch_loss<T: Real>(batch: &[SliceTensor<T>], cfg: &MaskedLossConfig) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::EmptySet("loss over an empty batch".into()));
    }
    let mut total = T::zero();
    for t in batch {
        total += combined_loss(t, cfg)?;
    }
    Ok(total / T::from_usize_lossy(batch.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-6;

    fn t(p: &[f64], y: &[f64], a: &[f64]) -> SliceTensor {
        SliceTensor::flat(p.to_vec(), y.to_vec(), a.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let cfg = MaskedLossConfig::default();
        let ones = [1.0; 4];
        assert_eq!(masked_dice_loss(&t(&ones, &ones, &ones), &cfg).unwrap(), 0.0);

        let worked = t(&[0.5, 0.5, 0.0, 0.0], &[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0, 1.0, 0.0]);
        let expected = 1.0 - (1.0 + EPS) / (2.0 + EPS);
        assert!((masked_dice_loss(&worked, &cfg).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.5).abs() < 1e-6);

        let excluded = t(&[0.3, 0.9], &[1.0, 0.0], &[0.0, 0.0]);
        assert_eq!(masked_dice_loss(&excluded, &cfg).unwrap(), 0.0);
    }

    #[test]
    #[allow(clippy::approx_constant)] // six-digit reference value, not an approximation of LN_2
    fn bce_examples() {
        let cfg = MaskedLossConfig::default();
        let perfect = masked_bce_loss(&t(&[1.0], &[1.0], &[1.0]), &cfg).unwrap();
        let expected = -(1.0f64 - 1e-7).ln() / (1.0 + EPS);
        assert!((perfect - expected).abs() < 1e-18);
        assert!((perfect - 1e-7).abs() < 1e-12);

        let half = masked_bce_loss(&t(&[0.5], &[1.0], &[1.0]), &cfg).unwrap();
        assert!((half - 2f64.ln() / (1.0 + EPS)).abs() < 1e-15);
        assert!((half - 0.693147).abs() < 1e-6);

        assert_eq!(
            masked_bce_loss(&t(&[0.2, 0.7], &[1.0, 0.0], &[0.0, 0.0]), &cfg).unwrap(),
            0.0
        );
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn combined_endpoints_and_mean() {
        let x = t(&[0.5, 0.2, 0.9, 0.4], &[1.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 0.0, 1.0]);
        let mut cfg = MaskedLossConfig {
            w: 1.0,
            ..Default::default()
        };
        assert_eq!(combined_loss(&x, &cfg).unwrap(), masked_bce_loss(&x, &cfg).unwrap());
        cfg.w = 0.0;
        assert_eq!(combined_loss(&x, &cfg).unwrap(), masked_dice_loss(&x, &cfg).unwrap());
        cfg.w = 0.5;
        let mean = 0.5 * masked_bce_loss(&x, &cfg).unwrap() + 0.5 * masked_dice_loss(&x, &cfg).unwrap();
        assert_eq!(combined_loss(&x, &cfg).unwrap(), mean);
        assert!((0.5f64 * 0.693147 + 0.5 * 0.5 - 0.596574).abs() < 1e-6);
    }

    #[test]
    fn baseline_examples() {
        let cfg = MaskedLossConfig::default();
        let x = t(&[0.5, 0.2, 0.9, 0.4], &[1.0, 0.0, 1.0, 1.0], &[1.0; 4]);
        assert_eq!(
            baseline_dice_loss(&x, &cfg).unwrap(),
            masked_dice_loss(&x, &cfg).unwrap()
        );

        let disjoint = baseline_dice_loss(&t(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]), &cfg).unwrap();
        assert!((disjoint - (1.0 - EPS / (2.0 + EPS))).abs() < 1e-15);

        let worked = t(&[0.5, 0.5, 0.0, 0.0], &[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0, 1.0, 0.0]);
        let expected = 1.0 - (1.0 + EPS) / (3.0 + EPS);
        assert!((baseline_dice_loss(&worked, &cfg).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn numeric_errors() {
        assert!(matches!(
            SliceTensor::flat(vec![f64::NAN], vec![1.0], vec![1.0]),
            Err(Error::NumericInput(_))
        ));
        assert!(SliceTensor::flat(vec![0.5], vec![0.5], vec![1.0]).is_err());
        assert!(SliceTensor::flat(vec![0.5, 0.1], vec![1.0], vec![1.0]).is_err());
        assert!(MaskedLossConfig {
            w: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MaskedLossConfig {
            clamp: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn excluded_slice_has_zero_gradient() {
        let x = t(&[0.3, 0.6, 0.9], &[1.0, 0.0, 1.0], &[0.0; 3]);
        let g = combined_loss_grad(&x, &MaskedLossConfig::default()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dice_gradient_pushes_true_positives_up() {
        let cfg = MaskedLossConfig {
            w: 0.0,
            ..Default::default()
        };
        let y = [1.0, 1.0, 0.0, 1.0];
        let x = t(&[0.999, 1.0, 0.0, 1.0], &y, &[1.0; 4]);
        let g = combined_loss_grad(&x, &cfg).unwrap();
        // Central difference sign oracle at the perturbed true positive.
        let h = 1e-6;
        let lp = masked_dice_loss(&x.with_p(vec![0.999 + h, 1.0, 0.0, 1.0]).unwrap(), &cfg).unwrap();
        let lm = masked_dice_loss(&x.with_p(vec![0.999 - h, 1.0, 0.0, 1.0]).unwrap(), &cfg).unwrap();
        assert!((lp - lm) / (2.0 * h) < 0.0);
        assert!(g[0] < 0.0);
    }
}
