//! Seeded mini-batch training with early stopping on validation Dice.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::MaskedLossConfig;
use crate::metrics::{binarize, confusion, ConfusionCounts};
use crate::priors::AllowMask;
use crate::scalar::Real;
use crate::volume::Slice2D;

use super::adam::{Adam, AdamConfig};
use super::augment::{augment_pair, AugmentRanges};
use super::{UNet, UNetConfig};

/// Which objective drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Masked combined Dice/BCE loss; predictions are multiplied by the
    /// inference allow mask before scoring.
    AnatomyAware,
    /// Plain unmasked Dice loss on raw predictions.
    Baseline,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::AnatomyAware => "anatomy-aware",
            LossMode::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "anatomy-aware" | "anatomy_aware" => Some(LossMode::AnatomyAware),
            "baseline" => Some(LossMode::Baseline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub mode: LossMode,
    /// Loss used in anatomy-aware mode; baseline mode always uses the
    /// unmasked Dice loss with the same `ε`.
    pub loss: MaskedLossConfig,
    pub augment: AugmentRanges,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 3,
            max_epochs: 250,
            patience: 25,
            mode: LossMode::AnatomyAware,
            loss: MaskedLossConfig::default(),
            augment: AugmentRanges::default(),
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1)", self.threshold)));
        }
        Ok(())
    }

    /// The loss configuration actually optimised in this mode.
    pub fn effective_loss(&self) -> MaskedLossConfig {
        match self.mode {
            LossMode::AnatomyAware => self.loss,
            LossMode::Baseline => MaskedLossConfig {
                epsilon: self.loss.epsilon,
                clamp: self.loss.clamp,
                ..MaskedLossConfig::baseline_dice()
            },
        }
    }
}

/// One training or evaluation slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T = f64> {
    pub id: String,
    pub image: Slice2D<T>,
    pub gt: Slice2D<T>,
    /// Training allow mask (ground-truth pixels forced allowed).
    pub allow: AllowMask,
    /// Allow mask available at inference (no ground truth involved).
    pub infer_allow: AllowMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    pub train: Vec<Sample<T>>,
    pub val: Vec<Sample<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T = f64> {
    /// Network from the epoch with the highest validation Dice.
    pub best: UNet<T>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl<T> TrainOutcome<T> {
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_dice\n");
    for r in history {
        let _ = writeln!(s, "{},{:?},{:?}", r.epoch, r.train_loss, r.val_dice);
    }
    s
}

/// Prediction used for scoring in `mode`: `P·A` for anatomy-aware, raw `P`
/// for the baseline.
pub fn masked_prediction<T: Real>(prob: &Slice2D<T>, allow: &AllowMask, mode: LossMode) -> Slice2D<T> {
    match mode {
        LossMode::Baseline => prob.clone(),
        LossMode::AnatomyAware => {
            let mut p = prob.clone();
            for (v, &a) in p.data.iter_mut().zip(&allow.data) {
                if a == 0 {
                    *v = T::zero();
                }
            }
            p
        }
    }
}

/// Mean Dice over samples with nonempty ground truth.
pub fn validation_dice<T: Real>(net: &UNet<T>, samples: &[Sample<T>], mode: LossMode, threshold: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in samples.chunks(8) {
        let imgs: Vec<&Slice2D<T>> = chunk.iter().map(|s| &s.image).collect();
        let probs = net.forward_batch(&imgs)?;
        for (s, p) in chunk.iter().zip(probs) {
            let pred = binarize(&masked_prediction(&p, &s.infer_allow, mode), T::lit(threshold));
            let c: ConfusionCounts = confusion(&pred, &s.gt)?;
            if c.gt_positive() > 0 {
                total += c.dice().unwrap_or(0.0);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptySet("no validation slice contains ground truth".into()));
    }
    Ok(total / n as f64)
}

/// Seed for one sample's augmentation in one epoch.
fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z =
        seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Train with the default validation-Dice evaluator.
pub fn train<T: Real>(net_cfg: UNetConfig, cfg: &TrainConfig, data: &Dataset<T>) -> Result<TrainOutcome<T>> {
    let (mode, thr) = (cfg.mode, cfg.threshold);
    train_with(net_cfg, cfg, data, |net, _| validation_dice(net, &data.val, mode, thr))
}

/// Train with an injected evaluator `(net, epoch) → validation Dice`.
pub fn train_with<T: Real, F>(
    net_cfg: UNetConfig,
    cfg: &TrainConfig,
    data: &Dataset<T>,
    mut evaluate: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(&UNet<T>, usize) -> Result<f64>,
{
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut net = UNet::<T>::new(net_cfg)?;
    let mut opt = Adam::<T>::new(cfg.adam, net.num_params());
    let loss = cfg.effective_loss();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut best: Option<(UNet<T>, usize, f64)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut imgs = Vec::with_capacity(batch.len());
            let mut gts = Vec::with_capacity(batch.len());
            let mut allows = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &data.train[i];
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, i));
                let params = cfg.augment.sample(&mut rng);
                let (img, gt, allow) = augment_pair(&s.image, &s.gt, &s.allow, &params)?;
                imgs.push(img);
                gts.push(gt.data);
                allows.push(allow.as_real::<T>());
            }
            let img_refs: Vec<&Slice2D<T>> = imgs.iter().collect();
            let gt_refs: Vec<&[T]> = gts.iter().map(|g| g.as_slice()).collect();
            let allow_refs: Vec<&[T]> = allows.iter().map(|a| a.as_slice()).collect();
            let (l, grads, cache) = net.loss_and_grad(&img_refs, &gt_refs, &allow_refs, &loss)?;
            net.update_running_stats(&cache);
            opt.step(net.params_mut(), &grads)?;
            loss_sum += l.as_f64();
            batches += 1;
        }
        let val_dice = evaluate(&net, epoch)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_dice,
        });
        let improved = best.as_ref().is_none_or(|b| val_dice > b.2);
        if improved {
            best = Some((net.clone(), epoch, val_dice));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    let (best, best_epoch, best_val_dice) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_dice,
        history,
        stopped_early,
    })
}
