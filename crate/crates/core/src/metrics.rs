//! Slice-wise Dice / precision / recall and their aggregation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::Slice2D;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn dice(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn gt_positive(&self) -> u64 {
        self.tp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// 1 iff `p > threshold`.
pub fn binarize<T: Real>(prob: &Slice2D<T>, threshold: T) -> Slice2D<T> {
    let data = prob
        .data
        .iter()
        .map(|&p| if p > threshold { T::one() } else { T::zero() })
        .collect();
    Slice2D { data, ..prob.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceMetrics {
    pub dice: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub counts: ConfusionCounts,
}

impl SliceMetrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        Self {
            dice: counts.dice(),
            precision: counts.precision(),
            recall: counts.recall(),
            counts,
        }
    }
}

pub fn confusion<T: Real>(pred: &Slice2D<T>, gt: &Slice2D<T>) -> Result<ConfusionCounts> {
    if !pred.same_shape(gt) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        for v in [p, g] {
            if v != T::zero() && v != T::one() {
                return Err(Error::Shape(format!("non-binary value {v} in a mask")));
            }
        }
        match (p == T::one(), g == T::one()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn slice_metrics<T: Real>(pred: &Slice2D<T>, gt: &Slice2D<T>) -> Result<SliceMetrics> {
    Ok(SliceMetrics::from_counts(confusion(pred, gt)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AggregateOptions {
    pub std: StdKind,
    /// Average per-slice precision/recall instead of pooling counts.
    pub macro_average: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateMetrics {
    pub mean_dice: f64,
    pub std_dice: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub n_slices: usize,
}

impl AggregateMetrics {
    /// `0.914 ± 0.033`
    pub fn dice_summary(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean_dice, self.std_dice)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}, {}, {}",
            self.dice_summary(),
            fmt_opt(self.precision),
            fmt_opt(self.recall)
        )
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

/// Aggregate over slices whose ground truth is nonempty. Such slices always
/// have a defined Dice (an empty prediction scores 0).
pub fn aggregate(per_slice: &[SliceMetrics], opts: AggregateOptions) -> Result<AggregateMetrics> {
    let kept: Vec<&SliceMetrics> = per_slice.iter().filter(|m| m.counts.gt_positive() > 0).collect();
    if kept.is_empty() {
        return Err(Error::EmptySet("no slices with nonempty ground truth".into()));
    }
    let n = kept.len() as f64;
    let dice: Vec<f64> = kept.iter().map(|m| m.dice.unwrap_or(0.0)).collect();
    let mean = dice.iter().sum::<f64>() / n;
    let ss: f64 = dice.iter().map(|d| (d - mean).powi(2)).sum();
    let std = match opts.std {
        StdKind::Population => (ss / n).sqrt(),
        StdKind::Sample if kept.len() > 1 => (ss / (n - 1.0)).sqrt(),
        StdKind::Sample => 0.0,
    };
    let (precision, recall) = if opts.macro_average {
        let avg = |f: fn(&SliceMetrics) -> Option<f64>| {
            let v: Vec<f64> = kept.iter().filter_map(|m| f(m)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        (avg(|m| m.precision), avg(|m| m.recall))
    } else {
        let pooled = kept.iter().fold(ConfusionCounts::default(), |a, m| a + m.counts);
        (pooled.precision(), pooled.recall())
    };
    Ok(AggregateMetrics {
        mean_dice: mean,
        std_dice: std,
        precision,
        recall,
        n_slices: kept.len(),
    })
}

/// Per-slice rows as CSV: `slice,dice,precision,recall,tp,fp,fn,tn`.
pub fn per_slice_csv(rows: &[(String, SliceMetrics)]) -> String {
    let mut s = String::from("slice,dice,precision,recall,tp,fp,fn,tn\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    for (id, m) in rows {
        let c = m.counts;
        let _ = writeln!(
            s,
            "{id},{},{},{},{},{},{},{}",
            cell(m.dice),
            cell(m.precision),
            cell(m.recall),
            c.tp,
            c.fp,
            c.fn_,
            c.tn
        );
    }
    s
}
