//! Phantom cohort experiment: anatomy-aware vs baseline training on
//! identical patient splits, data and seeds, scored slice-wise on the test
//! patients.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, binarize, slice_metrics, AggregateMetrics, AggregateOptions, SliceMetrics};
use crate::phantom::{generate, split_patients, Partition, Phantom, PhantomSpec};
use crate::priors::{allow_mask_for_slice, build_exclusion_mask, filter_slices_by_aorta, inference_allow_mask};
use crate::scalar::Real;
use crate::unet::train::{masked_prediction, TrainOutcome};
use crate::unet::{train, Dataset, LossMode, Sample, TrainConfig, UNet, UNetConfig};
use crate::volume::{window_normalize, Slice2D};

/// How phantoms become 2D training/evaluation slices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    pub n_patients: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Soft-tissue window in HU.
    pub window_lo: f64,
    pub window_hi: f64,
    /// Square crop side, centred on the volume's in-plane centre.
    pub crop: usize,
    /// Every `stride`-th qualifying axial slice is used.
    pub train_stride: usize,
    pub val_stride: usize,
    pub test_stride: usize,
    /// Minimum aorta voxels for a slice to qualify.
    pub min_aorta_voxels: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_patients: 15,
            n_train: 10,
            n_val: 2,
            n_test: 3,
            window_lo: -150.0,
            window_hi: 600.0,
            crop: 64,
            train_stride: 2,
            val_stride: 4,
            test_stride: 1,
            min_aorta_voxels: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train + self.n_val + self.n_test != self.n_patients {
            return Err(Error::Config(format!(
                "split {}/{}/{} does not sum to {} patients",
                self.n_train, self.n_val, self.n_test, self.n_patients
            )));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Config("every split needs at least one patient".into()));
        }
        if !(self.window_lo < self.window_hi) {
            return Err(Error::Config(format!(
                "window lo {} must be below hi {}",
                self.window_lo, self.window_hi
            )));
        }
        if self.crop == 0 || self.train_stride == 0 || self.val_stride == 0 || self.test_stride == 0 {
            return Err(Error::Config("crop and strides must be >= 1".into()));
        }
        if self.min_aorta_voxels == 0 {
            return Err(Error::Config("min_aorta_voxels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything one comparison needs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompareConfig {
    pub data: DatasetConfig,
    pub net: UNetConfig,
    pub train: TrainConfig,
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.net.validate()?;
        self.train.validate()
    }
}

/// Generated phantoms plus their patient-level split.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub partition: Partition,
    pub phantoms: BTreeMap<u64, Phantom>,
}

/// Patients `1..=n`, generated and split with `seed`.
pub fn build_cohort(cfg: &DatasetConfig, seed: u64) -> Result<Cohort> {
    cfg.validate()?;
    let ids: Vec<u64> = (1..=cfg.n_patients as u64).collect();
    let partition = split_patients(&ids, cfg.n_train, cfg.n_val, cfg.n_test, seed)?;
    let mut phantoms = BTreeMap::new();
    for &id in &ids {
        phantoms.insert(id, generate(&PhantomSpec::patient(id, seed))?);
    }
    Ok(Cohort { partition, phantoms })
}

fn cast_slice<T: Real>(s: &Slice2D<f64>) -> Slice2D<T> {
    Slice2D {
        width: s.width,
        height: s.height,
        spacing: [T::lit(s.spacing[0]), T::lit(s.spacing[1])],
        data: s.data.iter().map(|&v| T::lit(v)).collect(),
    }
}

/// Windowed, cropped axial slices of one phantom that contain aorta.
pub fn patient_samples<T: Real>(
    phantom: &Phantom,
    patient: u64,
    stride: usize,
    cfg: &DatasetConfig,
) -> Result<Vec<Sample<T>>> {
    let image = window_normalize(&phantom.image, cfg.window_lo, cfg.window_hi)?;
    let exclusion = build_exclusion_mask(&phantom.labels);
    let [nx, ny, _] = image.dims();
    let (cx, cy) = ((nx / 2) as isize, (ny / 2) as isize);
    let c = cfg.crop;
    let slices = filter_slices_by_aorta(&phantom.labels, cfg.min_aorta_voxels)?;
    let mut out = Vec::new();
    for &z in slices.iter().step_by(stride) {
        let gt = phantom.gt_mask.extract_slice(z)?;
        let allow = allow_mask_for_slice(&exclusion, z, &gt)?;
        let infer_allow = inference_allow_mask(&exclusion, z)?;
        out.push(Sample {
            id: format!("p{patient:02}_z{z:03}"),
            image: cast_slice(&image.extract_slice(z)?.crop_centered(cx, cy, c, c)),
            gt: cast_slice(&gt.crop_centered(cx, cy, c, c)),
            allow: allow.crop_centered(cx, cy, c, c),
            infer_allow: infer_allow.crop_centered(cx, cy, c, c),
        });
    }
    Ok(out)
}

fn split_samples<T: Real>(cohort: &Cohort, ids: &[u64], stride: usize, cfg: &DatasetConfig) -> Result<Vec<Sample<T>>> {
    let mut out = Vec::new();
    for id in ids {
        let ph = cohort
            .phantoms
            .get(id)
            .ok_or_else(|| Error::Config(format!("patient {id} missing from cohort")))?;
        out.extend(patient_samples(ph, *id, stride, cfg)?);
    }
    Ok(out)
}

/// Training/validation dataset and test samples for one cohort.
pub fn cohort_datasets<T: Real>(cohort: &Cohort, cfg: &DatasetConfig) -> Result<(Dataset<T>, Vec<Sample<T>>)> {
    let p = &cohort.partition;
    let data = Dataset {
        train: split_samples(cohort, &p.train, cfg.train_stride, cfg)?,
        val: split_samples(cohort, &p.val, cfg.val_stride, cfg)?,
    };
    let test = split_samples(cohort, &p.test, cfg.test_stride, cfg)?;
    Ok((data, test))
}

/// Per-slice metrics of `net` on `samples`, scored as `mode` dictates.
pub fn evaluate<T: Real>(
    net: &UNet<T>,
    samples: &[Sample<T>],
    mode: LossMode,
    threshold: f64,
) -> Result<Vec<(String, SliceMetrics)>> {
    let mut rows = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(8) {
        let imgs: Vec<&Slice2D<T>> = chunk.iter().map(|s| &s.image).collect();
        for (s, p) in chunk.iter().zip(net.forward_batch(&imgs)?) {
            let pred = binarize(&masked_prediction(&p, &s.infer_allow, mode), T::lit(threshold));
            rows.push((s.id.clone(), slice_metrics(&pred, &s.gt)?));
        }
    }
    Ok(rows)
}

/// Result of training and testing one loss mode.
#[derive(Debug, Clone)]
pub struct ModeRun<T = f64> {
    pub mode: LossMode,
    pub outcome: TrainOutcome<T>,
    pub per_slice: Vec<(String, SliceMetrics)>,
    pub aggregate: AggregateMetrics,
    /// Same network scored on raw predictions (no allow mask).
    pub aggregate_raw: AggregateMetrics,
}

#[derive(Debug, Clone)]
pub struct CompareReport<T = f64> {
    pub seed: u64,
    pub partition: Partition,
    pub runs: Vec<ModeRun<T>>,
}

/// Train both modes on the same cohort and score them on the test split.
pub fn run_compare<T: Real>(cfg: &CompareConfig, seed: u64) -> Result<CompareReport<T>> {
    cfg.validate()?;
    let cohort = build_cohort(&cfg.data, seed)?;
    let (data, test) = cohort_datasets::<T>(&cohort, &cfg.data)?;
    let mut runs = Vec::new();
    for mode in [LossMode::AnatomyAware, LossMode::Baseline] {
        let tcfg = TrainConfig {
            mode,
            seed,
            ..cfg.train
        };
        let ncfg = UNetConfig { seed, ..cfg.net };
        let outcome = train(ncfg, &tcfg, &data)?;
        runs.push(score_run(mode, outcome, &test, tcfg.threshold)?);
    }
    Ok(CompareReport {
        seed,
        partition: cohort.partition,
        runs,
    })
}

/// Score a trained network on `test` samples.
pub fn score_run<T: Real>(
    mode: LossMode,
    outcome: TrainOutcome<T>,
    test: &[Sample<T>],
    threshold: f64,
) -> Result<ModeRun<T>> {
    let opts = AggregateOptions::default();
    let per_slice = evaluate(&outcome.best, test, mode, threshold)?;
    let metrics: Vec<SliceMetrics> = per_slice.iter().map(|r| r.1).collect();
    let agg = aggregate(&metrics, opts)?;
    let raw: Vec<SliceMetrics> = evaluate(&outcome.best, test, LossMode::Baseline, threshold)?
        .into_iter()
        .map(|r| r.1)
        .collect();
    Ok(ModeRun {
        mode,
        outcome,
        per_slice,
        aggregate: agg,
        aggregate_raw: aggregate(&raw, opts)?,
    })
}

fn ids(v: &[u64]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

impl<T> CompareReport<T> {
    pub fn mode(&self, mode: LossMode) -> Option<&ModeRun<T>> {
        self.runs.iter().find(|r| r.mode == mode)
    }

    /// Side-by-side aggregate metrics, one row per loss mode.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(
            "mode,seed,train_ids,val_ids,test_ids,n_slices,mean_dice,std_dice,precision,recall,raw_mean_dice,best_epoch,epochs_run\n",
        );
        let p = &self.partition;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in &self.runs {
            let a = &r.aggregate;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.6},{},{},{:.6},{},{}",
                r.mode.name(),
                self.seed,
                ids(&p.train),
                ids(&p.val),
                ids(&p.test),
                a.n_slices,
                a.mean_dice,
                a.std_dice,
                opt(a.precision),
                opt(a.recall),
                r.aggregate_raw.mean_dice,
                r.outcome.best_epoch,
                r.outcome.history.len()
            );
        }
        s
    }

    /// Per-slice metrics of every mode.
    pub fn per_slice_csv(&self) -> String {
        let mut s = String::from("mode,slice,dice,precision,recall,tp,fp,fn,tn\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in &self.runs {
            for (id, m) in &r.per_slice {
                let c = m.counts;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    r.mode.name(),
                    id,
                    opt(m.dice),
                    opt(m.precision),
                    opt(m.recall),
                    c.tp,
                    c.fp,
                    c.fn_,
                    c.tn
                );
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let p = &self.partition;
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "train patients: {}", ids(&p.train));
        let _ = writeln!(s, "val patients:   {}", ids(&p.val));
        let _ = writeln!(s, "test patients:  {}", ids(&p.test));
        let _ = writeln!(
            s,
            "{:<14} {:<16} {:>9} {:>9}",
            "model", "mean dice", "precision", "recall"
        );
        for r in &self.runs {
            let a = &r.aggregate;
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
            let _ = writeln!(
                s,
                "{:<14} {:<16} {:>9} {:>9}",
                r.mode.name(),
                a.dice_summary(),
                f(a.precision),
                f(a.recall)
            );
        }
        if let (Some(a), Some(b)) = (self.mode(LossMode::AnatomyAware), self.mode(LossMode::Baseline)) {
            let _ = writeln!(
                s,
                "anatomy-aware without inference mask: {}",
                a.aggregate_raw.dice_summary()
            );
            let _ = writeln!(
                s,
                "difference (anatomy-aware - baseline): {:+.3}",
                a.aggregate.mean_dice - b.aggregate.mean_dice
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            n_patients: 3,
            n_train: 1,
            n_val: 1,
            n_test: 1,
            train_stride: 8,
            val_stride: 8,
            test_stride: 8,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn split_sizes_must_add_up() {
        let cfg = DatasetConfig {
            n_train: 9,
            ..DatasetConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn samples_are_cropped_and_carry_consistent_masks() {
        let cohort = build_cohort(&small(), 4).unwrap();
        let (data, test) = cohort_datasets::<f64>(&cohort, &small()).unwrap();
        assert!(!data.train.is_empty() && !data.val.is_empty() && !test.is_empty());
        for s in data.train.iter().chain(&test) {
            assert_eq!((s.image.width, s.image.height), (64, 64));
            assert!(s.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(s.gt.data.contains(&1.0));
            for i in 0..s.gt.data.len() {
                if s.gt.data[i] == 1.0 {
                    assert_eq!(s.allow.data[i], 1);
                }
                assert!(s.allow.data[i] >= s.infer_allow.data[i]);
            }
        }
        // Distractor organs must actually appear in the crops.
        assert!(data.train.iter().any(|s| s.infer_allow.count_allowed() < 64 * 64));
    }

    #[test]
    fn cohort_is_reproducible() {
        let a = build_cohort(&small(), 9).unwrap();
        let b = build_cohort(&small(), 9).unwrap();
        assert_eq!(a.partition, b.partition);
        assert_eq!(a.phantoms[&2].image, b.phantoms[&2].image);
    }
}
