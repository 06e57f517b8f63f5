//! Strict sectioned `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! [train]
//! lr = 1e-4
//! ```
//!
//! Unknown sections or keys are rejected by name; values that do not parse
//! as the key's type are rejected with their line number. Every key has a
//! default, so an empty file is valid. [`ExperimentConfig::to_text`] echoes
//! the complete effective configuration in the same format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::centerline::{CenterlineConfig, ShapeIndex};
use crate::error::{Error, Result};
use crate::experiment::{CompareConfig, DatasetConfig};
use crate::loss::MaskedLossConfig;
use crate::mesh::ReconstructConfig;
use crate::unet::{LossMode, TrainConfig, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub window_lo: f64,
    pub window_hi: f64,
    /// Isotropic target spacing (mm).
    pub target_spacing: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window_lo: -150.0,
            window_hi: 600.0,
            target_spacing: 1.0,
        }
    }
}

/// Which phantom `phantom` generates: the fixed reference spec or a
/// randomised patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhantomChoice {
    /// `0` selects the reference phantom, otherwise a patient id.
    pub patient: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub loss: MaskedLossConfig,
    pub net: UNetConfig,
    pub train: TrainConfig,
    pub data: DatasetConfig,
    pub phantom: PhantomChoice,
    pub mesh: ReconstructConfig,
    pub centerline: CenterlineConfig,
    /// Opt-in shape indices; none are computed unless listed.
    pub shape_indices: Vec<ShapeIndex>,
}

fn type_err(line: usize, key: &str, value: &str, ty: &str) -> Error {
    Error::Config(format!(
        "line {line}: value {value:?} for key '{key}' is not a valid {ty}"
    ))
}

fn f(line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| type_err(line, key, v, "number"))
}

fn u(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| type_err(line, key, v, "non-negative integer"))
}

fn u64_(line: usize, key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| type_err(line, key, v, "non-negative integer"))
}

fn b(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(type_err(line, key, v, "boolean (true/false)")),
    }
}

fn voxel(line: usize, key: &str, v: &str) -> Result<Option<[usize; 3]>> {
    if v == "auto" {
        return Ok(None);
    }
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(type_err(line, key, v, "voxel index 'x y z' or 'auto'"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| type_err(line, key, v, "voxel index 'x y z' or 'auto'"))?;
    }
    Ok(Some(out))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line}: malformed section header {content:?}")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(Error::Config(format!("line {line}: unknown section '[{name}]'")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value', got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if !seen.insert(full.clone()) {
                return Err(Error::Config(format!("line {line}: key '{full}' is set twice")));
            }
            cfg.set(&section, key, value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, section: &str, key: &str, v: &str, line: usize) -> Result<()> {
        match (section, key) {
            ("", "seed") => self.seed = u64_(line, key, v)?,

            ("preprocess", "window_lo") => self.preprocess.window_lo = f(line, key, v)?,
            ("preprocess", "window_hi") => self.preprocess.window_hi = f(line, key, v)?,
            ("preprocess", "target_spacing") => self.preprocess.target_spacing = f(line, key, v)?,

            ("loss", "w") => self.loss.w = f(line, key, v)?,
            ("loss", "epsilon") => self.loss.epsilon = f(line, key, v)?,
            ("loss", "clamp") => self.loss.clamp = f(line, key, v)?,

            ("unet", "levels") => self.net.levels = u(line, key, v)?,
            ("unet", "base_channels") => self.net.base_channels = u(line, key, v)?,
            ("unet", "use_batchnorm") => self.net.use_batchnorm = b(line, key, v)?,

            ("train", "lr") => self.train.adam.lr = f(line, key, v)?,
            ("train", "beta1") => self.train.adam.beta1 = f(line, key, v)?,
            ("train", "beta2") => self.train.adam.beta2 = f(line, key, v)?,
            ("train", "adam_epsilon") => self.train.adam.epsilon = f(line, key, v)?,
            ("train", "batch_size") => self.train.batch_size = u(line, key, v)?,
            ("train", "max_epochs") => self.train.max_epochs = u(line, key, v)?,
            ("train", "patience") => self.train.patience = u(line, key, v)?,
            ("train", "threshold") => self.train.threshold = f(line, key, v)?,
            ("train", "mode") => {
                self.train.mode =
                    LossMode::parse(v).ok_or_else(|| type_err(line, key, v, "loss mode (anatomy-aware/baseline)"))?
            }

            ("augment", "enabled") => self.train.augment.enabled = b(line, key, v)?,
            ("augment", "rotation_deg") => self.train.augment.rotation_deg = f(line, key, v)?,
            ("augment", "flip_prob") => self.train.augment.flip_prob = f(line, key, v)?,
            ("augment", "shift_px") => self.train.augment.shift_px = f(line, key, v)?,
            ("augment", "scale_min") => self.train.augment.scale_min = f(line, key, v)?,
            ("augment", "scale_max") => self.train.augment.scale_max = f(line, key, v)?,
            ("augment", "elastic_grid") => self.train.augment.elastic_grid = u(line, key, v)?,
            ("augment", "elastic_max_px") => self.train.augment.elastic_max_px = f(line, key, v)?,
            ("augment", "intensity_jitter") => self.train.augment.intensity_jitter = f(line, key, v)?,
            ("augment", "noise_sigma_max") => self.train.augment.noise_sigma_max = f(line, key, v)?,

            ("data", "n_patients") => self.data.n_patients = u(line, key, v)?,
            ("data", "n_train") => self.data.n_train = u(line, key, v)?,
            ("data", "n_val") => self.data.n_val = u(line, key, v)?,
            ("data", "n_test") => self.data.n_test = u(line, key, v)?,
            ("data", "crop") => self.data.crop = u(line, key, v)?,
            ("data", "train_stride") => self.data.train_stride = u(line, key, v)?,
            ("data", "val_stride") => self.data.val_stride = u(line, key, v)?,
            ("data", "test_stride") => self.data.test_stride = u(line, key, v)?,
            ("data", "min_aorta_voxels") => self.data.min_aorta_voxels = u(line, key, v)?,

            ("phantom", "patient") => self.phantom.patient = u64_(line, key, v)?,

            ("mesh", "sigma_voxels") => self.mesh.sigma_voxels = f(line, key, v)?,
            ("mesh", "iso") => self.mesh.iso = f(line, key, v)?,
            ("mesh", "laplacian_iterations") => self.mesh.laplacian_iterations = u(line, key, v)?,
            ("mesh", "laplacian_lambda") => self.mesh.laplacian_lambda = f(line, key, v)?,
            ("mesh", "taubin_iterations") => self.mesh.taubin_iterations = u(line, key, v)?,
            ("mesh", "taubin_lambda") => self.mesh.taubin_lambda = f(line, key, v)?,
            ("mesh", "taubin_mu") => self.mesh.taubin_mu = f(line, key, v)?,
            ("mesh", "largest_component") => self.mesh.largest_component = b(line, key, v)?,

            ("centerline", "speed_epsilon") => self.centerline.speed.epsilon = f(line, key, v)?,
            ("centerline", "speed_power") => self.centerline.speed.power = f(line, key, v)?,
            ("centerline", "step_mm") => self.centerline.step_mm = f(line, key, v)?,
            ("centerline", "frame_window") => self.centerline.frame_window = u(line, key, v)?,
            ("centerline", "recenter") => self.centerline.recenter = b(line, key, v)?,
            ("centerline", "inlet") => self.centerline.inlet = voxel(line, key, v)?,
            ("centerline", "outlet") => self.centerline.outlet = voxel(line, key, v)?,
            ("centerline", "shape_indices") => {
                self.shape_indices = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| ShapeIndex::parse(s).ok_or_else(|| type_err(line, key, s, "shape index name")))
                    .collect::<Result<_>>()?
            }

            _ => {
                let full = if section.is_empty() {
                    key.to_string()
                } else {
                    format!("{section}.{key}")
                };
                return Err(Error::Config(format!("line {line}: unknown key '{full}'")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.preprocess;
        if !(p.window_lo < p.window_hi) {
            return Err(Error::Config(format!(
                "window_lo {} must be below window_hi {}",
                p.window_lo, p.window_hi
            )));
        }
        if !(p.target_spacing > 0.0) {
            return Err(Error::Config(format!(
                "target_spacing {} must be > 0",
                p.target_spacing
            )));
        }
        self.loss.validate()?;
        self.net.validate()?;
        self.train_config().validate()?;
        self.data_config().validate()?;
        self.mesh.validate()?;
        let c = &self.centerline;
        if !(c.speed.epsilon > 0.0 && c.speed.power > 0.0 && c.step_mm > 0.0) || c.frame_window < 1 {
            return Err(Error::Config(
                "centerline speed_epsilon, speed_power, step_mm must be > 0 and frame_window >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Training configuration with the `[loss]` section and seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            seed: self.seed,
            ..self.train
        }
    }

    pub fn net_config(&self) -> UNetConfig {
        UNetConfig {
            seed: self.seed,
            ..self.net
        }
    }

    /// Dataset configuration with the `[preprocess]` window applied.
    pub fn data_config(&self) -> DatasetConfig {
        DatasetConfig {
            window_lo: self.preprocess.window_lo,
            window_hi: self.preprocess.window_hi,
            ..self.data
        }
    }

    pub fn compare_config(&self) -> CompareConfig {
        CompareConfig {
            data: self.data_config(),
            net: self.net_config(),
            train: self.train_config(),
        }
    }

    /// Complete effective configuration; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let p = &self.preprocess;
        let _ = writeln!(s, "\n[preprocess]");
        let _ = writeln!(
            s,
            "window_lo = {:?}\nwindow_hi = {:?}\ntarget_spacing = {:?}",
            p.window_lo, p.window_hi, p.target_spacing
        );
        let l = &self.loss;
        let _ = writeln!(
            s,
            "\n[loss]\nw = {:?}\nepsilon = {:?}\nclamp = {:?}",
            l.w, l.epsilon, l.clamp
        );
        let n = &self.net;
        let _ = writeln!(
            s,
            "\n[unet]\nlevels = {}\nbase_channels = {}\nuse_batchnorm = {}",
            n.levels, n.base_channels, n.use_batchnorm
        );
        let t = &self.train;
        let _ = writeln!(
            s,
            "\n[train]\nlr = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nadam_epsilon = {:?}\nbatch_size = {}\nmax_epochs = {}\npatience = {}\nthreshold = {:?}\nmode = {}",
            t.adam.lr,
            t.adam.beta1,
            t.adam.beta2,
            t.adam.epsilon,
            t.batch_size,
            t.max_epochs,
            t.patience,
            t.threshold,
            t.mode.name()
        );
        let a = &t.augment;
        let _ = writeln!(
            s,
            "\n[augment]\nenabled = {}\nrotation_deg = {:?}\nflip_prob = {:?}\nshift_px = {:?}\nscale_min = {:?}\nscale_max = {:?}\nelastic_grid = {}\nelastic_max_px = {:?}\nintensity_jitter = {:?}\nnoise_sigma_max = {:?}",
            a.enabled,
            a.rotation_deg,
            a.flip_prob,
            a.shift_px,
            a.scale_min,
            a.scale_max,
            a.elastic_grid,
            a.elastic_max_px,
            a.intensity_jitter,
            a.noise_sigma_max
        );
        let d = &self.data;
        let _ = writeln!(
            s,
            "\n[data]\nn_patients = {}\nn_train = {}\nn_val = {}\nn_test = {}\ncrop = {}\ntrain_stride = {}\nval_stride = {}\ntest_stride = {}\nmin_aorta_voxels = {}",
            d.n_patients, d.n_train, d.n_val, d.n_test, d.crop, d.train_stride, d.val_stride, d.test_stride, d.min_aorta_voxels
        );
        let _ = writeln!(s, "\n[phantom]\npatient = {}", self.phantom.patient);
        let m = &self.mesh;
        let _ = writeln!(
            s,
            "\n[mesh]\nsigma_voxels = {:?}\niso = {:?}\nlaplacian_iterations = {}\nlaplacian_lambda = {:?}\ntaubin_iterations = {}\ntaubin_lambda = {:?}\ntaubin_mu = {:?}\nlargest_component = {}",
            m.sigma_voxels,
            m.iso,
            m.laplacian_iterations,
            m.laplacian_lambda,
            m.taubin_iterations,
            m.taubin_lambda,
            m.taubin_mu,
            m.largest_component
        );
        let c = &self.centerline;
        let vox = |v: Option<[usize; 3]>| v.map_or("auto".to_string(), |p| format!("{} {} {}", p[0], p[1], p[2]));
        let idx: Vec<&str> = self.shape_indices.iter().map(|i| i.name()).collect();
        let _ = writeln!(
            s,
            "\n[centerline]\nspeed_epsilon = {:?}\nspeed_power = {:?}\nstep_mm = {:?}\nframe_window = {}\nrecenter = {}\ninlet = {}\noutlet = {}\nshape_indices = {}",
            c.speed.epsilon,
            c.speed.power,
            c.step_mm,
            c.frame_window,
            c.recenter,
            vox(c.inlet),
            vox(c.outlet),
            idx.join(", ")
        );
        s
    }
}

const SECTIONS: [&str; 9] = [
    "preprocess",
    "loss",
    "unet",
    "train",
    "augment",
    "data",
    "phantom",
    "mesh",
    "centerline",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.loss.w, 0.5);
        assert_eq!(c.train.adam.lr, 1e-4);
        assert_eq!((c.preprocess.window_lo, c.preprocess.window_hi), (-150.0, 600.0));
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn full_scale_network_is_accepted() {
        let c = ExperimentConfig::parse("[unet]\nlevels = 4\nbase_channels = 32\n").unwrap();
        assert_eq!((c.net.levels, c.net.base_channels), (4, 32));
        assert_eq!(c.net.channels(3), 256);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::parse("[train]\nlernrate = 0.1\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("lernrate"), "{e}");
        let e = ExperimentConfig::parse("[nope]\n").unwrap_err().to_string();
        assert!(e.contains("nope"), "{e}");
    }

    #[test]
    fn type_mismatch_reports_line_number() {
        let e = ExperimentConfig::parse("# header\n[train]\n\nbatch_size = three\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 4"), "{e}");
        let e = ExperimentConfig::parse("[unet]\nuse_batchnorm = yes")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn invariant_violations_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::parse("[train]\nlr = 0\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("[loss]\nw = 2\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("[unet]\nlevels = 0\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse("seed = 1\nseed = 2\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn echo_round_trips() {
        let text = "seed = 7\n[train]\nmode = baseline\nlr = 0.001\n[centerline]\ninlet = 1 2 3\nshape_indices = max_chord_to_inscribed\n[mesh]\ntaubin_mu = -0.6\n";
        let mut c = ExperimentConfig::parse(text).unwrap();
        c.shape_indices = vec![ShapeIndex::MaxChordToInscribed, ShapeIndex::MaxToInletDiameter];
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }
}
