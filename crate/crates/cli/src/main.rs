//! `anatomask` command-line pipeline.
//!
//! Every stage is its own subcommand writing into a user-named output
//! directory together with `config.ini`, the effective configuration.
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 configuration, 4 I/O.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use anatomask::centerline::{descriptor_report, extract_centerline, morphometry, ReferenceDescriptors};
use anatomask::config::ExperimentConfig;
use anatomask::experiment::{build_cohort, cohort_datasets, run_compare};
use anatomask::mesh::{mesh_measures, read_obj, reconstruct, write_obj, write_stl};
use anatomask::metrics::{aggregate, binarize, per_slice_csv, slice_metrics, AggregateOptions};
use anatomask::phantom::{
    default_label_table, default_vascular_ids, generate, AnalyticRecord, PhantomSpec, LABEL_AORTA,
};
use anatomask::priors::{build_exclusion_mask, inference_allow_mask, OrganLabelMap};
use anatomask::unet::{load_checkpoint, masked_prediction, save_checkpoint, train, LossMode, UNet};
use anatomask::volume::{
    read_nifti, resample, volume_from_slices, window_normalize, write_nifti, InterpMode, Slice2D, Volume3D, VolumeKind,
};
use anatomask::{Error, Net32};

#[derive(Parser, Debug)]
#[command(
    name = "anatomask",
    version,
    about = "Anatomy-aware aortic aneurysm segmentation and morphometry"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Sectioned `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic CTA phantom (image, gt mask, labels, analytic record).
    Phantom {
        #[command(flatten)]
        common: Common,
        /// Randomised patient id; 0 or absent gives the reference phantom.
        #[arg(long)]
        patient: Option<u64>,
    },
    /// Resample to the target spacing and apply the HU window.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
    },
    /// Build the binary exclusion mask from an organ label map.
    ExclusionMask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Train a U-Net on a generated phantom cohort.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Segment a volume with a checkpoint; scores against a gt mask if given.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Raw CT image (HU); windowed with the configured window.
        #[arg(long)]
        image: PathBuf,
        /// Organ label map, required for anatomy-aware inference masking.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Mask → smoothed, marching-cubes surface mesh (OBJ and STL).
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        laplacian_iterations: Option<usize>,
        #[arg(long)]
        taubin_iterations: Option<usize>,
        /// Keep every connected component instead of only the largest.
        #[arg(long)]
        all_components: bool,
    },
    /// Minimal-cost centerline with per-point radius measures.
    Centerline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geometry: Geometry,
    },
    /// Morphometric descriptors from a mask and its surface mesh.
    Morphometry {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        geometry: Geometry,
        /// Analytic record of a phantom, reported as the "true" column.
        #[arg(long)]
        analytic: Option<PathBuf>,
    },
    /// Train anatomy-aware and baseline models under identical conditions and compare.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug)]
struct Geometry {
    #[arg(long)]
    mask: PathBuf,
    /// OBJ or STL surface of the same structure.
    #[arg(long)]
    mesh: PathBuf,
    /// Inlet voxel `x,y,z`; default: widest point of the first masked plane.
    #[arg(long, value_parser = parse_voxel)]
    inlet: Option<[usize; 3]>,
    #[arg(long, value_parser = parse_voxel)]
    outlet: Option<[usize; 3]>,
    /// Which surface the mesh represents; labels the outputs.
    #[arg(long, value_enum, default_value_t = Surface::OuterWall)]
    surface: Surface,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    AnatomyAware,
    Baseline,
}

impl From<ModeArg> for LossMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::AnatomyAware => LossMode::AnatomyAware,
            ModeArg::Baseline => LossMode::Baseline,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Surface {
    Lumen,
    OuterWall,
}

impl Surface {
    fn label(self) -> &'static str {
        match self {
            Surface::Lumen => "lumen",
            Surface::OuterWall => "outer-wall",
        }
    }
}

fn parse_voxel(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || format!("expected voxel index `x,y,z`, got {s:?}");
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut v = [0; 3];
    for (o, p) in v.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| bad())?;
    }
    Ok(v)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 3,
        Error::Io { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Help and version requests exit 0; every usage error exits 2.
            return ExitCode::from(
                if e.use_stderr() || e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    2
                } else {
                    0
                },
            );
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Load the configuration, apply the seed override, create the output
/// directory and echo the effective configuration into it.
fn prepare(common: &Common) -> anatomask::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
    write_text(&common.out.join("config.ini"), &cfg.to_text())?;
    Ok(cfg)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> anatomask::Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_mask(path: &Path) -> anatomask::Result<Volume3D> {
    read_nifti::<f64>(path)?.with_kind(VolumeKind::BinaryMask)
}

fn label_map(path: &Path) -> anatomask::Result<OrganLabelMap> {
    OrganLabelMap::new(
        read_nifti(path)?,
        default_label_table(),
        default_vascular_ids(),
        LABEL_AORTA,
    )
}

fn read_mesh(path: &Path) -> anatomask::Result<anatomask::Mesh> {
    let is_stl = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("stl"));
    if is_stl {
        anatomask::mesh::read_stl(path)
    } else {
        read_obj(path)
    }
}

fn run(command: Command) -> anatomask::Result<()> {
    match command {
        Command::Phantom { common, patient } => {
            let mut cfg = prepare(&common)?;
            if let Some(p) = patient {
                cfg.phantom.patient = p;
                write_text(&common.out.join("config.ini"), &cfg.to_text())?;
            }
            let spec = match cfg.phantom.patient {
                0 => PhantomSpec {
                    seed: cfg.seed,
                    ..PhantomSpec::default()
                },
                id => PhantomSpec::patient(id, cfg.seed),
            };
            generate(&spec)?.write_to(&common.out)
        }
        Command::Preprocess { common, image } => {
            let cfg = prepare(&common)?;
            let p = cfg.preprocess;
            let img = read_nifti::<f64>(&image)?;
            let img = resample(&img, [p.target_spacing; 3], InterpMode::Trilinear)?;
            let out = window_normalize(&img, p.window_lo, p.window_hi)?;
            write_nifti(&out, common.out.join("preprocessed.nii"))
        }
        Command::ExclusionMask { common, labels } => {
            prepare(&common)?;
            let mask = build_exclusion_mask(&label_map(&labels)?);
            write_nifti(&mask, common.out.join("exclusion.nii"))
        }
        Command::Train { common, mode } => {
            let mut cfg = prepare(&common)?;
            if let Some(m) = mode {
                cfg.train.mode = m.into();
                write_text(&common.out.join("config.ini"), &cfg.to_text())?;
            }
            let data_cfg = cfg.data_config();
            let cohort = build_cohort(&data_cfg, cfg.seed)?;
            let (data, _) = cohort_datasets::<f32>(&cohort, &data_cfg)?;
            let outcome = train(cfg.net_config(), &cfg.train_config(), &data)?;
            save_checkpoint(&outcome.best, common.out.join("checkpoint.bin"))?;
            write_text(&common.out.join("history.csv"), &outcome.history_csv())?;
            let p = &cohort.partition;
            let ids = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
            write_text(
                &common.out.join("train_log.txt"),
                &format!(
                    "mode {}\ntrain patients: {}\nval patients: {}\ntest patients: {}\nbest epoch {} val dice {:.6}\nstopped early {}\n",
                    cfg.train.mode.name(),
                    ids(&p.train),
                    ids(&p.val),
                    ids(&p.test),
                    outcome.best_epoch,
                    outcome.best_val_dice,
                    outcome.stopped_early
                ),
            )
        }
        Command::Evaluate {
            common,
            checkpoint,
            image,
            labels,
            gt,
            mode,
        } => {
            let mut cfg = prepare(&common)?;
            if let Some(m) = mode {
                cfg.train.mode = m.into();
                write_text(&common.out.join("config.ini"), &cfg.to_text())?;
            }
            let net: Net32 = load_checkpoint(&checkpoint)?;
            let img = window_normalize(
                &read_nifti::<f64>(&image)?,
                cfg.preprocess.window_lo,
                cfg.preprocess.window_hi,
            )?;
            let exclusion = match (&labels, cfg.train.mode) {
                (Some(l), _) => Some(build_exclusion_mask(&label_map(l)?)),
                (None, LossMode::AnatomyAware) => {
                    return Err(Error::Config("anatomy-aware evaluation needs --labels".into()));
                }
                (None, LossMode::Baseline) => None,
            };
            let gt = gt.as_deref().map(read_mask).transpose()?;
            evaluate_volume(&net, &img, exclusion.as_ref(), gt.as_ref(), &cfg, &common.out)
        }
        Command::Reconstruct {
            common,
            mask,
            sigma,
            laplacian_iterations,
            taubin_iterations,
            all_components,
        } => {
            let mut cfg = prepare(&common)?;
            let m = &mut cfg.mesh;
            if let Some(s) = sigma {
                m.sigma_voxels = s;
            }
            if let Some(n) = laplacian_iterations {
                m.laplacian_iterations = n;
            }
            if let Some(n) = taubin_iterations {
                m.taubin_iterations = n;
            }
            if all_components {
                m.largest_component = false;
            }
            cfg.validate()?;
            write_text(&common.out.join("config.ini"), &cfg.to_text())?;
            let rec = reconstruct(&read_mask(&mask)?, &cfg.mesh)?;
            write_obj(&rec.mesh, common.out.join("mesh.obj"))?;
            write_stl(&rec.mesh, common.out.join("mesh.stl"))?;
            let mut s = String::from("vertices,triangles,components,surface_area_mm2,volume_mm3\n");
            let (area, vol) = match mesh_measures(&rec.mesh) {
                Ok(m) => (format!("{:.6}", m.surface_area), format!("{:.6}", m.volume)),
                Err(_) => (String::new(), String::new()),
            };
            s.push_str(&format!(
                "{},{},{},{area},{vol}\n",
                rec.mesh.vertices.len(),
                rec.mesh.triangles.len(),
                rec.component_sizes.len()
            ));
            write_text(&common.out.join("mesh_measures.csv"), &s)
        }
        Command::Centerline { common, geometry } => {
            let cfg = prepare(&common)?;
            let (cl, _) = centerline_for(&geometry, &cfg)?;
            let tag = geometry.surface.label();
            write_text(&common.out.join(format!("centerline_{tag}.csv")), &cl.to_csv())?;
            write_text(
                &common.out.join(format!("diameter_profile_{tag}.csv")),
                &cl.diameter_profile_csv(),
            )
        }
        Command::Morphometry {
            common,
            geometry,
            analytic,
        } => {
            let cfg = prepare(&common)?;
            let (cl, mesh) = centerline_for(&geometry, &cfg)?;
            let m = morphometry(&cl, &mesh, &cfg.shape_indices)?;
            let truth = match analytic {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
                    let a = AnalyticRecord::parse(&text)?;
                    Some(ReferenceDescriptors {
                        max_diameter_mm: a.max_outer_diameter_mm,
                        surface_area_mm2: a.surface_area_mm2,
                        volume_mm3: a.volume_mm3,
                    })
                }
                None => None,
            };
            let tag = geometry.surface.label();
            write_text(&common.out.join(format!("morphometry_{tag}.csv")), &m.to_csv())?;
            write_text(
                &common.out.join(format!("report_{tag}.txt")),
                &descriptor_report(&m, truth.as_ref(), tag),
            )
        }
        Command::Compare { common } => {
            let cfg = prepare(&common)?;
            let report = run_compare::<f32>(&cfg.compare_config(), cfg.seed)?;
            write_text(&common.out.join("metrics.csv"), &report.metrics_csv())?;
            write_text(&common.out.join("per_slice.csv"), &report.per_slice_csv())?;
            write_text(&common.out.join("summary.txt"), &report.summary())?;
            for run in &report.runs {
                let name = run.mode.name();
                save_checkpoint(&run.outcome.best, common.out.join(format!("checkpoint_{name}.bin")))?;
                write_text(
                    &common.out.join(format!("history_{name}.csv")),
                    &run.outcome.history_csv(),
                )?;
            }
            print!("{}", report.summary());
            Ok(())
        }
    }
}

fn centerline_for(
    g: &Geometry,
    cfg: &ExperimentConfig,
) -> anatomask::Result<(anatomask::centerline::Centerline<f64>, anatomask::Mesh)> {
    let mask = read_mask(&g.mask)?;
    let mesh = read_mesh(&g.mesh)?;
    let mut ccfg = cfg.centerline.clone();
    if g.inlet.is_some() {
        ccfg.inlet = g.inlet;
    }
    if g.outlet.is_some() {
        ccfg.outlet = g.outlet;
    }
    Ok((extract_centerline(&mask, &mesh, &ccfg)?, mesh))
}

/// Slice-wise segmentation on the training crop, pasted back into a
/// full-size mask; per-slice metrics on slices with nonempty gt.
fn evaluate_volume(
    net: &UNet<f32>,
    img: &Volume3D,
    exclusion: Option<&Volume3D>,
    gt: Option<&Volume3D>,
    cfg: &ExperimentConfig,
    out: &Path,
) -> anatomask::Result<()> {
    let [nx, ny, nz] = img.dims();
    if let Some(g) = gt {
        if g.dims() != img.dims() {
            return Err(Error::Alignment(format!(
                "gt dims {:?} differ from image dims {:?}",
                g.dims(),
                img.dims()
            )));
        }
    }
    let c = cfg.data.crop;
    let (cx, cy) = ((nx / 2) as isize, (ny / 2) as isize);
    let (x0, y0) = (cx - (c / 2) as isize, cy - (c / 2) as isize);
    let mode = cfg.train.mode;
    let thr = cfg.train.threshold;
    let mut slices = Vec::with_capacity(nz);
    let mut rows = Vec::new();
    for z in 0..nz {
        let s = img.extract_slice(z)?.crop_centered(cx, cy, c, c);
        let s32 = Slice2D::new(
            c,
            c,
            [s.spacing[0] as f32, s.spacing[1] as f32],
            s.data.iter().map(|&v| v as f32).collect(),
        )?;
        let mut prob = net.forward(&s32)?;
        if let (Some(ex), LossMode::AnatomyAware) = (exclusion, mode) {
            prob = masked_prediction(&prob, &inference_allow_mask(ex, z)?.crop_centered(cx, cy, c, c), mode);
        }
        let pred = binarize(&prob, thr as f32);
        let mut full = Slice2D::zeros(nx, ny, [img.spacing()[0], img.spacing()[1]]);
        for y in 0..c {
            for x in 0..c {
                let (fx, fy) = (x0 + x as isize, y0 + y as isize);
                if fx >= 0 && fy >= 0 && (fx as usize) < nx && (fy as usize) < ny {
                    full.set(fx as usize, fy as usize, pred.get(x, y) as f64);
                }
            }
        }
        if let Some(g) = gt {
            let gs = g.extract_slice(z)?;
            if gs.data.iter().any(|&v| v > 0.0) {
                rows.push((format!("z{z:03}"), slice_metrics(&full, &gs)?));
            }
        }
        slices.push(full);
    }
    let pred = volume_from_slices(&slices, img.spacing()[2], img.origin(), VolumeKind::BinaryMask)?;
    write_nifti(&pred, out.join("prediction.nii"))?;
    if gt.is_some() {
        write_text(&out.join("per_slice.csv"), &per_slice_csv(&rows))?;
        let metrics: Vec<_> = rows.iter().map(|r| r.1).collect();
        let a = aggregate(&metrics, AggregateOptions::default())?;
        write_text(&out.join("metrics.txt"), &format!("{}\n", a.summary_line()))?;
    }
    Ok(())
}
