use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anatomask"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small enough to finish in seconds, large enough to exercise every stage.
const TINY_COMPARE: &str = "\
[unet]
levels = 2
base_channels = 2
[train]
batch_size = 2
max_epochs = 1
patience = 1
lr = 0.001
[augment]
enabled = true
[data]
n_patients = 5
n_train = 3
n_val = 1
n_test = 1
crop = 32
train_stride = 16
val_stride = 16
test_stride = 16
";

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = run(&[]);
    assert_eq!(code(&o), 2);
    let text = String::from_utf8_lossy(&o.stdout).to_string() + &String::from_utf8_lossy(&o.stderr);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(code(&run(&["segment-everything"])), 2);
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn config_errors_exit_3_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    std::fs::write(&cfg, "[train]\nlernrate = 0.1\n").unwrap();
    let o = run(&["phantom", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lernrate"));

    std::fs::write(&cfg, "[train]\nmax_epochs = many\n").unwrap();
    let o = run(&["phantom", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn missing_input_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "reconstruct",
        "--mask",
        s(&dir.path().join("absent.nii")),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn phantom_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(code(&run(&["phantom", "--seed", "7", "--out", s(d)])), 0);
    }
    for f in ["image.nii", "gt.nii", "labels.nii", "analytic.txt", "config.ini"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn geometry_pipeline_runs_stage_by_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    assert_eq!(code(&run(&["phantom", "--out", s(&d("ph"))])), 0);
    assert_eq!(
        code(&run(&[
            "exclusion-mask",
            "--labels",
            s(&d("ph/labels.nii")),
            "--out",
            s(&d("ex"))
        ])),
        0
    );
    assert!(d("ex/exclusion.nii").exists());
    assert_eq!(
        code(&run(&[
            "preprocess",
            "--image",
            s(&d("ph/image.nii")),
            "--out",
            s(&d("pre"))
        ])),
        0
    );
    assert!(d("pre/preprocessed.nii").exists());
    assert_eq!(
        code(&run(&[
            "reconstruct",
            "--mask",
            s(&d("ph/gt.nii")),
            "--out",
            s(&d("rec"))
        ])),
        0
    );
    for f in ["mesh.obj", "mesh.stl", "mesh_measures.csv", "config.ini"] {
        assert!(d("rec").join(f).exists(), "{f}");
    }
    let o = run(&[
        "centerline",
        "--mask",
        s(&d("ph/gt.nii")),
        "--mesh",
        s(&d("rec/mesh.stl")),
        "--surface",
        "lumen",
        "--out",
        s(&d("cl")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d("cl/centerline_lumen.csv").exists());
    let o = run(&[
        "morphometry",
        "--mask",
        s(&d("ph/gt.nii")),
        "--mesh",
        s(&d("rec/mesh.obj")),
        "--analytic",
        s(&d("ph/analytic.txt")),
        "--out",
        s(&d("mo")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(d("mo/report_outer-wall.txt")).unwrap();
    assert!(
        report.contains("Maximal Diameter (pred)") && report.contains("(true)"),
        "{report}"
    );
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    std::fs::write(d("c.ini"), "seed = 3\n[phantom]\npatient = 4\n").unwrap();
    assert_eq!(
        code(&run(&["phantom", "--config", s(&d("c.ini")), "--out", s(&d("a"))])),
        0
    );
    assert_eq!(
        code(&run(&[
            "phantom",
            "--config",
            s(&d("a/config.ini")),
            "--out",
            s(&d("b"))
        ])),
        0
    );
    for f in ["image.nii", "config.ini"] {
        assert_eq!(
            std::fs::read(d("a").join(f)).unwrap(),
            std::fs::read(d("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn compare_rows_share_one_partition_and_train_then_evaluate_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    std::fs::write(d("tiny.ini"), TINY_COMPARE).unwrap();
    let o = run(&[
        "compare",
        "--seed",
        "5",
        "--config",
        s(&d("tiny.ini")),
        "--out",
        s(&d("cmp")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d("cmp/metrics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "anatomy-aware");
    assert_eq!(rows[1][0], "baseline");
    // seed, train ids, val ids, test ids
    assert_eq!(rows[0][1..5], rows[1][1..5]);
    for f in [
        "per_slice.csv",
        "summary.txt",
        "checkpoint_anatomy-aware.bin",
        "checkpoint_baseline.bin",
        "config.ini",
    ] {
        assert!(d("cmp").join(f).exists(), "{f}");
    }

    let o = run(&[
        "train",
        "--seed",
        "5",
        "--config",
        s(&d("tiny.ini")),
        "--out",
        s(&d("tr")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(d("tr/checkpoint.bin")).unwrap(),
        std::fs::read(d("cmp/checkpoint_anatomy-aware.bin")).unwrap()
    );
    assert_eq!(code(&run(&["phantom", "--out", s(&d("ph"))])), 0);
    let o = run(&[
        "evaluate",
        "--config",
        s(&d("tiny.ini")),
        "--checkpoint",
        s(&d("tr/checkpoint.bin")),
        "--image",
        s(&d("ph/image.nii")),
        "--labels",
        s(&d("ph/labels.nii")),
        "--gt",
        s(&d("ph/gt.nii")),
        "--out",
        s(&d("ev")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["prediction.nii", "per_slice.csv", "metrics.txt"] {
        assert!(d("ev").join(f).exists(), "{f}");
    }
    // Anatomy-aware inference without a label map is a configuration error.
    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&d("tr/checkpoint.bin")),
        "--image",
        s(&d("ph/image.nii")),
        "--out",
        s(&d("ev2")),
    ]);
    assert_eq!(code(&o), 3);
}
