use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dbmmd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbmmd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, models: &str, dataset: &str) -> String {
    let path = dir.join("exp.json");
    fs::write(
        &path,
        format!(
            r#"{{"models": [{models}], "dataset": {dataset},
                "config": {{"k": 2, "max_iter": 5}}, "output_dir": "out"}}"#
        ),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn synth_then_run_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dbmmd(
        &[
            "synth",
            "--out",
            "data",
            "--classes",
            "3",
            "--per-class",
            "10",
            "--shift",
            "rotation:20",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert!(
        synth.status.success(),
        "{}",
        String::from_utf8_lossy(&synth.stderr)
    );
    for f in ["source.csv", "target.csv", "recipe.json"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }

    let cfg = write_config(
        dir.path(),
        r#""JDA", "CDDA+DB""#,
        r#"{"type": "files", "source": "data/source.csv", "target": "data/target.csv"}"#,
    );
    let run = dbmmd(&["run", &cfg], dir.path());
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(String::from_utf8_lossy(&run.stdout).contains("CDDA+DB"));
}

#[test]
fn raw_format_synth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbmmd(
        &["synth", "--out", "d", "--format", "raw-f64", "--dim", "4"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(dir.path().join("d/source.bin").exists());
    assert!(dir.path().join("d/source.bin.json").exists());
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#""MEDA""#,
        r#"{"type": "synthetic", "recipe": {"class_count": 2, "per_class": 8, "dim": 2,
            "shift": {"kind": "rotation", "degrees": 15.0}, "noise": 0.5, "seed": 4}}"#,
    );
    // primal MEDA fails as a cell; the kernel flag fixes it
    assert_eq!(dbmmd(&["run", &cfg], dir.path()).status.code(), Some(1));
    let ok = dbmmd(
        &[
            "run",
            &cfg,
            "--kernel",
            "rbf",
            "--sigma-mode",
            "median",
            "--meda-eta",
            "0.5",
            "--output-dir",
            "out2",
        ],
        dir.path(),
    );
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert!(dir.path().join("out2/reports/meda_rep0.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"models": []}"#).unwrap();
    assert_eq!(
        dbmmd(&["run", "bad.json"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        dbmmd(&["run", "missing.json"], dir.path()).status.code(),
        Some(2)
    );

    let cfg = write_config(
        dir.path(),
        r#""JDA""#,
        r#"{"type": "synthetic", "recipe": {"class_count": 2, "per_class": 8, "dim": 2,
            "shift": {"kind": "rotation", "degrees": 15.0}, "noise": 0.5, "seed": 4}}"#,
    );
    assert_eq!(
        dbmmd(&["run", &cfg, "--lambda", "-1"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        dbmmd(&["run", &cfg, "--models", "MEDA+DB"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        dbmmd(&["run", &cfg, "--kernel", "cubic"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn report_rerenders_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#""JDA""#,
        r#"{"type": "synthetic", "recipe": {"class_count": 2, "per_class": 8, "dim": 2,
            "shift": {"kind": "rotation", "degrees": 15.0}, "noise": 0.5, "seed": 4}}"#,
    );
    assert!(dbmmd(&["run", &cfg], dir.path()).status.success());
    let summary = dir.path().join("out/summary.csv");
    let before = fs::read(&summary).unwrap();
    fs::remove_file(&summary).unwrap();
    let report = dbmmd(&["report", "out"], dir.path());
    assert!(report.status.success());
    assert_eq!(fs::read(&summary).unwrap(), before);
    assert_eq!(
        dbmmd(&["report", "nowhere"], dir.path()).status.code(),
        Some(1)
    );
}
