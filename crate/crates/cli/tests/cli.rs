//! End-to-end checks of the command-line surface on tiny workloads.

use std::path::Path;
use std::process::{Command, Output};

fn zonetrain(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zonetrain"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn extract_reports_grid_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zonetrain(&["extract"], tmp.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("36 regular / 12 per zone"), "got: {text}");
    assert!(text.contains("on_focus"));
    // first axial line start on the desk grid
    assert!(text.contains("270"));
}

#[test]
fn extract_full_profile_matches_reference_counts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.toml"), "profile = \"full\"\n").unwrap();
    let out = zonetrain(&["extract", "--config", "run.toml"], tmp.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("81 regular / 27 per zone"), "got: {text}");
    assert!(text.contains("540"));
}

#[test]
fn synth_then_eval_pipeline_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zonetrain(
        &["synth", "--out", "frames.ztrf", "--frames-per-class", "3", "--seed", "3"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wrote 9 frames"));

    std::fs::write(
        tmp.path().join("run.toml"),
        r#"
        n_train_images = 1
        strategy = "regular"
        output_dir = "run1"
        [data]
        source = "container"
        container = "frames.ztrf"
        [hyperparams]
        epochs = 2
        learning_rate = 1e-3
        "#,
    )
    .unwrap();
    let out = zonetrain(&["train", "--config", "run.toml"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("epochs=2 lr=1e-3"), "got: {text}");
    assert!(tmp.path().join("run1/all.ztck").exists());
    assert!(tmp.path().join("run1/all.history.json").exists());
    assert!(tmp.path().join("run1/run_manifest.json").exists());

    let out = zonetrain(
        &["eval", "--checkpoint", "run1/all.ztck", "--zone", "on_focus", "--config", "run.toml"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("accuracy"));
}

#[test]
fn full_profile_schedule_is_logged_verbatim() {
    // n_train_images = 25 resolves to the published epochs=2000 lr=5e-6
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("run.toml"),
        "profile = \"full\"\nn_train_images = 25\noutput_dir = \"dry\"\n",
    )
    .unwrap();
    let out = zonetrain(&["train", "--config", "run.toml", "--dry-run"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("epochs=2000 lr=5e-6"), "got: {text}");
    assert!(tmp.path().join("dry/run_manifest.json").exists());
}

#[test]
fn train_is_deterministic_across_runs_and_modes() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("run.toml"),
        r#"
        n_train_images = 1
        strategy = "zone"
        seed = 11
        [data]
        frames_per_class = 3
        [hyperparams]
        epochs = 2
        learning_rate = 1e-3
        "#,
    )
    .unwrap();
    let run = |out_dir: &str, sequential: bool| {
        let mut args = vec!["train", "--config", "run.toml", "--out", out_dir];
        if sequential {
            args.push("--sequential");
        }
        let out = zonetrain(&args, tmp.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a", false);
    run("b", false);
    run("c", true);
    for name in ["pre_focal", "on_focus", "post_focal"] {
        let a = std::fs::read(tmp.path().join(format!("a/{name}.ztck"))).unwrap();
        let b = std::fs::read(tmp.path().join(format!("b/{name}.ztck"))).unwrap();
        let c = std::fs::read(tmp.path().join(format!("c/{name}.ztck"))).unwrap();
        assert_eq!(a, b, "{name}: repeat run differs");
        assert_eq!(a, c, "{name}: sequential run differs");
    }
}

#[test]
fn import_adapter_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    // one 8x4 i16 frame per class
    for label in 0..3u8 {
        let mut bytes = Vec::new();
        for i in 0..32i16 {
            bytes.extend_from_slice(&(i * (label as i16 + 1)).to_le_bytes());
        }
        std::fs::write(tmp.path().join(format!("c{label}.bin")), bytes).unwrap();
    }
    std::fs::write(
        tmp.path().join("layout.toml"),
        r#"
        axial_pixels = 8
        lateral_pixels = 4
        sample_type = "i16"
        depth_cm = 4.0
        sampling_rate_hz = 40e6
        focus_depth_cm = 2.0
        axial_major = true
        [[files]]
        path = "c0.bin"
        label = 0
        [[files]]
        path = "c1.bin"
        label = 1
        [[files]]
        path = "c2.bin"
        label = 2
        "#,
    )
    .unwrap();
    let out = zonetrain(
        &["import", "--layout", "layout.toml", "--out", "imported.ztrf"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("imported 3 frames"));
    let frames = zonetrain::ingest::read_container(&tmp.path().join("imported.ztrf")).unwrap();
    assert_eq!(frames.len(), 3);
    assert_eq!(frames[1].samples[[1, 0]], 8.0);
}

#[test]
fn usage_errors_exit_one_data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = zonetrain(&["train", "--strategy", "bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    std::fs::write(tmp.path().join("bad.ztrf"), b"not a container").unwrap();
    std::fs::write(
        tmp.path().join("run.toml"),
        "[data]\nsource = \"container\"\ncontainer = \"bad.ztrf\"\n",
    )
    .unwrap();
    let out = zonetrain(&["train", "--config", "run.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = zonetrain(&["nonsense-subcommand"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_prints_stored_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let curve = zonetrain::evalkit::SweepCurve {
        x: vec![-0.4, 0.0],
        y: vec![0.7, 0.9],
        yerr: vec![0.02, 0.01],
        x_label: "offset_cm".into(),
        y_label: "accuracy".into(),
        omitted: vec![],
    };
    let path = tmp.path().join("curve.tsv");
    zonetrain::evalkit::write_curve(&curve, &path).unwrap();
    let out = zonetrain(&["report", "--input", "curve.tsv"], tmp.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("offset_cm") && text.contains("0.9000"), "got: {text}");
}
