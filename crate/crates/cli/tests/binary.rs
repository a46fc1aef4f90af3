use std::fs;
use std::process::{Command, Output};

fn biot_th(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biot-th")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn single_run_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = biot_th(&["run", "--case", "example2", "--n", "2", "--k", "2", "--dt", "1/2", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0.5,0.5,"));
    assert!(lines[1].ends_with(','));
    assert!(dir.path().join("run.md").exists());
}

#[test]
fn missing_dt_fails_with_message() {
    let o = biot_th(&["run", "--n", "2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dt required"));
}

#[test]
fn nonstandard_pairing_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = biot_th(&["run", "--n", "1", "--k", "2", "--l", "2", "--dt", "1", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: k=2, l=2"));
}

#[test]
fn study_output_is_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (dir, workers) in dirs.iter().zip(["1", "3"]) {
        let o = biot_th(&[
            "run", "--case", "example2", "--method", "2", "--k", "2", "--study", "spatial", "--pairs", "1:1/2,2:1/4,4:1/8",
            "--workers", workers, "--out", dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(dirs[0].path().join("run.csv")).unwrap();
    let b = fs::read(dirs[1].path().join("run.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 4);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    fs::write(&cfg, "study = \"temporal\"\nn = 2\nk = 2\ndts = [0.5, 0.25]\nmethod = 2\n").unwrap();
    let out = dir.path().join("res");
    let o = biot_th(&["run", "--config", cfg.to_str().unwrap(), "--dts", "1,1/2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.lines().nth(2).unwrap().starts_with("| 1 |"), "{md}");
    assert!(md.lines().nth(3).unwrap().starts_with("| 1/2 |"), "{md}");
}

#[test]
fn dumps_mesh_and_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.txt");
    let mtx = dir.path().join("a.mtx");
    let o = biot_th(&[
        "run", "--n", "1", "--k", "2", "--dt", "1", "--out", dir.path().to_str().unwrap(),
        "--dump-mesh", mesh.to_str().unwrap(), "--dump-matrix", mtx.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // 4 vertices, 2 triangles, 4 boundary edges
    assert_eq!(fs::read_to_string(&mesh).unwrap().lines().count(), 10);
    let a = fs::read_to_string(&mtx).unwrap();
    assert!(a.starts_with("%%MatrixMarket matrix coordinate real general"));
}

#[test]
fn bad_input_exits_nonzero() {
    for args in [
        &["run", "--preset", "table0"][..],
        &["run", "--n", "2", "--dt", "0.3"][..],
        &["run", "--n", "2", "--dt", "abc"][..],
        &["run", "--config", "/nonexistent/cfg.toml"][..],
    ] {
        let o = biot_th(args);
        assert!(!o.status.success(), "{args:?}");
    }
}

#[test]
fn presets_are_listed() {
    let o = biot_th(&["presets"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert_eq!(text.lines().last(), Some("table10"));
}
