use std::path::Path;
use std::process::{Command, Output};

fn adsubtype(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adsubtype")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{"seed": 5, "synth": {"n_patients": 400, "profiles": "acceptance"}, "elbow": {"kmax": 6}}"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn missing_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = adsubtype(&["--config", "/nonexistent/config.json", "--out", out.to_str().unwrap(), "all"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "no_such_field": true}"#).unwrap();
    let out = dir.path().join("out");
    let o = adsubtype(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "all"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(adsubtype(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn version_flag() {
    let o = adsubtype(&["--version"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), format!("adsubtype {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = adsubtype(&["--config", &cfg, "--out", out.to_str().unwrap(), "--dry-run", "all"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("elbow") && text.contains("elbow.csv"));
    assert!(!out.exists());
}

#[test]
fn stage_without_inputs_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = adsubtype(&["--config", &cfg, "--out", out.to_str().unwrap(), "cluster"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn elbow_stage_only_adds_elbow_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    for stage in ["synth", "ingest", "features"] {
        assert!(adsubtype(&["--config", &cfg, "--out", out_s, stage]).status.success(), "{stage}");
    }
    let before = files(&out);
    assert!(adsubtype(&["--config", &cfg, "--out", out_s, "elbow"]).status.success());
    let after = files(&out);
    let added: Vec<&String> = after.iter().filter(|f| !before.contains(f)).collect();
    assert_eq!(added, ["elbow.csv"]);
}

#[test]
fn all_equals_individual_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(adsubtype(&["--config", &cfg, "--out", a.to_str().unwrap(), "all"]).status.success());
    for stage in ["synth", "ingest", "features", "elbow", "cluster", "stats", "mlr", "drugs", "report"] {
        let o = adsubtype(&["--config", &cfg, "--out", b.to_str().unwrap(), stage]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(files(&a), files(&b));
}

#[test]
fn rerunning_a_stage_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(adsubtype(&["--config", &cfg, "--out", out_s, "all"]).status.success());
    let first = std::fs::read(out.join("stats_grid.csv")).unwrap();
    let manifest = std::fs::read(out.join("manifest.json")).unwrap();
    assert!(adsubtype(&["--config", &cfg, "--out", out_s, "stats"]).status.success());
    assert_eq!(first, std::fs::read(out.join("stats_grid.csv")).unwrap());
    assert_eq!(manifest, std::fs::read(out.join("manifest.json")).unwrap());
}
