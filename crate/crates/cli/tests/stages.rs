use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::SystemTime;

use patternforge_cli::{schema, PipelineConfig, Stage};

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml")
}

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patternforge"))
        .arg("--config")
        .arg(config_path())
        .arg("--out")
        .arg(out)
        .args(args)
        .env("PATTERNFORGE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn mtimes(dir: &Path) -> Vec<(Stage, SystemTime)> {
    Stage::ALL
        .iter()
        .map(|&s| {
            let meta = std::fs::metadata(dir.join(s.file_name())).expect("artifact exists");
            (s, meta.modified().expect("mtime"))
        })
        .collect()
}

#[test]
fn stage_rerun_touches_only_that_stage_and_stale_inputs_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    assert!(cli(out, &["run"]).status.success());
    schema::validate_dir(out).unwrap();
    let before = mtimes(out);
    let simpc_bytes = std::fs::read(out.join("simpc.json")).unwrap();

    std::thread::sleep(std::time::Duration::from_millis(20));
    assert!(cli(out, &["--stage", "simpc", "run"]).status.success());
    for ((stage, t0), (_, t1)) in before.iter().zip(mtimes(out)) {
        if *stage == Stage::Simpc {
            assert!(t1 > *t0, "simpc was not re-executed");
        } else {
            assert_eq!(*t0, t1, "{stage} was touched");
        }
    }
    assert_eq!(std::fs::read(out.join("simpc.json")).unwrap(), simpc_bytes);

    // A different seed changes the clustering hash, so the encoder stage
    // must refuse the existing clustering artifact.
    let res = cli(out, &["--seed", "8", "train-encoder"]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("stale artifact") && err.contains("simpc.json"), "{err}");
}

#[test]
fn missing_upstream_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let res = cli(tmp.path(), &["shapelets"]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("missing"), "{err}");
}

#[test]
fn bad_config_names_the_field_and_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "simpc.kappa = -3\n").unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_patternforge"))
        .arg("--config")
        .arg(&cfg)
        .arg("config")
        .output()
        .unwrap();
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("kappa"), "{err}");
}

#[test]
fn printed_config_parses_back_to_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let res = cli(tmp.path(), &["config"]);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let parsed = PipelineConfig::parse(&text).unwrap();
    assert_eq!(parsed.to_flat_toml().unwrap(), text);
    assert_eq!(parsed.simpc.delta, 7.0);
}

#[test]
fn unknown_stage_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let res = cli(tmp.path(), &["--stage", "bogus", "run"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown stage"));
}

#[test]
fn synth_writes_the_bundled_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_patternforge"))
        .args(["synth", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(tmp.path().join("market.csv").exists());
    assert_eq!(std::fs::read_dir(tmp.path().join("seeds")).unwrap().count(), 4);
}
