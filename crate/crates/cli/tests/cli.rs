use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tov_core::DatasetManifest;

fn forge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tov-forge"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TOV_FORGE_THREADS")
        .output()
        .expect("spawn tov-forge")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = forge(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn demo(tmp: &Path) -> PathBuf {
    let dir = tmp.join("demo");
    ok(&["demo", "--out", dir.to_str().unwrap()], tmp);
    dir
}

const FAST: [&str; 4] = ["--set", "stage1.epochs=1", "--set", "stage2.epochs=1"];

#[test]
fn pipeline_produces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = demo(tmp.path());
    let natural = ok(&["sample-natural", "-c", "config.toml"], &dir);
    assert!(natural.contains("total\t"));
    ok(&["sample-osm", "-c", "config.toml"], &dir);
    let balanced = ok(&["rebalance", "-c", "config.toml"], &dir);

    let out = dir.join("out");
    let m = DatasetManifest::load(&out.join("balanced.jsonl")).unwrap();
    let counts = m.counts();
    assert_eq!(counts.len(), 8);
    assert!(counts.values().all(|&n| n == counts.values().next().copied().unwrap()));
    assert!(balanced.contains(&format!("total\t{}", m.records.len())));

    let mut args = vec!["pretrain", "-c", "config.toml"];
    args.extend(FAST);
    ok(&args, &dir);
    let mut args = vec!["probe", "-c", "config.toml", "--random", "--shots", "1"];
    args.extend(FAST);
    let table = ok(&args, &dir);
    for init in ["random", "stage1", "stage2"] {
        assert!(table.contains(init), "{table}");
    }
    let csv = std::fs::read_to_string(out.join("probe.csv")).unwrap();
    assert!(csv.starts_with("init,shots,seed,oa\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 5);
    let snapshot = std::fs::read_to_string(out.join("config.snapshot.toml")).unwrap();
    assert!(snapshot.contains("epochs = 1"));
}

#[test]
fn interrupted_pretraining_resumes_to_identical_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = demo(tmp.path());
    let base = ["pretrain", "-c", "config.toml", "--stage", "1", "--set", "stage1.epochs=2"];
    let run = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend(extra);
        ok(&args, &dir);
    };
    run(&["-o", "full"]);
    run(&["-o", "part", "--stop-after", "5"]);
    run(&["-o", "part", "--resume", "part/stage1.ckpt"]);
    assert_eq!(
        std::fs::read(dir.join("full/stage1.ckpt")).unwrap(),
        std::fs::read(dir.join("part/stage1.ckpt")).unwrap()
    );
}

#[test]
fn empty_image_list_gives_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["sample-natural", "-o", "out"], tmp.path());
    assert!(stdout.contains("total\t0"));
    let m = DatasetManifest::load(&tmp.path().join("out/natural.jsonl")).unwrap();
    assert!(m.records.is_empty());
}

#[test]
fn errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = demo(tmp.path());

    let out = forge(&["sample-natural", "-c", "config.toml", "--set", "paths.landcover=missing.png"], &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.png"));

    let out = forge(&["sample-natural", "-c", "config.toml", "--set", "sampling.threshhold=0.3"], &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshhold"));

    let out = forge(&["pretrain", "--stage", "3"], &dir);
    assert_eq!(out.status.code(), Some(2));

    let out = forge(&["probe", "-c", "config.toml", "--checkpoint", "nope.ckpt"], &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));

    let out = Command::new(env!("CARGO_BIN_EXE_tov-forge"))
        .args(["sample-osm", "-c", "config.toml"])
        .current_dir(&dir)
        .env("TOV_FORGE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TOV_FORGE_THREADS"));
}

#[test]
fn gradcheck_reports_and_fails_on_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let good = ok(&["gradcheck", "--blocks", "1", "--cases", "2"], tmp.path());
    assert!(good.ends_with("gradcheck passed\n"));
    assert!(good.contains("block0.weight"));

    let out = forge(&["gradcheck", "--blocks", "1", "--corrupt", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let out = forge(&["gradcheck", "--blocks", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn custom_rule_table_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = demo(tmp.path());
    std::fs::write(dir.join("rules.txt"), "aerodrome => Airport\n").unwrap();
    let stdout = ok(&["sample-osm", "-c", "config.toml", "--set", "paths.rules=rules.txt"], &dir);
    assert!(stdout.contains("Airport"));
    assert!(!stdout.contains("Parking"));

    std::fs::write(dir.join("bad.txt"), "aerodrome -> Airport\n").unwrap();
    let out = forge(&["sample-osm", "-c", "config.toml", "--set", "paths.rules=bad.txt"], &dir);
    assert_eq!(out.status.code(), Some(1));
}
