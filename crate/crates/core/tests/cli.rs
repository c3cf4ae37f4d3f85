//! The `it2` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use it2::trainer::parse_metrics;

fn it2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_it2")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, total: usize, fraction: f64, epochs: usize) -> std::path::PathBuf {
    let path = dir.join("cfg.toml");
    let text = format!(
        "[scene]\npoints_per_scan = 48\nnum_features = 2\nsignature_spread = 0.2\n\n\
         [data]\ntotal_scans = {total}\nlabelled_fraction = {fraction}\n\n\
         [train]\nseeds = [0]\noutput_dir = \"{}\"\nepochs = {epochs}\noptimizer = \"adamw\"\nbase_lr = 0.01\npseudo_ramp_epochs = 4\n",
        dir.join("runs").display()
    );
    fs::write(&path, text).unwrap();
    path
}

fn scan_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".it2s"))
        .collect();
    names.sort();
    names
}

/// Value in `column` of the mIoU row of an eval table.
fn table_miou(stdout: &[u8], column: usize) -> f64 {
    let text = String::from_utf8_lossy(stdout);
    let row = text.lines().find(|l| l.starts_with("mIoU")).expect("mIoU row");
    row.split_whitespace().nth(column).unwrap().parse().unwrap()
}

#[test]
fn gen_writes_scans_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 50, 0.1, 1);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = it2(&["gen", s(&cfg), s(dir)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let names = scan_files(&a);
    assert_eq!(names.len(), 50);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let roles: Vec<&str> = manifest["scans"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["role"].as_str().unwrap())
        .collect();
    assert_eq!(roles.len(), 50);
    assert_eq!(roles.iter().filter(|r| r.eq_ignore_ascii_case("labelled")).count(), 5);
    for name in names.iter().chain(std::iter::once(&"manifest.json".to_string())) {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_changes_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 4, 0.5, 1);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(it2(&["gen", s(&cfg), s(&a)]).status.success());
    assert!(it2(&["--seed", "11", "gen", s(&cfg), s(&b)]).status.success());
    assert_ne!(fs::read(a.join("scan_00000.it2s")).unwrap(), fs::read(b.join("scan_00000.it2s")).unwrap());
}

#[test]
fn train_then_eval_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 30, 0.1, 4);
    let data = tmp.path().join("data");
    let runs = tmp.path().join("runs");
    assert!(it2(&["gen", s(&cfg), s(&data)]).status.success());
    let o = it2(&["train", s(&cfg), s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = runs.join("checkpoint-s0.it2m");
    let metrics = parse_metrics(&fs::read_to_string(runs.join("metrics-s0.jsonl")).unwrap()).unwrap();
    assert_eq!(metrics.len(), 4);
    let last = metrics.last().unwrap();

    let global = it2(&["eval", s(&ckpt), s(&data), "--fuse"]);
    assert!(global.status.success(), "{}", stderr(&global));
    assert!((table_miou(&global.stdout, 1) - last.miou_range.unwrap()).abs() <= 1e-9);
    assert!((table_miou(&global.stdout, 2) - last.miou_voxel.unwrap()).abs() <= 1e-9);
    assert!((table_miou(&global.stdout, 3) - last.miou_fused.unwrap()).abs() <= 1e-9);

    let batchwise = it2(&["eval", s(&ckpt), s(&data), "--protocol", "batchwise"]);
    assert!(batchwise.status.success());
    assert_ne!(table_miou(&global.stdout, 1), table_miou(&batchwise.stdout, 1));

    let bad = it2(&["eval", s(&ckpt), s(&data), "--protocol", "sideways"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.it2m");
    let o = it2(&["eval", s(&missing), s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.it2m"), "{}", stderr(&o));
}

#[test]
fn bad_input_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(it2(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(it2(&["--help"]).status.code(), Some(0));

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nseeds = [0]\noutput_dir = \"x\"\nmystery = 1\n").unwrap();
    let o = it2(&["gen", s(&cfg), s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mystery"), "{}", stderr(&o));

    fs::write(&cfg, "[train]\nseeds = [0]\n").unwrap();
    let o = it2(&["gen", s(&cfg), s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("output_dir"));

    let good = write_config(tmp.path(), 4, 0.5, 1);
    assert_eq!(it2(&["--threads", "0", "gen", s(&good), s(&tmp.path().join("o"))]).status.code(), Some(1));
}

#[test]
fn ablate_writes_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), 20, 0.1, 1);
    let data = tmp.path().join("data");
    let out = tmp.path().join("abl");
    assert!(it2(&["gen", s(&cfg), s(&data)]).status.success());
    let o = it2(&["--threads", "2", "ablate", s(&cfg), s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("config,seed,view,miou"));
    assert_eq!(lines.count(), 4 * 3);
}
