use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

const ROOM: &str = r#"
[floor]
min = [0.0, 0.0]
max = [3.0, 3.0]

[[objects]]
label = "chair"
center = [1.5, 1.5]
size = [0.5, 0.5, 0.45]
yaw_deg = 0.0
"#;

fn paak(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_paak")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "paak {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn prepare(dir: &Path) {
    fs::write(dir.join("room.toml"), ROOM).unwrap();
    paak(dir, &["synth", "scene", "--recipe", "room.toml", "--out", "room.obj"]);
    paak(dir, &["synth", "clip", "--kind", "sit", "--duration", "3", "--fps", "10", "--out", "sit.anim", "--features", "sit.ftr", "--phases", "sit.json"]);
}

#[test]
fn subcommands_chain_and_place_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    assert!(dir.join("room.labels.json").exists());
    assert_eq!(json(&dir.join("sit.json"))["phases"].as_array().unwrap().len(), 3);

    paak(dir, &["bake-sdf", "room.obj", "--cell-size", "0.05", "--out", "room.sdf"]);
    assert_eq!(&fs::read(dir.join("room.sdf")).unwrap()[..8], b"PAAKSDF1");

    paak(dir, &["features", "sit.anim", "--out", "heur.ftr"]);
    assert_eq!(&fs::read(dir.join("heur.ftr")).unwrap()[..8], b"PAAKFTR1");

    paak(dir, &["keyframes", "sit.anim", "sit.ftr", "--mode", "geometric", "--out", "w.json"]);
    let w = json(&dir.join("w.json"));
    assert_eq!(w["k"].as_array().unwrap().len(), 30);
    assert_eq!(w["k"], w["k_g"]);
    assert!(w["inputs"]["animation"].as_str().unwrap().len() == 64);

    let place = ["place", "room.obj", "sit.anim", "sit.ftr", "--weights", "uniform", "--cache-dir", "cache", "--out"];
    paak(dir, &[&place[..], &["r1.json"]].concat());
    paak(dir, &[&place[..], &["r2.json"]].concat());
    assert_eq!(fs::read(dir.join("r1.json")).unwrap(), fs::read(dir.join("r2.json")).unwrap());
    let r = json(&dir.join("r1.json"));
    assert!(r["per_frame"].as_array().unwrap().iter().all(|f| f["weight"] == 1.0));
    assert_eq!(r["config"]["mode"], "uniform");
    assert_eq!(r["prospects"].as_array().unwrap().len(), 10);

    paak(dir, &["eval", "room.obj", "sit.anim", "r1.json", "--out", "report.json"]);
    let report = json(&dir.join("report.json"));
    assert!(report["contact"].as_f64().unwrap() >= 0.8);
    assert_eq!(report["per_frame_contact"].as_array().unwrap().len(), 30);
}

#[test]
fn compare_and_run_from_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    fs::write(
        dir.join("paak.toml"),
        "seed = 3\n[paths]\nrecipe = \"room.toml\"\nanimation = \"sit.anim\"\nfeatures = \"sit.ftr\"\nout_dir = \"out\"\n[scene]\ncell_size = 0.05\n[training]\ncorpus_size = 4\nepochs = 3\n",
    )
    .unwrap();
    paak(dir, &["compare", "--config", "paak.toml", "--out", "cmp.csv"]);
    let csv = fs::read_to_string(dir.join("cmp.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("uniform,") && rows[2].starts_with("geometric,") && rows[3].starts_with("active,"));
    let hashes: Vec<String> = rows[1..].iter().map(|r| r.split(',').skip(4).collect::<Vec<_>>().join(",")).collect();
    assert!(hashes.iter().all(|h| h == &hashes[0]));
    assert!(dir.join("out/active/result.json").exists());

    paak(dir, &["run", "--config", "paak.toml", "--mode", "active", "--out-dir", "run1"]);
    paak(dir, &["run", "--config", "paak.toml", "--mode", "active", "--out-dir", "run2", "--jobs", "1"]);
    let a = json(&dir.join("run1/result.json"));
    let b = json(&dir.join("run2/result.json"));
    assert_eq!(a["energy"], b["energy"]);
    assert_eq!(a["pose"], b["pose"]);
    assert_eq!(a["config"]["seed"], 3);
    assert!(a["inputs"]["model"].is_string());
}

#[test]
fn failures_exit_nonzero_with_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_paak"))
        .current_dir(tmp.path())
        .args(["place", "missing.obj", "a.anim", "a.ftr", "--out", "r.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.obj"));
}
