//! End-to-end runs of the `overlap-loc` binary on a short simulated drive.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_overlap-loc"))
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(out.status.success(), "{:?} failed:\n{}", cmd, String::from_utf8_lossy(&out.stderr));
    out
}

/// Simulated dataset and a coarse map, built once for all tests.
fn workspace() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-workspace");
        let _ = std::fs::remove_dir_all(&dir);
        run(bin().args(["simulate", "--world-seed", "7", "--traj-seed", "11", "--query-frames", "40", "--out"]).arg(dir.join("data")));
        run(bin()
            .args(["build-map", "--resolution", "2"])
            .arg("--scans")
            .arg(dir.join("data/map/scans"))
            .arg("--poses")
            .arg(dir.join("data/map/poses.txt"))
            .arg("--out")
            .arg(dir.join("map.ovmg")));
        dir
    })
}

fn localize(model: &str, seed: u64, out: &str) -> String {
    let dir = workspace();
    let out = dir.join(out);
    run(bin()
        .args(["localize", "--particles", "400", "--beam-samples", "20", "--model", model])
        .args(["--seed", &seed.to_string()])
        .arg("--map")
        .arg(dir.join("map.ovmg"))
        .arg("--scans")
        .arg(dir.join("data/query/scans"))
        .arg("--odometry")
        .arg(dir.join("data/query/odometry.txt"))
        .arg("--out")
        .arg(&out));
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn simulate_writes_both_drives() {
    let dir = workspace();
    for f in ["world.json", "query_world.json", "config.json", "map/poses.txt", "query/odometry.txt", "query/scans/000039.bin"] {
        assert!(dir.join("data").join(f).exists(), "{f}");
    }
    assert!(dir.join("map.cloud.bin").exists());
}

#[test]
fn localize_is_bit_identical_for_a_seed() {
    for model in ["overlap", "histogram", "beamend"] {
        let a = localize(model, 5, &format!("{model}_a.txt"));
        let b = localize(model, 5, &format!("{model}_b.txt"));
        assert_eq!(a, b, "{model}");
        let lines: Vec<&str> = a.lines().collect();
        assert_eq!(lines.len(), 40);
        for (i, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(' ').collect();
            assert_eq!(fields.len(), 7, "{line}");
            assert_eq!(fields[0], i.to_string());
            assert!(fields[4] == "0" || fields[4] == "1");
        }
    }
    assert_ne!(localize("overlap", 5, "s5.txt"), localize("overlap", 6, "s6.txt"));
}

#[test]
fn evaluate_writes_a_report() {
    let dir = workspace();
    let report = dir.join("report");
    run(bin()
        .args(["evaluate", "--models", "overlap,histogram", "--particles", "200,400", "--runs", "2", "--window", "30"])
        .arg("--map")
        .arg(dir.join("map.ovmg"))
        .arg("--dataset")
        .arg(dir.join("data/query"))
        .arg("--out")
        .arg(&report));
    let csv = std::fs::read_to_string(report.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(report.join("runs/histogram_n400_run1.txt").exists());
    assert!(report.join("evaluations.csv").exists());
}

#[test]
fn corrupt_map_is_reported() {
    let dir = workspace();
    let bad = dir.join("bad.ovmg");
    std::fs::write(&bad, b"NOPE\x01\x00\x00\x00").unwrap();
    let out = bin()
        .args(["localize", "--particles", "10"])
        .arg("--map")
        .arg(&bad)
        .arg("--scans")
        .arg(dir.join("data/query/scans"))
        .arg("--odometry")
        .arg(dir.join("data/query/odometry.txt"))
        .arg("--out")
        .arg(dir.join("never.txt"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_model_is_rejected() {
    let out = bin().args(["localize", "--model", "sonar", "--map", "m", "--scans", "s", "--odometry", "o", "--out", "t"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
}
