use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use renorm_plap_cli::manifest::{blob_hash, listed_hashes};

fn run(command: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_renorm-plap"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn zero_datum_without_noise_stays_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "zero.cfg",
        "n=7\nt_final=1/16\ndt=1/64\ns=0\nnoise=const:0\ninitial=zero\n",
    );
    let out = dir.path().join("out");
    let result = run("simulate", &cfg, &out);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));

    let mut reader = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5 * 7);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() == 0.0));

    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    let listed = listed_hashes(&manifest);
    assert_eq!(listed.len(), 2);
    for (hash, name) in listed {
        assert_eq!(hash, blob_hash(&fs::read(out.join(&name)).unwrap()), "{name}");
    }
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.cfg",
        "n=15\nt_final=1/8\ndt=1/64\ns=0\np=3\nnoise=sinprod:0.5\nseed=9\ninitial=bump:1\n",
    );
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    assert!(run("simulate", &cfg, &first).status.success());
    assert!(run("simulate", &first.join("manifest.txt"), &second).status.success());
    for name in ["trajectory.csv", "checks.csv", "manifest.txt"] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn seed_override_changes_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", "n=7\nt_final=1/16\ndt=1/64\ns=0\nseed=1\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run("simulate", &cfg, &a).status.success());
    let status = Command::new(env!("CARGO_BIN_EXE_renorm-plap"))
        .args(["simulate", "--seed", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(status.status.success());
    assert_ne!(
        fs::read(a.join("trajectory.csv")).unwrap(),
        fs::read(b.join("trajectory.csv")).unwrap()
    );
    assert!(fs::read_to_string(b.join("manifest.txt"))
        .unwrap()
        .contains("\nseed=2\n"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "n=7\nbogus_key=1\n");
    let out = dir.path().join("out");
    let result = run("simulate", &cfg, &out);
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("bogus_key"));
    assert!(!out.exists());
}

#[test]
fn invalid_value_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "p=0.5\n");
    let result = run("simulate", &cfg, &dir.path().join("out"));
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains("invalid value `0.5` for `p`"));
}

#[test]
fn verify_renorm_reports_decreasing_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "renorm.cfg",
        "n=15\nt_final=1/4\ndt=1/32\nlevels=3\nnoise=const:0.2\ninitial=eigenmode:2\nfamily=compact_s:1:3\n",
    );
    let out = dir.path().join("out");
    let result = run("verify-renorm", &cfg, &out);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stdout));

    let mut reader = csv::Reader::from_path(out.join("residuals.csv")).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "residual").unwrap();
    let residuals: Vec<f64> = reader.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(residuals.len(), 3);
    assert!(residuals.windows(2).all(|w| w[1] < w[0]), "{residuals:?}");
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "flat.cfg",
        "n=3\nt_final=1/4\ndt=1/4\nlevels=2\nnoise=const:0\ninitial=zero\n",
    );
    let out = dir.path().join("out");
    let result = run("verify-renorm", &cfg, &out);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stdout).contains("FAIL renorm_residual_decrease"));
    assert!(out.join("manifest.txt").exists());
}
