use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/toy.toml")
}

fn rdat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdat")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn unknown_arguments_are_validation_errors() {
    assert_eq!(code(&rdat(&["report", "--bogus"])), 1);
    assert_eq!(code(&rdat(&["--help"])), 0);
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = [1]\nnot_a_field = 3\n").unwrap();
    let out = rdat(&["report", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_field"));
}

#[test]
fn missing_checkpoint_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = rdat(&["attack", "--config", toy().to_str().unwrap(), "--model", d, "--out", d]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain-file");
    std::fs::write(&file, "x").unwrap();
    let out = rdat(&["synth-data", "--out", file.join("sub").to_str().unwrap(), "--nodes", "5", "--timesteps", "300"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_then_attack_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy();
    let cfg = cfg.to_str().unwrap();
    let train_out = dir.path().join("train");
    assert_eq!(code(&rdat(&["train", "--config", cfg, "--out", train_out.to_str().unwrap()])), 0);
    let model = train_out.join("model");
    let attack_out = dir.path().join("attack");
    let out = rdat(&["attack", "--config", cfg, "--model", model.to_str().unwrap(), "--strategy", "degree", "--lambda", "50", "--out", attack_out.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().any(|l| l.starts_with("clean")));
    assert!(table.lines().any(|l| l.starts_with("degree")));
    assert!(attack_out.join("attack.csv").is_file());
    let bad = rdat(&["attack", "--config", cfg, "--model", model.to_str().unwrap(), "--lambda", "150", "--out", attack_out.to_str().unwrap()]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn toy_sweep_draws_four_point_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = rdat(&["sweep", "--config", toy().to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    for defense in ["none", "at", "rdat"] {
        for attack in ["random", "degree", "pagerank", "centrality", "tnds"] {
            let lambdas: Vec<&str> = rows.iter().filter(|r| &r[0] == defense && &r[1] == attack).map(|r| &r[2]).collect();
            assert_eq!(lambdas, ["40", "60", "80", "100"], "{defense}/{attack}");
        }
    }
    assert!(rows.iter().all(|r| &r[8] == "ok"));
    let svgs = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg")).count();
    assert_eq!(svgs, 5);
}
