use std::path::Path;
use std::process::{Command, Output};

use towerlab::runner::{rows_from_csv, ExperimentConfig};

const LD_FIXTURE: &str = r#"
seed = 42
functional = "ld"
n_list = [2, 4, 8]
epsilon = 0.25
horizon = 12
n_orbits = 50000

[system]
kind = "tower"
branches = [[0.5, 1], [0.5, 2]]
theta = 0.5
gamma = 0.5

[observable]
kind = "level_indicator"
"#;

fn towerlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_towerlab"))
        .args(args)
        .env("TOWERLAB_OUT", out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn csv_bytes_do_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ld.toml", LD_FIXTURE);
    let mut csvs = Vec::new();
    for threads in ["1", "2", "4"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = towerlab(&["estimate", "--config", &cfg, "--threads", threads, "--out", out.to_str().unwrap()], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(out.join("ld.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert!(text.starts_with("n,value,stderr,samples\n2,"));
}

#[test]
fn envelope_reruns_to_the_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ld.toml", LD_FIXTURE);
    let o = towerlab(&["estimate", "--config", &cfg, "--functional", "mld"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let env: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("mld.json")).unwrap()).unwrap();
    assert_eq!(env["seed"], 42);
    assert_eq!(env["config_hash"].as_str().unwrap().len(), 64);
    assert!(env["wall_time_seconds"].as_f64().is_some());
    let cfg2: ExperimentConfig = serde_json::from_value(env["config"].clone()).unwrap();
    let again = write_config(dir.path(), "again.toml", &cfg2.to_toml());
    let out2 = dir.path().join("again");
    let o = towerlab(&["estimate", "--config", &again, "--out", out2.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("mld.csv")).unwrap(), std::fs::read(out2.join("mld.csv")).unwrap());
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let no_eps = LD_FIXTURE.replace("epsilon = 0.25\n", "");
    let cfg = write_config(dir.path(), "bad.toml", &no_eps);
    let o = towerlab(&["estimate", "--config", &cfg, "--functional", "mld"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
    let o = towerlab(&["estimate", "--config", &cfg, "--functional", "mld", "--epsilon", "0.25"], dir.path());
    assert!(o.status.success());
    let o = towerlab(&["oracle-compare", "--config", &cfg, "--n-list", ""], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let big = LD_FIXTURE.replace("n_orbits = 50000", "n_orbits = 10").replace("[0.5, 1], [0.5, 2]", "[0.5, 1], [0.5, 0]");
    let cfg = write_config(dir.path(), "bad.toml", &big);
    let o = towerlab(&["estimate", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oracle_compare_passes_and_catches_a_corrupted_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let o = towerlab(&["oracle-compare", "--orbits", "30000"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(dir.path().join("oracle.json").exists());
    let o = towerlab(&["oracle-compare", "--orbits", "30000", "--corrupt-bias", "0.05"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fit_chains_on_emitted_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ld.toml", LD_FIXTURE);
    let o = towerlab(&["estimate", "--config", &cfg, "--n-list", "1,2,3,4,6"], dir.path());
    assert!(o.status.success());
    let csv = dir.path().join("ld.csv");
    let rows = rows_from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    let o = towerlab(
        &["fit", "--input", csv.to_str().unwrap(), "--family", "polynomial", "--n-min", "2", "--n-max", "6"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(model["fitted"], true, "{model}");
    assert_eq!(model["points_used"], 4);
    assert!(model["beta"].as_f64().unwrap() > 1.0, "{model}");
    assert!(dir.path().join("fit.json").exists());
}

#[test]
fn synth_tower_round_trips_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[system]\nkind = \"tower\"\nbranches = [[0.1, 1], [0.2, 3], [0.7, 5]]\ntheta = 0.3\ngamma = 0.7\npast_depth = 5\n";
    let cfg = write_config(dir.path(), "t.toml", text);
    assert!(towerlab(&["synth-tower", "--config", &cfg], dir.path()).status.success());
    let schema = std::fs::read_to_string(dir.path().join("schema.toml")).unwrap();
    let wrapped = format!("[system]\nkind = \"tower\"\n{schema}");
    let cfg2 = write_config(dir.path(), "t2.toml", &wrapped);
    let out2 = dir.path().join("second");
    assert!(towerlab(&["synth-tower", "--config", &cfg2, "--out", out2.to_str().unwrap()], dir.path()).status.success());
    assert_eq!(schema, std::fs::read_to_string(out2.join("schema.toml")).unwrap());
    assert_eq!(ExperimentConfig::from_toml(text).unwrap().system, ExperimentConfig::from_toml(&wrapped).unwrap().system);

    let syn = "[system]\nkind = \"synthetic_tower\"\ntail = { kind = \"polynomial\", beta = 1.0, r_max = 1000 }\n";
    let cfg = write_config(dir.path(), "s.toml", syn);
    let o = towerlab(&["synth-tower", "--config", &cfg], dir.path());
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["n_branches"], 1000);
    assert!(summary["truncated_mass"].as_f64().unwrap() > 0.0);
}

#[test]
fn billiard_and_catalog_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.toml", "[system]\nkind = \"semidispersing\"\na = 2.0\nb = 2.0\nr = 0.5\n");
    assert!(towerlab(&["billiard", "--config", &cfg, "--steps", "20", "--seed", "4"], dir.path()).status.success());
    let orbit = std::fs::read_to_string(dir.path().join("orbit.csv")).unwrap();
    assert!(orbit.starts_with("step,s,psi\n"));
    assert_eq!(orbit.lines().count(), 22);

    let o = towerlab(&["catalog", "flowers"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["beta"]["exact"], 2.0);
    let o = towerlab(&["catalog", "sinai"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}
