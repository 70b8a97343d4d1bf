use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn proxycal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxycal"))
        .args(args)
        .current_dir(dir)
        .env_remove("PROXYCAL_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const QUICK: &str = r#"{"stage1":{"epochs":3,"d_latent":2},"stage2":{"epochs":3}}"#;

#[test]
fn gen_echoes_config_into_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = proxycal(dir.path(), &["gen", "--n", "1000", "--dz", "2", "--de", "10", "--alpha", "5", "--seed", "7", "--out", "d.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = json(&dir.path().join("d.manifest.json"));
    assert_eq!(m["alpha"], 5.0);
    assert_eq!(m["seed"], 7);
    assert_eq!((m["n"].as_u64(), m["d_z"].as_u64(), m["d_e"].as_u64()), (Some(1000), Some(2), Some(10)));
    let run = json(&dir.path().join("d.run.json"));
    assert_eq!(run["command"], "gen");
    assert_eq!(run["config"]["sigma_obs"], 0.1);
    assert_eq!(run["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn calibrate_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("quick.json"), QUICK).unwrap();
    for args in [
        vec!["gen", "--n", "400", "--dz", "2", "--alpha", "5", "--seed", "1", "--out", "d.csv"],
        vec!["train", "--input", "d.csv", "--config", "quick.json", "--out", "m.json"],
        vec!["calibrate", "--input", "d.csv", "--model", "m.json", "--out", "c.json"],
    ] {
        let o = proxycal(d, &args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    let first = fs::read(d.join("c.json")).unwrap();
    let o = proxycal(d, &["replay", "c.run.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = proxycal(d, &["calibrate", "--input", "d.csv", "--model", "m.json", "--out", "c2.json"]);
    assert!(o.status.success());
    assert_eq!(fs::read(d.join("c2.json")).unwrap(), first);
    assert_eq!(fs::read(d.join("c.json")).unwrap(), first);

    // any byte change to an input blocks the replay
    fs::write(d.join("d.csv"), fs::read_to_string(d.join("d.csv")).unwrap() + "\n").unwrap();
    let o = proxycal(d, &["replay", "c.run.json"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn errors_are_single_classified_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = proxycal(d, &["gen", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]:"));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);

    fs::write(d.join("bad.csv"), "E_1,Yproxy_1\n1,2\n").unwrap();
    let o = proxycal(d, &["sanity", "--input", "bad.csv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[schema]:"), "{}", stderr(&o));

    let o = proxycal(d, &["sanity", "--input", "absent.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.csv"));

    let o = proxycal(d, &["gen", "--n", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[parameter]:"));
}

#[test]
fn ident_check_modes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = proxycal(d, &["ident-check", "--random", "200", "--seed", "3", "--out", "r.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(json(&d.join("r.json"))["discrepancy"].as_f64().unwrap() <= 1e-12);
    let o = proxycal(d, &["ident-check", "--violating", "--out", "v.json"]);
    assert!(o.status.success());
    assert!(json(&d.join("v.json"))["adjustment"].as_f64().unwrap() > 0.01);
    let o = proxycal(d, &["ident-check"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_writes_cells_and_table_pivots_them() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"cells":[{"n":300,"alpha":5},{"n":300,"alpha":1,"noise":"poisson_scaled"}],
                 "seeds":[0],
                 "pipeline":{"folds":3,"stage1":{"epochs":2},"stage2":{"epochs":2}}}"#;
    fs::write(d.join("grid.json"), cfg).unwrap();
    let o = proxycal(d, &["eval", "--config", "grid.json", "--jobs", "2", "--out", "ev.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("ev.cells/cell_000.json").exists() && d.join("ev.cells/cell_001.json").exists());
    assert_eq!(json(&d.join("ev.json")).as_array().unwrap().len(), 2);
    assert_eq!(json(&d.join("ev.run.json"))["outputs"].as_array().unwrap().len(), 4);

    let o = proxycal(d, &["table", "--input", "ev.cells.csv", "--out", "t.md"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = fs::read_to_string(d.join("t.md")).unwrap();
    assert!(t.contains("α=1 poisson_scaled") && t.contains("α=5 gaussian"), "{t}");
    assert_eq!(t.lines().count(), 3);
}

#[test]
fn default_output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let o = Command::new(env!("CARGO_BIN_EXE_proxycal"))
        .args(["gen", "--n", "50"])
        .current_dir(dir.path())
        .env("PROXYCAL_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("dataset.csv").exists() && out.join("dataset.run.json").exists());
}
