use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
alphas = [0.1]

[data.synthetic]
n_patients = 600
n_hospitals = 20
seed = 4

[hierarchy.patient]
n_trees = 10
[hierarchy.hospital]
n_trees = 8
[hierarchy.region]
n_trees = 5

[bayes]
warmup = 150
draws = 100
"#;

fn hybridcp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridcp")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_then_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let gen = dir.path().join("gen");
    let o = hybridcp(&["generate", "--config", &cfg, "--out", gen.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["data.csv", "schema.toml", "summary.json"] {
        assert!(gen.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(gen.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], 600);

    let ing = dir.path().join("ing");
    let o = hybridcp(&[
        "ingest",
        "--csv",
        gen.join("data.csv").to_str().unwrap(),
        "--schema",
        gen.join("schema.toml").to_str().unwrap(),
        "--out",
        ing.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(gen.join("data.csv")).unwrap(), std::fs::read(ing.join("data.csv")).unwrap());
}

#[test]
fn run_writes_artifacts_and_report_renders_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    let o = hybridcp(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--allow-unconverged"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in hybridcp::pipeline::ARTIFACTS {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = hybridcp(&["report", "--in", out.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&csv), 0);
    assert_eq!(String::from_utf8(csv.stdout).unwrap(), std::fs::read_to_string(out.join("metrics.csv")).unwrap());
    let text = hybridcp(&["report", "--in", out.to_str().unwrap(), "--format", "text"]);
    assert_eq!(code(&text), 0);
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.contains("hybrid") && text.contains("conformal") && text.contains("bayesian"), "{text}");
}

#[test]
fn overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("run");
    let o = hybridcp(&[
        "run", "--config", &cfg, "--out", out.to_str().unwrap(), "--allow-unconverged", "--folds", "3", "--alphas", "0.2,0.05", "--seed", "9",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = hybridcp::RunReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 3);
    assert_eq!(report.config.alphas, [0.2, 0.05]);
    assert_eq!(report.config.seed, 9);
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("sweep");
    let o = hybridcp(&[
        "sweep", "--config", &cfg, "--param", "gamma", "--values", "0,1", "--out", out.to_str().unwrap(), "--allow-unconverged", "--folds", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("gamma=0").join("report.json").exists());
    assert!(out.join("gamma=1").join("report.json").exists());
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.starts_with("param,value,method,alpha,") && table.contains("\ngamma,1,hybrid,0.1,"), "{table}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let unknown = write_config(dir.path(), "u.toml", &format!("bogus_key = 1\n{SMALL}"));
    let o = hybridcp(&["run", "--config", &unknown, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("bogus_key"));

    let bad_alpha = write_config(dir.path(), "a.toml", &SMALL.replace("alphas = [0.1]", "alphas = [1.5]"));
    assert_eq!(code(&hybridcp(&["run", "--config", &bad_alpha, "--out", out.to_str().unwrap()])), 2);

    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = hybridcp(&["sweep", "--config", &cfg, "--param", "nonsense", "--values", "1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&hybridcp(&["run", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "age,hospital,region,los\n40,H1,R1,3\n50,H2,R1,-2\n").unwrap();
    let o = hybridcp(&["ingest", "--csv", csv.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let nested = dir.path().join("nested.csv");
    std::fs::write(&nested, "age,hospital,region,los\n40,H1,R1,3\n50,H1,R2,2\n60,H2,R2,4\n").unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[data.csv]\npath = \"nested.csv\"\n");
    let o = hybridcp(&["run", "--config", &cfg, "--out", dir.path().join("o2").to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn unconverged_sampler_exits_4_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let starved = SMALL.replace("warmup = 150", "warmup = 0\nrotation = false");
    let cfg = write_config(dir.path(), "c.toml", &starved);
    let out = dir.path().join("o");
    let o = hybridcp(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(!out.join("report.json").exists());
    let o = hybridcp(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--allow-unconverged"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
