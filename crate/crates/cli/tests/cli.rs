use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qemlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qemlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

struct Case {
    dir: TempDir,
}

impl Case {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn config(&self, name: &str, json: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        fs::write(&p, json).unwrap();
        p
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
        let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        qemlab(&args)
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TERNARY: &str = r#"{"schema_version": 1, "system": "ternary_hole", "grid": {"resolution": 2187}, "noise": {"epsilon": 1e-3}}"#;

#[test]
fn spectrum_ternary() {
    let c = Case::new();
    let cfg = c.config("c.json", TERNARY);
    let out = c.out("o");
    let o = c.run("spectrum", &cfg, &out, &["--matrix", "binary"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("spectrum.json"));
    let lambda = s["lambda"].as_f64().unwrap();
    assert!((0.647..=0.687).contains(&lambda), "{lambda}");
    let qem = qemlab::io::read_qem_csv(&fs::read_to_string(out.join("qem.csv")).unwrap(), 2187).unwrap();
    assert!((qem.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let m = qemlab::io::read_matrix(&mut fs::File::open(out.join("matrix.bin")).unwrap()).unwrap();
    assert_eq!(m.nnz() as u64, s["nnz"].as_u64().unwrap());
    assert_eq!(m.meta.resolution, 2187);
}

#[test]
fn spectrum_is_deterministic() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "open_baker", "grid": {"resolution": 27}, "noise": {"epsilon": 0.01}, "seed": 5}"#,
    );
    let (a, b) = (c.out("a"), c.out("b"));
    assert!(c.run("spectrum", &cfg, &a, &["--matrix", "text"]).status.success());
    assert!(c.run("spectrum", &cfg, &b, &["--matrix", "text", "--threads", "1"]).status.success());
    for f in ["spectrum.json", "qem.csv", "config.json", "matrix.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn json_format_writes_vectors_as_json() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "five_hole", "grid": {"resolution": 125}, "noise": {"epsilon": 0}}"#,
    );
    let out = c.out("o");
    assert!(c.run("spectrum", &cfg, &out, &["--format", "json"]).status.success());
    let v = json(&out.join("qem.json"));
    assert_eq!(v["qem"].as_array().unwrap().len(), 125);
    assert!((json(&out.join("spectrum.json"))["lambda"].as_f64().unwrap() - 0.6).abs() < 1e-10);
}

#[test]
fn config_errors_have_codes() {
    let c = Case::new();
    let out = c.out("o");
    let cases = [
        (r#"{"schema_version": 1, "system": "ternary_hole", "grid": {"resolution": 0}}"#, "E004"),
        (r#"{"schema_version": 1, "system": "ternary_hole", "noise": {"epsilon": -1e-3}}"#, "E003"),
        (r#"{"schema_version": 1, "system": "tent"}"#, "E005"),
        (r#"{"schema_version": 2, "system": "ternary_hole"}"#, "E002"),
        (r#"{"schema_version": 1, "system": "ternary_hole", "grdi": {}}"#, "E001"),
        (r#"{"schema_version": 1}"#, "E011"),
    ];
    for (i, (text, code)) in cases.iter().enumerate() {
        let cfg = c.config(&format!("c{i}.json"), text);
        let o = c.run("spectrum", &cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains(code), "{text}: {}", stderr(&o));
    }
    let o = qemlab(&["spectrum", "--config", c.out("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mc_averages() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "ternary_hole", "noise": {"epsilon": 1e-3}, "seed": 3,
            "mc": {"n": 2000, "n_particles": 5000,
                   "observables": [{"kind": "coordinate", "axis": 0}, {"kind": "constant", "value": 1}]}}"#,
    );
    let out = c.out("o");
    let o = c.run("mc", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = json(&out.join("mc.json"));
    let avg = s["conditioned_average"].as_array().unwrap();
    let se = s["standard_error"].as_array().unwrap();
    let (m, e) = (avg[0].as_f64().unwrap(), se[0].as_f64().unwrap());
    assert!((m - 0.5).abs() <= 3.0 * e, "{m} +- {e}");
    assert_eq!(avg[1].as_f64().unwrap(), 1.0);
    assert!(fs::read_to_string(out.join("mass.csv")).unwrap().starts_with("time,log_mass"));
}

#[test]
fn mc_extinction_exit_code() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "ternary_hole", "noise": {"epsilon": 0},
            "mc": {"n": 50, "n_particles": 100, "start": {"kind": "point", "x": [0.5, 0]}}}"#,
    );
    let o = c.run("mc", &cfg, &c.out("o"), &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("ensemble extinct"), "{}", stderr(&o));
}

#[test]
fn sweep_table() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "ternary_hole", "grid": {"resolution": 2187},
            "noise": {"epsilon": [1e-3, 1e-2, 3e-3]}}"#,
    );
    let out = c.out("o");
    let o = c.run("sweep", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<String>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let col = |k: usize| rows.iter().map(|r| r[k].parse::<f64>().unwrap()).collect::<Vec<_>>();
    assert_eq!(col(0), vec![1e-2, 3e-3, 1e-3]);
    assert!(col(1).iter().all(|&l| l > 0.0 && l <= 1.0));
    for k in [3, 4] {
        let v = col(k);
        assert!(v[0] > v[1] && v[1] > v[2], "column {k}: {v:?}");
    }
    for i in 0..3 {
        assert!(out.join(format!("qem_eps_{i}.csv")).exists());
    }
    let series = fs::read_to_string(out.join("lambda_vs_epsilon.dat")).unwrap();
    assert_eq!(series.lines().count(), 3);
    assert!(out.join("discrepancy_vs_epsilon.dat").exists());
    assert!(json(&out.join("timings.json")).as_object().unwrap().len() >= 3);

    // compare the coarsest and finest qem files
    let o = qemlab(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        out.join("qem_eps_0.csv").to_str().unwrap(),
        out.join("qem_eps_2.csv").to_str().unwrap(),
        "--dictionary",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let vals: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!(vals[0] > 0.0 && vals[1] > 0.0, "{text}");
    let o = qemlab(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        out.join("qem_eps_1.csv").to_str().unwrap(),
        out.join("qem_eps_1.csv").to_str().unwrap(),
        "--format",
        "json",
    ]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["weak_star_discrepancy"].as_f64(), Some(0.0));
}

#[test]
fn sweep_needs_two_epsilons() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "ternary_hole", "noise": {"epsilon": [1e-3]}}"#,
    );
    let o = c.run("sweep", &cfg, &c.out("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("E008"));
}

#[test]
fn sub_markov_sweep_without_reference() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "smooth_perturbed", "grid": {"resolution": 243},
            "weight": {"log_weight": {"kind": "constant", "value": -0.2}},
            "noise": {"epsilon": [0.01, 0.003]}}"#,
    );
    let out = c.out("o");
    assert!(c.run("sweep", &cfg, &out, &["--format", "json"]).status.success());
    let rows = json(&out.join("sweep.json"));
    for r in rows.as_array().unwrap() {
        let l = r["lambda"].as_f64().unwrap();
        assert!(l > 0.0 && l <= 1.0);
        assert!(r["discrepancy"].is_null());
    }
}

#[test]
fn filtration_example_graph() {
    let c = Case::new();
    let graph = qemlab::ConnectionGraph::seven_node_example().to_json();
    let cfg = c.config("c.json", &format!(r#"{{"schema_version": 1, "filtration": {{"graph": {graph}}}}}"#));
    let out = c.out("o");
    let o = c.run("filtration", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sequence.txt")).unwrap(), "1>4>2>7>5>6>3\n");
    let f = json(&out.join("filtration.json"));
    assert_eq!(f["subgraphs"], serde_json::json!([[1, 4, 2, 7], [5, 6], [3]]));
}

#[test]
fn cyclic_graph_is_rejected_with_witness() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "filtration": {"graph": {
            "nodes": [{"id": 1, "pressure": -0.1}, {"id": 2, "pressure": -0.2}, {"id": 3, "pressure": -0.3}],
            "edges": [[1, 2], [2, 3], [3, 1]]}}}"#,
    );
    let o = c.run("filtration", &cfg, &c.out("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("E007") && err.contains("1 -> 2 -> 3"), "{err}");
    let tie = c.config(
        "t.json",
        r#"{"schema_version": 1, "filtration": {"graph": {
            "nodes": [{"id": 1, "pressure": -0.1}, {"id": 2, "pressure": -0.1}], "edges": []}}}"#,
    );
    let o = c.run("filtration", &tie, &c.out("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("E006"));
}

#[test]
fn two_repeller_strata() {
    let c = Case::new();
    let cfg = c.config(
        "c.json",
        r#"{"schema_version": 1, "system": "two_repeller", "grid": {"resolution": 1215}, "noise": {"epsilon": 1e-3},
            "filtration": {
              "graph": {"nodes": [{"id": 1, "pressure": -0.4054651081081644}, {"id": 2, "pressure": -0.5108256237659907}], "edges": []},
              "strata": {
                "1": {"label": "left", "boxes": [{"lo": [0, 0], "hi": [1, 1]}]},
                "2": {"label": "right", "boxes": [{"lo": [2, 0], "hi": [3, 1]}]}}}}"#,
    );
    let out = c.out("o");
    let o = c.run("filtration", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(&out.join("stratified.json"));
    assert_eq!(r["consistent"], Value::Bool(true));
    assert!((r["global_lambda"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-3);
    let strata = r["strata"].as_array().unwrap();
    let lambda_of = |node: u64| {
        strata.iter().find(|s| s["node"].as_u64() == Some(node)).unwrap()["lambda"].as_f64().unwrap()
    };
    assert!((lambda_of(1) - 2.0 / 3.0).abs() < 1e-3);
    assert!((lambda_of(2) - 0.6).abs() < 1e-3);
    assert!(out.join("qem_node_2.csv").exists());
}
