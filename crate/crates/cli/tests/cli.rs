use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn langevin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_langevin")).args(args).output().unwrap()
}

fn run_with(dir: &Path, cmd: &str, toml: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{cmd}.in.toml"));
    fs::write(&cfg, toml).unwrap();
    let out = dir.join(cmd);
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    langevin(&args)
}

fn report(dir: &Path, cmd: &str) -> Value {
    let text = fs::read_to_string(dir.join(cmd).join(format!("{cmd}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Checks `required` keys recursively against the shipped schema.
fn check_required(schema: &Value, value: &Value, path: &str) {
    if let Some(req) = schema.get("required").and_then(Value::as_array) {
        for key in req {
            let key = key.as_str().unwrap();
            assert!(value.get(key).is_some(), "{path}: missing `{key}`");
        }
    }
    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
        for (k, sub) in props {
            if let Some(v) = value.get(k) {
                if let Some(c) = sub.get("const") {
                    assert_eq!(v, c, "{path}.{k}");
                }
                check_required(sub, v, &format!("{path}.{k}"));
            }
        }
    }
}

fn schema(cmd: &str) -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{cmd}.schema.json"));
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const LOG_COSH: &str = r#"
seed = 7
[potential]
family = "log_cosh"
v = [1.0, 2.0]
eps = 0.01
[simulation]
dt = 0.01
n_steps = 50
n_particles = 1000
record_every = 10
"#;

#[test]
fn empty_lambda_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "oracle-ou", "[oracle]\nlambda = []\n", &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("oracle.lambda"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "certify", "[certificate]\nsgrid = [2.0]\n", &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sgrid"), "{}", stderr(&o));
}

#[test]
fn simulate_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "simulate", "", &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"));
}

fn simulate_in(dir: &Path, toml: &str, seed: &str) {
    fs::write(dir.join("sim.toml"), toml).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_langevin"))
        .current_dir(dir)
        .args(["simulate", "--config", "sim.toml", "--out", "run", "--seed", seed])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let toml = "[simulation]\nn_particles = 500\nn_steps = 200\nrecord_every = 50\n";
    simulate_in(a.path(), toml, "11");
    simulate_in(b.path(), toml, "11");
    simulate_in(c.path(), toml, "12");
    for name in ["simulate_trajectory.csv", "simulate.json", "simulate.config.toml"] {
        let x = fs::read(a.path().join("run").join(name)).unwrap();
        let y = fs::read(b.path().join("run").join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    assert_ne!(
        fs::read(a.path().join("run/simulate_trajectory.csv")).unwrap(),
        fs::read(c.path().join("run/simulate_trajectory.csv")).unwrap()
    );
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "certify", "", &[]);
    assert!(o.status.success());
    let echo = dir.path().join("certify/certify.config.toml");
    let out2 = dir.path().join("again");
    let o2 = langevin(&["certify", "--config", echo.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(o2.status.success(), "{}", stderr(&o2));
    let r1 = report(dir.path(), "certify")["report"].clone();
    let r2: Value = serde_json::from_str(&fs::read_to_string(out2.join("certify.json")).unwrap()).unwrap();
    assert_eq!(r1, r2["report"]);
}

#[test]
fn quadratic_certificate_dominates_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "compare", "[potential]\nfamily = \"quadratic_diagonal\"\nv = [1.0, 4.0]\n", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = &report(dir.path(), "compare")["report"];
    assert_eq!(r["certificate"]["valid"], true);
    assert_eq!(r["comparison"]["all_dominate"], true);
    let rate = r["certificate"]["original_rate"].as_f64().unwrap();
    for row in r["exact"].as_array().unwrap() {
        assert!(row["hessian_rate"].as_f64().unwrap() >= row["constant_rate"].as_f64().unwrap());
        assert!(row["hessian_rate"].as_f64().unwrap() >= rate);
    }
    let csv = fs::read_to_string(dir.path().join("compare/compare.csv")).unwrap();
    assert!(csv.starts_with("lambda,baseline_rate,certificate_rate,dominates,margin"));
}

#[test]
fn large_gamma_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "[certificate.constants]\nalpha = 1.0\nbeta = 1.0\ngamma = 1000.0\n";
    let o = run_with(dir.path(), "certify", toml, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = &report(dir.path(), "certify")["report"];
    assert_eq!(r["certificate"]["valid"], false);
    assert_eq!(r["comparison"]["applicable"], false);
}

#[test]
fn audit_rejects_non_quadratic_potential() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "audit", LOG_COSH, &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unsupported potential"), "{}", stderr(&o));
}

#[test]
fn audit_certifies_witness_rates() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "[potential]\nfamily = \"quadratic_diagonal\"\nv = [1.0, 2.0]\n[audit]\nt_max = 4.0\nn_times = 60\n";
    let o = run_with(dir.path(), "audit", toml, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = &report(dir.path(), "audit")["report"];
    assert_eq!(r["audit"]["passed"], true);
    let rates: Vec<f64> = r["witnesses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| {
            assert_eq!(w["audit_passed"], true);
            w["rescaled_rate"].as_f64().unwrap()
        })
        .collect();
    for (got, want) in rates.iter().zip([1.0, 1.5, 1.9]) {
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn log_cosh_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "certify", LOG_COSH, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = &report(dir.path(), "certify")["report"];
    assert_eq!(r["certificate"]["valid"], true);
    assert!(r["comparison"]["sufficient_ratio"].as_f64().unwrap() < 1e-3);
    let o = run_with(dir.path(), "simulate", LOG_COSH, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
}

#[test]
fn reports_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("oracle-ou", "[oracle]\nw = [1.0]\nlambda = [2.0]\nn_times = 64\n"),
        ("simulate", "seed = 3\n[simulation]\nn_particles = 200\nn_steps = 100\nrecord_every = 50\n"),
        ("certify", ""),
        ("compare", ""),
        ("audit", "[audit]\nn_times = 20\neps_rates = [0.5]\n"),
    ];
    for (cmd, toml) in cases {
        let o = run_with(dir.path(), cmd, toml, &[]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        check_required(&schema(cmd), &report(dir.path(), cmd), cmd);
        let echo = fs::read_to_string(dir.path().join(cmd).join(format!("{cmd}.config.toml"))).unwrap();
        assert!(echo.starts_with("# format_version = 1\n"));
    }
}
