use std::path::Path;
use std::process::{Command, Output};

fn parint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const CONVERGENCE: &str = r#"
algorithm = "a4"
n_grid = [16, 64, 256]
replications = 3
seed = 11
[spec]
r = 1
p = 2
q = 2
d1 = 1
d2 = 1
[instance]
kind = "smooth"
"#;

#[test]
fn rates_report_for_the_maximal_gap() {
    let out = parint(&["rates", "--r", "1", "--p", "4", "--q", "inf", "--d1", "1", "--d2", "1"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["theta"], 0.125);
    assert_eq!(v["theta_exact"], "1/8");
}

#[test]
fn rates_flags_for_the_basic_case() {
    let out = parint(&["rates", "--r", "1", "--p", "2", "--q", "2", "--d1", "1", "--d2", "1"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sigma1"], 0);
    assert_eq!(v["beta1"], 0);
    assert_eq!(v["phi1_branch"], "mixed");
    assert_eq!(v["theta"], serde_json::Value::Null);
}

#[test]
fn unsolvable_spec_is_a_config_error() {
    // r/d1 = 1/4 < 1/p - 1/q = 1/2 with q finite.
    let out = parint(&["rates", "--r", "1", "--p", "1", "--q", "2", "--d1", "4", "--d2", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not solvable"));
}

#[test]
fn convergence_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", CONVERGENCE);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = parint(&["convergence", "--config", &cfg, "--out", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,eval_total,err_mean,err_stderr,phi_theory,seed");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("# fitted slope"));

    let threaded = parint(&["--threads", "1", "convergence", "--config", &cfg]);
    assert_eq!(String::from_utf8(threaded.stdout).unwrap(), text);

    let other = parint(&["convergence", "--config", &cfg, "--seed", "12"]);
    assert!(other.status.success());
    assert_ne!(String::from_utf8(other.stdout).unwrap(), text);
}

#[test]
fn unknown_keys_and_bad_grids_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "u.toml", &format!("wall_time = 1\n{CONVERGENCE}"));
    assert_eq!(parint(&["convergence", "--config", &unknown]).status.code(), Some(2));
    let nested = write_config(dir.path(), "n.toml", &format!("{CONVERGENCE}\nwall_time = 1\n"));
    assert_eq!(parint(&["convergence", "--config", &nested]).status.code(), Some(2));

    let below = write_config(dir.path(), "b.toml", &CONVERGENCE.replace("[16, 64, 256]", "[2, 64]"));
    assert_eq!(parint(&["convergence", "--config", &below]).status.code(), Some(2));

    let unsorted = write_config(dir.path(), "s.toml", &CONVERGENCE.replace("[16, 64, 256]", "[64, 16]"));
    assert_eq!(parint(&["convergence", "--config", &unsorted]).status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    assert_eq!(
        parint(&["convergence", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn gap_rejects_specs_outside_the_gap_regime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.toml", CONVERGENCE);
    let out = parint(&["gap", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gap_emits_matched_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "g.toml",
        r#"
n_grid = [256, 1024]
replications = 2
[spec]
r = 1
p = 4
q = "inf"
d1 = 1
d2 = 1
[instance]
kind = "bump"
"#,
    );
    let out = parint(&["gap", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let a4: f64 = rec[col("eval_a4")].parse().unwrap();
        let a5: f64 = rec[col("eval_a5")].parse().unwrap();
        assert!((a4 - a5).abs() <= 0.1 * a4);
        assert!(rec[col("ratio")].parse::<f64>().unwrap() > 0.0);
        rows += 1;
    }
    assert_eq!(rows, 2);
}

#[test]
fn missing_config_is_a_config_error() {
    assert_eq!(parint(&["convergence"]).status.code(), Some(2));
    assert_eq!(parint(&["bogus"]).status.code(), Some(2));
}
