use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nonlocal_cli::{parse_config, run, Command as Sub, RunConfig};

fn examples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples")
}

fn example_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(examples_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    files
}

fn nonlocal(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nonlocal"));
    cmd.args(args).arg("--quiet").arg("--output-dir").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Every key path of a TOML table, including keys of nested tables.
fn key_paths(table: &toml::Table, prefix: &[String], out: &mut Vec<Vec<String>>) {
    for (k, v) in table {
        let mut path = prefix.to_vec();
        path.push(k.clone());
        if let toml::Value::Table(t) = v {
            key_paths(t, &path, out);
        }
        out.push(path);
    }
}

fn rename_key(table: &mut toml::Table, path: &[String], suffix: &str) {
    if path.len() == 1 {
        let v = table.remove(&path[0]).unwrap();
        table.insert(format!("{}{suffix}", path[0]), v);
    } else if let Some(toml::Value::Table(t)) = table.get_mut(&path[0]) {
        rename_key(t, &path[1..], suffix);
    }
}

#[test]
fn every_example_config_parses() {
    let files = example_files();
    assert!(files.len() >= 5);
    for f in files {
        let text = fs::read_to_string(&f).unwrap();
        parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
    }
}

#[test]
fn every_key_mutation_of_every_example_fails() {
    for f in example_files() {
        let text = fs::read_to_string(&f).unwrap();
        let doc: toml::Table = text.parse().unwrap();
        let mut paths = Vec::new();
        key_paths(&doc, &[], &mut paths);
        for path in paths {
            for suffix in ["x", "_"] {
                let mut mutated = doc.clone();
                rename_key(&mut mutated, &path, suffix);
                let text = toml::to_string(&mutated).unwrap();
                assert!(
                    parse_config(&text).is_err(),
                    "{}: renaming `{}` was accepted",
                    f.display(),
                    path.join(".")
                );
            }
        }
    }
}

#[test]
fn example_configs_round_trip() {
    for f in example_files() {
        let cfg = parse_config(&fs::read_to_string(&f).unwrap()).unwrap();
        let again: RunConfig = parse_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again, "{}", f.display());
    }
}

#[test]
fn selftest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = nonlocal(&["selftest"], None, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("selftest.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["passed"], true);
}

#[test]
fn zero_forcing_final_row_is_exponential_decay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[grid]
n = 11
[nonlinearity]
kind = "zero"
[simulate]
tau = 0.5
t_end = 2.0
initial = { kind = "sine", amp = 1.0, offset = 0.5 }
"#,
    );
    let out = nonlocal(&["simulate"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("out/trajectory.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 12);
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    let (first, last) = (&rows[0], rows.last().unwrap());
    assert_eq!(last[0], 2.0);
    let decay = (-1.5f64).exp();
    for (u0, u) in first[1..].iter().zip(&last[1..]) {
        assert!((u - decay * u0).abs() < 1e-14, "{u} vs {}", decay * u0);
    }
}

#[test]
fn compare_with_inverted_ordering_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(examples_dir().join("compare.toml"))
        .unwrap()
        .replace(
            "lower = { kind = \"constant\", value = 0.5 }",
            "lower = { kind = \"constant\", value = 1.2 }",
        );
    let cfg = write_config(dir.path(), &text);
    let out = nonlocal(&["compare"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/compare.json").exists());
}

#[test]
fn compare_example_reports_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let out = nonlocal(&["compare"], Some(&examples_dir().join("compare.toml")), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["ordered"], true);
    assert!(report["min_gap_lower"].as_f64().unwrap() > 0.0);
    assert!(report["first_violation"].is_null());
}

#[test]
fn unknown_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[nonlinearity]\nkind = \"zero\"\n[kernell]\nshape = \"uniform\"\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_nonlocal"))
        .args(["simulate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kernell"));
}

#[test]
fn missing_config_or_section_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(nonlocal(&["attractor"], None, dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), "[nonlinearity]\nkind = \"zero\"\n");
    assert_eq!(nonlocal(&["attractor"], Some(&cfg), dir.path()).status.code(), Some(2));
}

#[test]
fn lyapunov_needs_an_autonomous_limit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[nonlinearity]\nkind = \"linear\"\nslope = 0.5\n[lyapunov]\nt_end = 1.0\ninitial = { kind = \"constant\", value = 0.1 }\n",
    );
    assert_eq!(nonlocal(&["lyapunov"], Some(&cfg), dir.path()).status.code(), Some(2));
}

#[test]
fn lyapunov_example_writes_energy_table_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = nonlocal(&["lyapunov"], Some(&examples_dir().join("lyapunov.toml")), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("lyapunov.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, ["t", "L", "L1", "L2", "I", "R", "dist"]);
    let last = rdr.records().last().unwrap().unwrap();
    assert!(last[6].parse::<f64>().unwrap() < 1e-3);
    let verdict: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("verdict.json")).unwrap()).unwrap();
    assert_eq!(verdict["verdict"]["outcome"], "converged");
    assert_eq!(verdict["verdict"]["single_equilibrium"], true);
    assert_eq!(verdict["equilibria"]["count"], 3);
}

#[test]
fn attractor_runs_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
rng_seed = 7
[grid]
n = 31
[kernel]
shape = "gaussian"
sigma = 0.3
[nonlinearity]
kind = "periodic"
amp = 1.5
c = 0.5
omega = 2.0
[attractor]
t = 1.0
depths = [2.0, 4.0, 8.0]
"#,
    );
    let mut outputs = Vec::new();
    for threads in ["1", "6"] {
        let out_dir = dir.path().join(threads);
        let out = nonlocal(&["attractor", "--threads", threads], Some(&cfg), &out_dir);
        assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
        outputs.push((
            fs::read(out_dir.join("attractor.json")).unwrap(),
            fs::read(out_dir.join("members.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let report: serde_json::Value = serde_json::from_slice(&outputs[0].0).unwrap();
    assert_eq!(report["members_csv_path"], "members.csv");
    assert_eq!(report["residuals"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[grid]
n = 21
[nonlinearity]
kind = "saturating"
amp = 2.0
[sweep]
betas = [0.2, 0.1]
initial = { kind = "constant", value = 1.0 }
depths = [5.0, 10.0]
"#,
    );
    let out = nonlocal(&["sweep"], Some(&cfg), dir.path());
    // attractor distances shrink with beta but stay above the tolerance
    assert_eq!(out.status.code(), Some(1));
    let mut rdr = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, ["beta", "traj_dist", "gronwall_bound", "attractor_dist"]);
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r[1] <= r[2]);
    }
    assert!(rows[1][3] < rows[0][3]);
}

#[test]
fn library_run_matches_binary_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = examples_dir().join("simulate.toml");
    let cfg = nonlocal_cli::load_config(&path).unwrap();
    let report = run(Sub::Simulate, Some(&cfg), &dir.path().join("lib")).unwrap();
    assert!(report.passed);
    let out = nonlocal(&["simulate"], Some(&path), &dir.path().join("bin"));
    assert_eq!(out.status.code(), Some(0));
    for name in ["trajectory.csv", "summary.json"] {
        assert_eq!(
            fs::read(dir.path().join("lib").join(name)).unwrap(),
            fs::read(dir.path().join("bin").join(name)).unwrap()
        );
    }
}
