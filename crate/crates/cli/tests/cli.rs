use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn crn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crn"))
        .args(args)
        .env_remove("CRN_THREADS")
        .output()
        .expect("binary runs")
}

fn repo_file(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn validate_prints_mass_vector() {
    let o = crn(&["validate", &repo_file("networks/ab.toml")]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("N=2\n"));
    assert!(text.contains("M=1\n"));
    assert!(text.contains("m=(1,1)\n"), "{text}");

    let o = crn(&["validate", &repo_file("networks/schlogl.toml")]);
    assert!(stdout(&o).contains("m=none\n"));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(crn(&["validate", "ab", "--bogus"]).status.code(), Some(2));
    assert_eq!(crn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(crn(&["exp", "nope"]).status.code(), Some(2));
    assert_eq!(crn(&["rre", "ab", "--x0", "1", "--T", "1"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[species]\nnames = [\"A\"]\n[[reaction]]\nreactants = { B = 1 }\nk_plus = 1.0\n");
    let o = crn(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    let cfg = write(dir.path(), "exp.toml", "h = [0.2, 0.1]\nno_such_key = 1\n");
    assert_eq!(crn(&["exp", "convergence_study", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exp.toml", "h = [0.2, 0.1]\norder_range = [5.0, 6.0]\n");
    let out = dir.path().join("report.json");
    let o = crn(&["exp", "convergence_study", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    assert!(dir.path().join("report.errors.csv").exists());
}

#[test]
fn experiment_reports_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let net = repo_file("networks/birth_death.toml");
    let cfg = write(
        dir.path(),
        "ldp.toml",
        &format!("network = \"{net}\"\nh = [0.2, 0.1]\nmc_h = [0.2]\nn_paths = 4000\nextent = 4.0\ndt = 0.01\n\n[lo]\nnodes = 8\ny_points = 15\n"),
    );
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("r{threads}.json"));
        let o = crn(&[
            "exp",
            "ldp_single_time",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(std::fs::read(&out).unwrap());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("r{threads}.json.manifest.json"))).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 5);
        assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    }
    assert_eq!(reports[0], reports[1]);
    let report: serde_json::Value = serde_json::from_slice(&reports[0]).unwrap();
    for key in ["name", "parameters", "metrics", "pass", "seed"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn ssa_paths_are_reproducible_and_start_at_x0() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("paths{threads}.csv"));
        let o = crn(&[
            "ssa", "ab", "--h", "0.1", "--x0", "1,0.5", "--T", "2", "--paths", "5", "--seed", "9", "--threads", threads, "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        outs.push(std::fs::read_to_string(&out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let mut lines = outs[0].lines();
    assert_eq!(lines.next(), Some("path_id,time,A,B"));
    assert_eq!(lines.next(), Some("0,0,1,0.5"));
}

#[test]
fn manifest_hash_tracks_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let hash = |h: &str| {
        let out = dir.path().join("p.csv");
        let o = crn(&["cme", "birth_death", "--h", h, "--box", "3", "--t", "0.5", "--p0", "delta:1", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.csv.manifest.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    let a = hash("0.1");
    assert_eq!(a, hash("0.1"));
    assert_ne!(a, hash("0.25"));
}

#[test]
fn cme_and_hje_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    assert!(crn(&["cme", "ab", "--h", "0.25", "--box", "2,2", "--t", "1", "--p0", "delta:1,0.5", "--out", p.to_str().unwrap()])
        .status
        .success());
    let mut rd = csv::Reader::from_path(&p).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["index", "A", "B", "probability"]);
    let total: f64 = rd.records().map(|r| r.unwrap()[3].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-10);
    // restarting from the written distribution continues the evolution
    let p2 = dir.path().join("p2.csv");
    assert!(crn(&["cme", "ab", "--h", "0.25", "--box", "2,2", "--t", "1", "--p0", p.to_str().unwrap(), "--out", p2.to_str().unwrap()])
        .status
        .success());

    let u = dir.path().join("u.csv");
    let o = crn(&["hje", "birth_death", "--h", "0.1", "--box", "4", "--dt", "0.05", "--t", "0.2", "--u0", "-(A-1)^2", "--out", u.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let values: Vec<f64> = csv::Reader::from_path(&u).unwrap().records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(values.len(), 41);
    // contraction: the solution stays within the range of the data
    assert!(values.iter().all(|&v| (-9.0 - 1e-10..=1e-10).contains(&v)));
}

#[test]
fn lax_oleinik_prints_value_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("path.csv");
    let o = crn(&["lo", "birth_death", "--x", "1", "--t", "0.5", "--u0", "0*A", "--nodes", "6", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    // constant data: the value is the constant and the optimal path rests at the RRE
    let text = stdout(&o);
    let value: f64 = text.lines().find_map(|l| l.strip_prefix("value = ")).unwrap().parse().unwrap();
    assert!(value.abs() < 1e-8, "{text}");
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1 + 8);
}
