use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
    "name": "cli-mini",
    "problem": {"kind": "quadratic", "d": 4, "l0": 1.0, "x1": 1.0},
    "optimizer": "signsgd",
    "noise": {"p": 1.5, "family": {"kind": "alpha_stable", "alpha": 1.6}, "sigma0": 1.0},
    "hyper": {"source": "theory"},
    "t_list": [16, 128, 2048],
    "seeds": [0, 1]
}"#;

fn signopt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_signopt"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_writes_summary_and_runs_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    let a = signopt(&["sweep", "--config", "cfg.json", "--out", "a"], dir.path());
    let b = signopt(
        &["sweep", "--config", "cfg.json", "--out", "b", "--workers", "3"],
        dir.path(),
    );
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let sa = fs::read(dir.path().join("a/summary.json")).unwrap();
    let sb = fs::read(dir.path().join("b/summary.json")).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(fs::read_dir(dir.path().join("a/runs")).unwrap().count(), 6);
    assert!(String::from_utf8_lossy(&a.stdout).contains("exponent"));
}

#[test]
fn seed_flag_replaces_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    let o = signopt(
        &["run", "--config", "cfg.json", "--seed", "9", "--out", "o"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs: Vec<String> = fs::read_dir(dir.path().join("o/runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(runs.len(), 3);
    assert!(runs.iter().all(|n| n.ends_with("_seed9.csv")), "{runs:?}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.json"), CONFIG.replace("[16, 128, 2048]", "[]")).unwrap();
    let o = signopt(&["run", "--config", "empty.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no experiments"), "{}", stderr(&o));

    fs::write(
        dir.path().join("typo.json"),
        CONFIG.replace("\"sigma0\"", "\"sigma_0\""),
    )
    .unwrap();
    let o = signopt(&["run", "--config", "typo.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise"), "{}", stderr(&o));
}

#[test]
fn sweep_without_enough_spread_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        CONFIG.replace("[16, 128, 2048]", "[16, 32, 64]"),
    )
    .unwrap();
    let run = signopt(&["run", "--config", "cfg.json", "--out", "r"], dir.path());
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    let sweep = signopt(&["sweep", "--config", "cfg.json", "--out", "s"], dir.path());
    assert_eq!(sweep.status.code(), Some(2));
    assert!(stderr(&sweep).contains("rate fit"), "{}", stderr(&sweep));
}

#[test]
fn params_prints_all_calculators() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("in.json"),
        r#"{"delta_f": 1, "l0_norm": 10, "l1_norm": 0, "sigma0_norm": 10, "sigma1_norm": 0, "p": 1.5, "T": 1000}"#,
    )
    .unwrap();
    let o = signopt(&["params", "--config", "in.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["signsgd", "lion", "muon", "muonlight"] {
        assert!(v[key]["eta"].as_f64().unwrap() > 0.0, "{key}: {v}");
    }
    assert_eq!(v["predicted_exponent"].as_f64(), Some(0.2));
}

#[test]
fn tail_index_reads_sample_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = signopt(
        &[
            "tail-index",
            "--family",
            r#"{"kind":"gaussian"}"#,
            "--samples",
            "40000",
            "--seed",
            "4",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let alpha: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!((alpha - 2.0).abs() < 0.2, "{alpha}");

    // Bounded data; mixed integer and decimal spellings.
    let text: String = (0..2000).map(|i| if i % 2 == 0 { "1\n" } else { "-1.0\n" }).collect();
    fs::write(dir.path().join("s.txt"), text).unwrap();
    let o = signopt(&["tail-index", "--input", "s.txt"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    fs::write(dir.path().join("bad.txt"), "1\n2\nabc\n").unwrap();
    let o = signopt(&["tail-index", "--input", "bad.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.txt:3"), "{}", stderr(&o));
}

#[test]
fn validate_noise_writes_fit_and_points() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("nc.json"),
        r#"{"problem": {"kind": "quadratic", "d": 3, "l0": 1.0, "x1": 1.0},
            "noise": {"p": 2.0, "family": {"kind": "gaussian"}, "sigma0": 1.0, "sigma1": 0.5},
            "draws": 1000, "points": 6, "scale_lo": 0.1, "scale_hi": 10.0}"#,
    )
    .unwrap();
    let o = signopt(&["validate-noise", "--config", "nc.json", "--out", "nv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("nv/noise_points.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(dir.path().join("nv/noise_fit.json").is_file());
}

#[test]
fn report_exit_code_tracks_strict_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = signopt(
        &[
            "verify-concentration",
            "--lemma",
            "regret",
            "--trials",
            "100",
            "--out",
            "v",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = signopt(&["report", "v", "--out", "rep"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = fs::read_to_string(dir.path().join("rep/report.md")).unwrap();
    assert!(md.contains("adagrad regret (100 sequences)"), "{md}");

    let path = dir.path().join("v/verification.json");
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    v["regret"]["violations"] = 1.into();
    fs::write(&path, v.to_string()).unwrap();
    let o = signopt(&["report", "v", "--out", "rep"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_lists_missing_directories() {
    let dir = tempfile::tempdir().unwrap();
    let o = signopt(&["report", "nope1", "nope2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("nope1") && err.contains("nope2"), "{err}");
}
