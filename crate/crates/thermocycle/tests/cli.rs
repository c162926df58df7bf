use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermocycle")).args(args).output().expect("binary runs")
}

fn run_in(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"));
    rows.iter().map(|r| r[i].clone()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_PHASE: &str = r#"{
  "name": "small-phase",
  "alphabet_size": "3",
  "lambda": "2",
  "theta": "0.70710678118654752",
  "matrices": [{"diag": ["2", "0.5"]}, ["0", "1", "1", "0"], {"rotation_turns": "0.70710678118654752"}],
  "t_grid": {"start": "-3", "stop": "-1", "count": "3"},
  "n": "6",
  "M": "128",
  "gibbs": {"t_values": ["-4", "-0.1"], "n_max": "7"}
}"#;

#[test]
fn pressure_scan_on_rotations_is_flat_at_log_q() {
    let dir = TempDir::new().unwrap();
    let out = run_in("pressure-scan", &preset("rotation-only"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&dir.path().join("pressure_curve.csv"));
    for name in ["t", "n", "p_n", "lower", "upper", "slope", "log_rho_plus_ptop", "gap_est", "second_difference", "kink"] {
        assert!(header.iter().any(|h| h == name), "{name}");
    }
    assert_eq!(rows.len(), 5);
    for p in column(&header, &rows, "p_n").iter().chain(&column(&header, &rows, "log_rho_plus_ptop")) {
        assert!((p.parse::<f64>().unwrap() - 2f64.ln()).abs() < 1e-12);
    }
    let spectral = json(&dir.path().join("spectral.json"));
    assert_eq!(spectral.as_array().unwrap().len(), 5);
    for key in ["t", "rho", "log_rho", "gap_est", "M", "iterations"] {
        assert!(spectral[0].get(key).is_some(), "{key}");
    }
    let summary = json(&dir.path().join("pressure_summary.json"));
    assert_eq!(summary["convexity"]["shape"], Value::String("Linear".into()));
}

#[test]
fn reruns_are_bit_identical_and_manifested() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = preset("golden-mean");
    assert!(run_in("pressure-scan", &cfg, a.path(), &["--threads", "1"]).status.success());
    assert!(run_in("pressure-scan", &cfg, b.path(), &["--threads", "2"]).status.success());
    for f in ["pressure_curve.csv", "spectral.json", "pressure_summary.json"] {
        assert!(fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let m = json(&a.path().join("manifest.json"));
    let m2 = json(&b.path().join("manifest.json"));
    assert_eq!(m["outputs_sha256"], m2["outputs_sha256"]);
    assert_eq!((m["threads"].as_u64(), m2["threads"].as_u64()), (Some(1), Some(2)));
    assert_eq!(m["subcommand"], "pressure-scan");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["modules"]["transfer"].is_string());
    assert!(m["outputs_sha256"]["pressure_curve.csv"].is_string());
}

#[test]
fn seed_flag_reaches_the_manifest() {
    let dir = TempDir::new().unwrap();
    let out = run_in("lyapunov", &preset("golden-mean"), dir.path(), &["--seed", "17"]);
    assert!(out.status.success());
    assert_eq!(json(&dir.path().join("manifest.json"))["seed"], 17);
    let l = json(&dir.path().join("lyapunov.json"));
    for key in ["exact", "exact_half_depth", "richardson_lambda1", "monte_carlo"] {
        assert!(l.get(key).is_some(), "{key}");
    }
    assert_eq!(l["seed"], 17);
}

#[test]
fn typicality_outcomes() {
    let dir = TempDir::new().unwrap();
    assert!(run_in("typicality", &preset("prop-9-1"), &dir.path().join("a"), &[]).status.success());
    assert!(run_in("typicality", &preset("rotation-only"), &dir.path().join("b"), &[]).status.success());
    let a = json(&dir.path().join("a/typicality.json"));
    assert_eq!(a["status"], "certified");
    for key in ["p", "z", "l", "eigen_moduli", "min_independence_sv", "search_bounds"] {
        assert!(a.get(key).is_some(), "{key}");
    }
    let b = json(&dir.path().join("b/typicality.json"));
    assert_eq!(b["status"], "inconclusive");
    assert_eq!(b["structural"], true);
}

#[test]
fn ldp_rates_and_zero_mass_flags() {
    let dir = TempDir::new().unwrap();
    let out = run_in("ldp", &preset("prop-9-1"), &dir.path().join("a"), &["--epsilon", "0.2"]);
    assert!(out.status.success());
    let (header, rows) = csv(&dir.path().join("a/ldp_rates.csv"));
    assert_eq!(header, ["mode", "epsilon", "n", "mass", "rate_fit", "empirical_rate", "flag"]);
    assert_eq!(rows.len(), 11);
    assert!(column(&header, &rows, "rate_fit")[0].parse::<f64>().unwrap() < -0.01);

    let out = run_in("ldp", &preset("rotation-only"), &dir.path().join("b"), &["--mode", "norm"]);
    assert!(out.status.success());
    let (header, rows) = csv(&dir.path().join("b/ldp_rates.csv"));
    assert!(column(&header, &rows, "flag").iter().all(|f| f == "zero-mass"));
}

#[test]
fn gibbs_check_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "g.json",
        r#"{"alphabet_size": "2", "matrices": [{"diag": ["2", "0.5"]}, {"rotation_turns": "0.70710678118654752"}],
            "t_grid": {"start": "0", "stop": "0", "count": "1"}, "n": "6", "M": "256",
            "gibbs": {"t_values": ["-0.1", "0.1"], "n_max": "6", "samples": "10", "window": "30", "derivative_n": "4"}}"#,
    );
    let out = run_in("gibbs-check", &cfg, &dir.path().join("o"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&dir.path().join("o/gibbs_report.csv"));
    assert_eq!(header, ["t", "n", "min_ratio", "max_ratio", "growth_factor", "spread_growth"]);
    assert_eq!(rows.len(), 12);
    let (header, rows) = csv(&dir.path().join("o/dimension_moments.csv"));
    assert_eq!(header, ["t", "s", "M", "sup_moment", "threshold", "estimate"]);
    assert_eq!(rows.len(), 2 * 20 * 3);
    let j = json(&dir.path().join("o/gibbs_check.json"));
    let per_t = j["per_t"].as_array().unwrap();
    assert_eq!(per_t.len(), 2);
    assert!(per_t[0]["g_t_rowsum"]["max_deviation"].as_f64().unwrap() < 0.05);
}

#[test]
fn phase_transition_reports_threshold_and_blow_up() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "p.json", SMALL_PHASE);
    let out = run_in("phase-transition", &cfg, &dir.path().join("o"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("-2.169925"));
    let j = json(&dir.path().join("o/phase_transition.json"));
    assert_eq!(j["swap_word_exact"], true);
    assert_eq!(j["brackets_within_log2_log3"], true);
    assert_eq!(j["per_t"][0]["blow_up"], true);
    assert_eq!(j["per_t"][1]["blow_up"], false);
    let (header, rows) = csv(&dir.path().join("o/gibbs_report.csv"));
    assert_eq!(header[0], "t");
    assert_eq!(rows.len(), 14);
    let (header, _) = csv(&dir.path().join("o/phase_brackets.csv"));
    assert_eq!(header, ["t", "n", "p_n", "lower", "upper", "bound_lower", "bound_upper"]);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let base = fs::read_to_string(preset("prop-9-1")).unwrap();
    let cases = [
        ("empty-grid.json", base.replace(r#""count": "13""#, r#""count": "0""#), "t_grid.count"),
        ("bad-row.json", base.replace(r#"{"diag": ["2", "0.5"]}"#, r#"["1", "2", "3"]"#), "matrices[0]"),
        ("bad-json.json", base.replace("\"n\":", "\"n\" "), "line"),
    ];
    for (name, text, needle) in cases {
        let cfg = write_config(&dir, name, &text);
        let out = run_in("pressure-scan", &cfg, &dir.path().join("o"), &[]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(needle), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run_in("ldp", &preset("prop-9-1"), &dir.path().join("o"), &["--epsilon", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in("ldp", &preset("prop-9-1"), &dir.path().join("o"), &["--epsilon", "-0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["pressure-scan"]).status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = run_in("typicality", &dir.path().join("absent.json"), &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(1));
}
