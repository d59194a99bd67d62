use std::path::Path;
use std::process::{Command, Output};

fn qplab(dir: &Path, args: &[&str], config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qplab"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("experiment.toml");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn header(csv: &str) -> Vec<String> {
    csv.lines().next().unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn goodness_scan_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = qplab(dir.path(), &["goodness-scan"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "goodness_scan.csv");
    assert_eq!(header(&csv), ["x", "E", "N", "region_id", "norm", "fitted_rate", "verdict", "violations"]);
    assert_eq!(csv.lines().count(), 1 + 32 * 32);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(2) == Some("20")));
    let profile = read(dir.path(), "decay_profile.csv");
    assert_eq!(header(&profile), ["r", "max_abs_g", "log_max_abs_g", "reference_log"]);
    assert_eq!(profile.lines().count(), 1 + 41);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let cfg = "seed = 11\n[neumann_check]\nsamples = 40\n[ldt_scan]\nmethod = \"monte_carlo\"\nsamples = 20000\ndeltas = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]\n";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cmd in ["neumann-check", "ldt-scan"] {
        assert_eq!(qplab(a.path(), &[cmd], Some(cfg)).status.code(), Some(0));
        assert_eq!(qplab(b.path(), &[cmd, "--threads", "3"], Some(cfg)).status.code(), Some(0));
    }
    for f in ["neumann_check.csv", "lojasiewicz.csv", "lojasiewicz_fit.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    qplab(c.path(), &["neumann-check", "--seed", "12"], Some(cfg));
    assert_ne!(read(a.path(), "neumann_check.csv"), read(c.path(), "neumann_check.csv"));
}

#[test]
fn small_lambda_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[model]
lambda = 0.5
blocks = [1]
omega = [0.6180339887498949]
[model.kernel]
family = "exp_decay"
rho = 3.0
[[model.potential.terms]]
k = [1]
cos = 1.0
"#;
    let out = qplab(dir.path(), &["goodness-scan"], Some(cfg));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda must exceed 1"));
}

#[test]
fn unknown_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = qplab(dir.path(), &["hit-count"], Some("[hit_count]\nradius = 3\n"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn neumann_check_passes_on_the_reference_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = qplab(dir.path(), &["neumann-check"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "neumann_check.csv");
    assert_eq!(header(&csv), ["sample", "x", "min_gap", "norm", "bound", "decay_ratio"]);
    assert_eq!(csv.lines().count(), 501);
}

#[test]
fn unmet_coupling_hypothesis_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
[model]
lambda = 50.0
blocks = [1]
omega = [0.6180339887498949]
[model.kernel]
family = "exp_decay"
rho = 3.0
[[model.potential.terms]]
k = [1]
cos = 1.0
[neumann_check]
samples = 10
"#;
    let out = qplab(dir.path(), &["neumann-check"], Some(cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda"));
}

#[test]
fn msa_trace_is_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let out = qplab(dir.path(), &["msa-toy"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read(dir.path(), "msa_trace.jsonl");
    let mut stages = std::collections::BTreeSet::new();
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["x", "energy", "stage", "point", "pass", "detail"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
        stages.insert(v["stage"].as_str().unwrap().to_string());
    }
    for s in ["hits", "geometry", "windows", "cartan", "inner_decay", "paste", "outer_decay", "final"] {
        assert!(stages.contains(s), "{s}");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(dir.path(), "msa_summary.json")).unwrap();
    assert_eq!(summary["cells"][0]["all_pass"], true);
}

#[test]
fn remaining_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[cartan_sweep]\nsamples = 4096\n[localization_profile]\nn = 20\n";
    for cmd in ["cartan-sweep", "schedule-table", "hit-count", "localization-profile", "ldt-scan"] {
        let out = qplab(dir.path(), &[cmd], Some(cfg));
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let cases: [(&str, &[&str]); 5] = [
        ("cartan_sweep.csv", &["epsilon", "empirical", "half_width", "bound_log", "pass"]),
        ("schedule_table.csv", &["block", "n_from", "n_to", "rho", "log_measure_target", "omega_excluded"]),
        ("hit_count.csv", &["n_bar", "count", "cap"]),
        (
            "localization_profile.csv",
            &["index", "eigenvalue", "center", "rate", "rate_unbounded", "participation_ratio", "residual"],
        ),
        ("lojasiewicz.csv", &["delta", "j", "section_id", "measure", "half_width"]),
    ];
    for (file, cols) in cases {
        assert_eq!(header(&read(dir.path(), file)), cols, "{file}");
    }
    let fit: serde_json::Value = serde_json::from_str(&read(dir.path(), "lojasiewicz_fit.json")).unwrap();
    for key in ["C", "a", "residual"] {
        assert!(fit[key].is_number(), "{key}");
    }
    let sched: serde_json::Value = serde_json::from_str(&read(dir.path(), "schedule.json")).unwrap();
    assert_eq!(sched["c1"], 0.01);
    assert_eq!(sched["c2"], 5e-5);
}
