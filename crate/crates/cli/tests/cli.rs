//! Runs the `elicit` binary end to end.

use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn elicit(args: &[&str], dir: &Path) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_elicit")).args(args).current_dir(dir).output().unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn ok(args: &[&str], dir: &Path) -> String {
    let (success, stdout, stderr) = elicit(args, dir);
    assert!(success, "{args:?} failed: {stderr}");
    stdout
}

fn json(args: &[&str], dir: &Path) -> Value {
    serde_json::from_str(&ok(args, dir)).unwrap()
}

fn table<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["tables"].as_array().unwrap().iter().find(|t| t["name"] == name).unwrap_or_else(|| panic!("no table {name}"))
}

/// Rows of `table` as maps from column name to value.
fn rows(report: &Value, name: &str) -> Vec<serde_json::Map<String, Value>> {
    let t = table(report, name);
    let cols: Vec<&str> = t["columns"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    t["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| cols.iter().zip(r.as_array().unwrap()).map(|(c, v)| (c.to_string(), v.clone())).collect())
        .collect()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a.csv", "b.csv"] {
        ok(&["simulate", "--design", "le", "--j-count", "4", "--n", "500", "--seed", "9", "--output", out], d);
    }
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    ok(&["simulate", "--design", "le", "--j-count", "4", "--n", "500", "--seed", "10", "--output", "c.csv"], d);
    assert_ne!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("c.csv")).unwrap());
}

#[test]
fn simulated_multiple_responses_load_back_with_all_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "mrt-discrete", "--n", "1500", "--seed", "2", "--set", "extra_covariates=2", "--output", "m.csv"], d);
    let elicit_cli::data::MrtData::Discrete(data) = elicit_cli::data::load_mrt_csv(&d.join("m.csv"), false).unwrap() else {
        panic!("discrete")
    };
    assert_eq!(data.z_names, vec!["z_1", "z_2", "z_3"]);
    assert_eq!(data.cells().iter().map(|(_, j)| j.n_cell).sum::<u64>(), 1500);
    assert_eq!(data.by_covariate(0).len(), 2);
}

#[test]
fn test_le_on_null_data_rejects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for j in ["4", "5"] {
        ok(&["simulate", "--design", "le", "--j-count", j, "--n", "2000", "--seed", "3", "--output", "le.csv"], d);
        let r = json(&["test-le", "--input", "le.csv", "--j-count", j, "--n-boot", "0"], d);
        assert_eq!(r["schema_version"], 1);
        assert_eq!(r["metadata"]["command"], "test-le");
        let tests = rows(&r, "j_tests");
        assert_eq!(tests.len(), 4);
        for t in &tests {
            assert_eq!(t["verdict"], "not rejected", "{t:?}");
            assert!(t["p_value"].as_f64().unwrap() >= 0.05);
        }
        let cm = &rows(&r, "control_mean_test")[0];
        assert_eq!(cm["null"].as_f64().unwrap(), j.parse::<f64>().unwrap() / 2.0);
    }
}

#[test]
fn test_le_flags_a_violated_specification() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--design", "le", "--j-count", "4", "--n", "8000", "--seed", "4", "--output", "le.csv",
          "--set", "p0=0.3", "--set", "p1=0.05", "--set", "control=0.4,0.3,0.15,0.1,0.05"],
        d,
    );
    let r = json(&["test-le", "--input", "le.csv", "--j-count", "4", "--n-boot", "0", "--spec", "no_misreport"], d);
    let t = &rows(&r, "j_tests")[0];
    assert_eq!(t["verdict"], "rejected");
    assert_eq!(t["marker"], "**");
}

#[test]
fn estimate_le_reports_every_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["simulate", "--design", "le", "--j-count", "3", "--n", "3000", "--seed", "5", "--output", "le.csv",
          "--set", "control=0.1,0.3,0.4,0.2", "--set", "q1=0.1", "--set", "q0=0.05"],
        d,
    );
    let r = json(&["estimate-le", "--input", "le.csv", "--j-count", "3", "--n-boot", "0", "--spec", "unrestricted"], d);
    let est = rows(&r, "le_estimates");
    let methods: Vec<&str> = est.iter().map(|e| e["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["mean_difference", "gmm_unrestricted", "gmm_unrestricted", "gmm_unrestricted", "closed_form", "closed_form", "closed_form"]);
    assert!(est.iter().all(|e| e["se"] == "unavailable"));
    let delta = est[1]["estimate"].as_f64().unwrap();
    assert!((delta - 0.3).abs() < 0.1, "{delta}");

    let r = json(&["test-le", "--input", "le.csv", "--j-count", "3", "--n-boot", "100", "--seed", "1", "--spec", "equal_p"], d);
    let m = &rows(&r, "modified_le")[0];
    assert!(m["gap_se"].as_f64().unwrap() > 0.0);
    assert!(r["diagnostics"].as_array().unwrap().iter().any(|x| x["code"] == "zero_gap_not_sufficient"));
    assert_eq!(r["metadata"]["seed"], 1);
}

#[test]
fn estimate_mrt_recovers_the_covariate_cells() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "mrt-discrete", "--n", "4000", "--seed", "6", "--output", "m.csv"], d);
    let r = json(&["estimate-mrt", "--input", "m.csv", "--n-boot", "100", "--seed", "7", "--plot", "plot.csv"], d);
    let ranks = rows(&r, "rank_tests");
    assert_eq!(ranks.iter().map(|g| g["group"].as_str().unwrap()).collect::<Vec<_>>(), ["overall", "z_1=0", "z_1=1"]);
    assert!(ranks.iter().all(|g| g["reject_rank1"] == true));
    let est = rows(&r, "mrt_estimates");
    for (group, truth) in [("z_1=0", 0.378), ("z_1=1", 0.818)] {
        let e = est
            .iter()
            .find(|e| e["group"] == group && e["method"] == "extreme" && e["parameter"] == "pr_xstar")
            .unwrap();
        let (v, se) = (e["estimate"].as_f64().unwrap(), e["se"].as_f64().unwrap());
        assert!((v - truth).abs() < 3.0 * se, "{group}: {v} vs {truth} (se {se})");
    }
    assert_eq!(rows(&r, "misreport_rates").len(), 3 * 3 * 2);
    let plot = std::fs::read_to_string(d.join("plot.csv")).unwrap();
    assert!(plot.starts_with("group,estimate,ci_low,ci_high\noverall,"));
    assert_eq!(plot.lines().count(), 4);
}

#[test]
fn continuous_mode_fits_the_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "mrt-continuous", "--n", "2000", "--seed", "8", "--output", "c.csv"], d);
    let r = json(&["estimate-mrt", "--input", "c.csv", "--seed", "1", "--set", "mode=continuous", "--set", "intercept=false"], d);
    let fit = rows(&r, "mle_fit");
    let names: Vec<&str> = fit.iter().map(|f| f["parameter"].as_str().unwrap()).collect();
    assert_eq!(names, ["rho", "alpha1", "alpha0", "beta1", "beta0", "gamma1", "gamma0"]);
    for (f, truth) in fit.iter().zip([1.0, 1.0, -1.0, 2.0, -2.0, 2.0, -2.0]) {
        let (v, se) = (f["estimate"].as_f64().unwrap(), f["se"].as_f64().unwrap());
        assert!((v - truth).abs() < 4.0 * se, "{f:?}");
    }
}

#[test]
fn montecarlo_reports_design_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let r = json(&["montecarlo", "--n", "300", "--reps", "20", "--seed", "1", "--set", "estimators=closed_form,extreme"], dir.path());
    let design = rows(&r, "design");
    assert!(design.iter().any(|kv| kv["key"] == "mechanism" && kv["value"].as_str().unwrap().contains("copula")));
    let mc = rows(&r, "monte_carlo");
    assert_eq!(mc.len(), 2 * 15);
    let failed = mc.iter().map(|m| m["n_failed"].as_i64().unwrap()).max().unwrap();
    let flagged = r["diagnostics"].as_array().unwrap().iter().any(|x| x["code"] == "dropped_replicates");
    assert_eq!(failed > 0, flagged);
}

#[test]
fn reruns_reproduce_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "mrt-discrete", "--n", "800", "--seed", "6", "--output", "m.csv"], d);
    let run = || json(&["estimate-mrt", "--input", "m.csv", "--n-boot", "100", "--seed", "3"], d);
    let (a, b) = (run(), run());
    assert_eq!(a["tables"], b["tables"]);
    assert_eq!(a["metadata"]["config_hash"], b["metadata"]["config_hash"]);
}

#[test]
fn text_and_csv_carry_the_json_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--design", "le", "--j-count", "4", "--n", "1000", "--seed", "3", "--output", "le.csv"], d);
    let args = ["test-le", "--input", "le.csv", "--j-count", "4", "--n-boot", "0"];
    let r = json(&args, d);
    let text = ok(&[&args[..], &["--format", "text"]].concat(), d);
    let csv = ok(&[&args[..], &["--format", "csv"]].concat(), d);
    assert!(csv.starts_with("# table: j_tests\nspec,t_stat,dof,p_value,marker,dropped_index,verdict\n"));
    for t in r["tables"].as_array().unwrap() {
        for row in t["rows"].as_array().unwrap() {
            for v in row.as_array().unwrap() {
                if let Some(x) = v.as_f64() {
                    let shown = elicit_cli::report::sig6(x);
                    assert!(text.contains(&shown) && csv.contains(&shown), "{shown}");
                }
            }
        }
    }
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "# simulation\ndesign = le\nj-count = 3\nn = 400\nseed = 1\n").unwrap();
    ok(&["simulate", "--config", "run.cfg", "--output", "x.csv"], d);
    ok(&["simulate", "--config", "run.cfg", "--n", "401", "--output", "y.csv", "--format", "text"], d);
    let count = |f: &str| std::fs::read_to_string(d.join(f)).unwrap().lines().count() - 1;
    assert_eq!((count("x.csv"), count("y.csv")), (400, 401));
    ok(&["test-le", "--config", "run.cfg", "--input", "x.csv", "--n-boot", "0", "--output", "report.json"], d);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["config"]["j_count"], "3");
}

#[test]
fn errors_exit_nonzero_with_a_reason() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [(&[&str], &str); 5] = [
        (&["montecarlo", "--n", "100"], "needs a seed"),
        (&["test-le", "--input", "missing.csv", "--j-count", "3"], "does not exist"),
        (&["simulate", "--seed", "1", "--set", "colour=red"], "unknown configuration key"),
        (&["simulate", "--seed", "1", "--design", "le", "--output", "o.csv"], "needs j_count"),
        (&["estimate-le", "--j-count", "3", "--n-boot", "50"], "at least 100 replicates"),
    ];
    for (args, reason) in cases {
        let (success, _, stderr) = elicit(args, d);
        assert!(!success, "{args:?} succeeded");
        assert!(stderr.contains(reason), "{args:?}: {stderr}");
    }
    std::fs::write(d.join("bad.csv"), "y,t\n5,0\n1,1\n").unwrap();
    let (success, _, stderr) = elicit(&["test-le", "--input", "bad.csv", "--j-count", "3", "--n-boot", "0"], d);
    assert!(!success && stderr.contains("row 1: y exceeds J for control"), "{stderr}");
}
