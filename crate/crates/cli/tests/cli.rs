use std::path::Path;
use std::process::{Command, Output};

fn gesim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gesim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn gesim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(args: &[&str], cwd: &Path) -> String {
    let o = gesim(args, cwd);
    assert!(o.status.success(), "gesim {args:?} failed: {}", stderr(&o));
    stdout(&o)
}

#[test]
fn baseline_has_zero_regulation_lines() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["run", "--mode", "baseline", "--hours", "3", "--out", "b"], dir.path());
    let mut r = csv::Reader::from_path(dir.path().join("b/costs.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (cap, mile) = (col("capacity_payment"), col("mileage_payment"));
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row[cap].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[mile].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn repeated_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        run_ok(
            &["run", "--mode", "dual_market", "--seed", "42", "--hours", "2", "--out", out],
            dir.path(),
        );
    }
    for f in ["tracking.csv", "hourly.csv", "costs.csv", "scores.csv", "events.csv", "traces.csv", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn run_summary_names_the_costs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["run", "--out", "d"], dir.path());
    for key in ["energy bill", "regulation payments", "total cost"] {
        assert!(out.contains(key), "missing '{key}' in:\n{out}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d/manifest.json")).unwrap()).unwrap();
    let s = &m["summary"];
    let (bill, reg, total) = (
        s["bill"].as_f64().unwrap(),
        s["regulation_payment"].as_f64().unwrap(),
        s["total"].as_f64().unwrap(),
    );
    assert!((bill - reg - total).abs() < 1e-9 * bill.abs().max(1.0));
    assert!(reg > 0.0);
}

#[test]
fn compare_against_itself_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["run", "--hours", "2", "--out", "x"], dir.path());
    let t = run_ok(&["compare", "x", "x/manifest.json"], dir.path());
    let rates: Vec<&str> = t.lines().filter(|l| l.starts_with("Change rate")).collect();
    assert_eq!(rates.len(), 2);
    for l in rates {
        assert_eq!(l.matches("0.0%").count(), 2, "{l}");
    }
}

#[test]
fn compare_three_cases_like_the_cost_table() {
    let dir = tempfile::tempdir().unwrap();
    for m in ["baseline", "energy_only", "dual_market"] {
        run_ok(&["run", "--mode", m, "--out", m], dir.path());
    }
    let t = run_ok(&["compare", "baseline", "energy_only", "dual_market"], dir.path());
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines.len(), 6);
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header, ["baseline", "energy_only", "dual_market"]);
    // Bill change rate of energy-only against baseline is negative.
    let bill_rate: Vec<&str> = lines[2].split_whitespace().collect();
    let eo: f64 = bill_rate[bill_rate.len() - 2].trim_end_matches('%').parse().unwrap();
    assert!(eo < 0.0, "{}", lines[2]);
}

#[test]
fn compare_warns_on_foreign_scenario() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["run", "--hours", "1", "--out", "a"], dir.path());
    run_ok(&["run", "--hours", "1", "--seed", "5", "--out", "b"], dir.path());
    let o = gesim(&["compare", "a", "b"], dir.path());
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    assert!(stdout(&o).contains("Total cost"));
}

#[test]
fn compare_needs_two_manifests() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!gesim(&["compare", "a"], dir.path()).status.success());
}

#[test]
fn plots_are_svg() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["run", "--hours", "2", "--out", "p"], dir.path());
    for fig in ["tracking", "dos", "schedule", "traces", "ev_energy"] {
        run_ok(&["plot", "p", fig], dir.path());
        let svg = std::fs::read_to_string(dir.path().join(format!("p/{fig}.svg"))).unwrap();
        assert!(svg.starts_with("<svg"), "{fig}");
        assert!(svg.contains("polyline"), "{fig} has no lines");
    }
}

#[test]
fn unknown_figure_lists_the_choices() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["run", "--hours", "1", "--out", "p"], dir.path());
    let o = gesim(&["plot", "p", "pie"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    for id in ["tracking", "dos", "schedule", "traces", "ev_energy"] {
        assert!(e.contains(id), "{e}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "[run]\nmood = 1\n").unwrap();
    assert_eq!(gesim(&["validate-config", "bad.toml"], p).status.code(), Some(2));
    assert_eq!(gesim(&["run", "bad.toml"], p).status.code(), Some(2));
    assert_eq!(gesim(&["validate-config", "missing.toml"], p).status.code(), Some(4));
    assert_eq!(gesim(&["compare", "nowhere", "nowhere"], p).status.code(), Some(4));
    // EVs alone leave the midday hours without any device to schedule.
    std::fs::write(
        p.join("ev.toml"),
        "[fleet.ees]\ncount = 0\n[fleet.iva]\ncount = 0\n[fleet.ffa]\ncount = 0\n",
    )
    .unwrap();
    let o = gesim(&["run", "ev.toml", "--out", "ev"], p);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("hour"));
}

#[test]
fn validate_config_prints_materialized_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["validate-config", "--print"], dir.path());
    assert!(out.contains("omega_score = 0.92"), "{out}");
    std::fs::write(dir.path().join("full.toml"), &out).unwrap();
    let again = run_ok(&["validate-config", "full.toml", "--print"], dir.path());
    assert_eq!(again, out);
}

#[test]
fn synth_regd_writes_a_series() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth-regd", "--seed", "3", "--hours", "2", "--out", "r.csv"], dir.path());
    let mut r = csv::Reader::from_path(dir.path().join("r.csv")).unwrap();
    assert_eq!(&r.headers().unwrap()[1], "value[pu]");
    let v: Vec<f64> = r.records().map(|x| x.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(v.len(), 2 * 1800);
    assert!(v.iter().all(|x| x.abs() <= 1.0));
}
