use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use ges_core::metrics::change_rate;
use ges_core::report::{read_manifest, Manifest};

fn rate(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |r| format!("{:.1}%", 100.0 * r))
}

/// Cost table with one column per run; change rates are against the first.
pub fn table(runs: &[(String, Manifest)]) -> String {
    let base = &runs[0].1.summary;
    let mut rows: Vec<(&str, Vec<String>)> = vec![
        ("Energy bill ($)", vec![]),
        ("Change rate", vec![]),
        ("Regulation payments ($)", vec![]),
        ("Total cost ($)", vec![]),
        ("Change rate", vec![]),
    ];
    for (_, m) in runs {
        let s = &m.summary;
        rows[0].1.push(format!("{:.2}", s.bill));
        rows[1].1.push(rate(change_rate(s.bill, base.bill)));
        rows[2].1.push(format!("{:.2}", s.regulation_payment));
        rows[3].1.push(format!("{:.2}", s.total));
        rows[4].1.push(rate(change_rate(s.total, base.total)));
    }
    let first = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let width = runs
        .iter()
        .map(|(l, _)| l.len())
        .chain(rows.iter().flat_map(|r| r.1.iter().map(String::len)))
        .max()
        .unwrap_or(0)
        + 2;
    let mut out = String::new();
    let _ = write!(out, "{:first$}", "");
    for (label, _) in runs {
        let _ = write!(out, "{label:>width$}");
    }
    out.push('\n');
    for (name, cells) in &rows {
        let _ = write!(out, "{name:first$}");
        for c in cells {
            let _ = write!(out, "{c:>width$}");
        }
        out.push('\n');
    }
    out
}

pub fn run(paths: &[PathBuf]) -> Result<()> {
    let mut runs = Vec::with_capacity(paths.len());
    for p in paths {
        let m = read_manifest(p)?;
        runs.push((m.mode.to_string(), m));
    }
    let hash = &runs[0].1.scenario_hash;
    for (p, (_, m)) in paths.iter().zip(&runs).skip(1) {
        if &m.scenario_hash != hash {
            eprintln!(
                "warning: scenario hash of {} differs from {}",
                p.display(),
                paths[0].display()
            );
        }
    }
    print!("{}", table(&runs));
    Ok(())
}
