use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use ges_core::devices::GesKind;
use ges_core::report::{
    self, HourlyRow, TraceRow, TrackingRow, HOURLY_FILE, TRACES_FILE, TRACKING_FILE,
};
use plotters::prelude::*;

pub const FIGURES: [(&str, &str); 5] = [
    ("tracking", "target and aggregate power"),
    ("dos", "mean DoS per kind against the cleared price"),
    ("schedule", "hourly schedule with regulation band and fleet limits"),
    ("traces", "DoS of single traced devices"),
    ("ev_energy", "energy of a traced EV inside its corridor"),
];

#[derive(Debug, thiserror::Error)]
#[error("unknown figure '{0}'; available: {list}", list = FIGURES.map(|f| f.0).join(", "))]
pub struct UnknownFigure(pub String);

struct Series {
    name: String,
    color: RGBColor,
    /// Gaps split a series into separate polylines.
    segments: Vec<Vec<(f64, f64)>>,
}

impl Series {
    fn new(name: impl Into<String>, color: RGBColor, points: impl IntoIterator<Item = (f64, Option<f64>)>) -> Self {
        let mut segments = vec![Vec::new()];
        for (x, y) in points {
            match y {
                Some(y) if y.is_finite() => segments.last_mut().unwrap().push((x, y)),
                _ => {
                    if !segments.last().unwrap().is_empty() {
                        segments.push(Vec::new());
                    }
                }
            }
        }
        segments.retain(|s| !s.is_empty());
        Series {
            name: name.into(),
            color,
            segments,
        }
    }
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(127, 127, 127),
];

fn draw(path: &Path, title: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let pts = || series.iter().flat_map(|s| s.segments.iter().flatten());
    if pts().next().is_none() {
        return Err(anyhow!("nothing to plot for '{title}'"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    let (y0, y1) = (y0 - pad, y1 + pad);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }

    let root = SVGBackend::new(path, (1000, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart
        .configure_mesh()
        .x_desc("time (h)")
        .y_desc(y_label)
        .light_line_style(WHITE.mix(0.0))
        .draw()?;
    for s in series {
        let style = ShapeStyle::from(&s.color).stroke_width(1);
        let mut first = true;
        for seg in &s.segments {
            let drawn = chart.draw_series(LineSeries::new(seg.iter().copied(), style))?;
            if first {
                let c = s.color;
                drawn
                    .label(s.name.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c));
                first = false;
            }
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

fn hours(t_s: u64) -> f64 {
    t_s as f64 / 3600.0
}

fn tracking(dir: &Path, out: &Path) -> Result<()> {
    let rows: Vec<TrackingRow> = report::read_rows(&dir.join(TRACKING_FILE))?;
    let s = |name: &str, c, f: fn(&TrackingRow) -> f64| {
        Series::new(name, c, rows.iter().map(|r| (hours(r.time_s), Some(f(r)))))
    };
    draw(
        out,
        "Power tracking",
        "power (kW)",
        &[
            s("P_tar", PALETTE[1], |r| r.p_tar_kw),
            s("P_agg", PALETTE[0], |r| r.p_agg_kw),
            s("P_min", PALETTE[5], |r| r.p_min_kw),
            s("P_max", PALETTE[5], |r| r.p_max_kw),
        ],
    )
}

fn dos(dir: &Path, out: &Path) -> Result<()> {
    let rows: Vec<TrackingRow> = report::read_rows(&dir.join(TRACKING_FILE))?;
    let mut series = vec![Series::new(
        "lambda*",
        BLACK,
        rows.iter().map(|r| (hours(r.time_s), Some(r.lambda))),
    )];
    for (i, kind) in GesKind::ALL.into_iter().enumerate() {
        series.push(Series::new(
            format!("S_avg {}", kind.label()),
            PALETTE[i],
            rows.iter().map(|r| (hours(r.time_s), r.s_avg(kind))),
        ));
    }
    draw(out, "Degree of satisfaction", "DoS", &series)
}

fn schedule(dir: &Path, out: &Path) -> Result<()> {
    let rows: Vec<HourlyRow> = report::read_rows(&dir.join(HOURLY_FILE))?;
    // Hold each hourly value across its hour.
    let steps = |f: fn(&HourlyRow) -> f64| {
        rows.iter()
            .flat_map(move |r| [(r.hour as f64, Some(f(r))), ((r.hour + 1) as f64, Some(f(r)))])
            .collect::<Vec<_>>()
    };
    draw(
        out,
        "Hourly schedule",
        "power (kW)",
        &[
            Series::new("P_sch", PALETTE[0], steps(|r| r.p_sch_kw)),
            Series::new("P_sch + C_reg", PALETTE[2], steps(|r| r.p_sch_kw + r.c_reg_kw)),
            Series::new("P_sch - C_reg", PALETTE[2], steps(|r| r.p_sch_kw - r.c_reg_kw)),
            Series::new("P_min", PALETTE[5], steps(|r| r.p_min_kw)),
            Series::new("P_max", PALETTE[5], steps(|r| r.p_max_kw)),
        ],
    )
}

fn traces(dir: &Path, out: &Path) -> Result<()> {
    let rows: Vec<TraceRow> = report::read_rows(&dir.join(TRACES_FILE))?;
    let mut devices: Vec<(usize, GesKind)> = rows.iter().map(|r| (r.device, r.kind)).collect();
    devices.sort();
    devices.dedup();
    let series: Vec<Series> = devices
        .iter()
        .enumerate()
        .map(|(i, &(id, kind))| {
            Series::new(
                format!("{} #{id}", kind.label()),
                PALETTE[i % PALETTE.len()],
                rows.iter()
                    .filter(|r| r.device == id)
                    .map(|r| (hours(r.time_s), r.dos)),
            )
        })
        .collect();
    draw(out, "Single-device DoS", "DoS", &series)
}

fn ev_energy(dir: &Path, out: &Path) -> Result<()> {
    let rows: Vec<TraceRow> = report::read_rows(&dir.join(TRACES_FILE))?;
    let ev: Vec<&TraceRow> = rows.iter().filter(|r| r.kind == GesKind::Ev).collect();
    let Some(id) = ev.first().map(|r| r.device) else {
        return Err(anyhow!("the run traced no EV"));
    };
    let ev: Vec<&TraceRow> = ev.into_iter().filter(|r| r.device == id).collect();
    let band = |sign: f64| {
        ev.iter()
            .map(move |r| {
                let e = r.e_expected_kwh.zip(r.band_kwh).map(|(e, b)| e + sign * b);
                (hours(r.time_s), e)
            })
            .collect::<Vec<_>>()
    };
    draw(
        out,
        &format!("EV #{id} energy corridor"),
        "energy (kWh)",
        &[
            Series::new("E", PALETTE[0], ev.iter().map(|r| (hours(r.time_s), r.energy_kwh))),
            Series::new("E_exp", PALETTE[5], ev.iter().map(|r| (hours(r.time_s), r.e_expected_kwh))),
            Series::new("E+", PALETTE[1], band(1.0)),
            Series::new("E-", PALETTE[1], band(-1.0)),
        ],
    )
}

pub fn run(manifest: &Path, figure: &str, out: Option<&Path>) -> Result<()> {
    let render = match figure {
        "tracking" => tracking,
        "dos" => dos,
        "schedule" => schedule,
        "traces" => traces,
        "ev_energy" => ev_energy,
        other => return Err(UnknownFigure(other.to_string()).into()),
    };
    let path = report::manifest_path(manifest);
    report::read_manifest(&path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out: PathBuf = out.map_or_else(|| dir.join(format!("{figure}.svg")), Path::to_path_buf);
    render(&dir, &out).with_context(|| format!("rendering {figure}"))?;
    println!("wrote {}", out.display());
    Ok(())
}
