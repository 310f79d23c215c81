//! Run artifacts: per-cycle and hourly CSV files plus a JSON manifest with
//! the run summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_aux::serde_introspection::serde_introspect;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::devices::GesKind;
use crate::error::{Error, Result};
use crate::optimizer::Mode;
use crate::sim::{ev_final_energy_check, lockout_violations, HourRecord, RunOutput, Scenario, TraceRecord};

/// Bumped whenever a column or manifest field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACKING_FILE: &str = "tracking.csv";
pub const HOURLY_FILE: &str = "hourly.csv";
pub const COSTS_FILE: &str = "costs.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const TRACES_FILE: &str = "traces.csv";
pub const DEPARTURES_FILE: &str = "departures.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub time_s: u64,
    pub hour: usize,
    pub p_sch_kw: f64,
    pub c_reg_kw: f64,
    pub regd: f64,
    pub p_tar_kw: f64,
    pub p_agg_kw: f64,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    pub lambda: f64,
    pub saturated: bool,
    pub outdoor_c: f64,
    pub s_ees: Option<f64>,
    pub s_ev: Option<f64>,
    pub s_iva: Option<f64>,
    pub s_ffa: Option<f64>,
}

impl TrackingRow {
    pub fn s_avg(&self, kind: GesKind) -> Option<f64> {
        match kind {
            GesKind::Ees => self.s_ees,
            GesKind::Ev => self.s_ev,
            GesKind::Iva => self.s_iva,
            GesKind::Ffa => self.s_ffa,
        }
    }
}

pub type HourlyRow = HourRecord;
pub type TraceRow = TraceRecord;

/// Prices in $/kWh (energy), $/kW/h (capacity) and $/kW (mileage);
/// money columns in $.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub hour: usize,
    pub energy_price: f64,
    pub capacity_price: f64,
    pub mileage_price: f64,
    pub power_kw: f64,
    pub capacity_kw: f64,
    pub bill: f64,
    pub capacity_payment: f64,
    pub mileage_payment: f64,
    pub regulation_payment: f64,
    pub total: f64,
    pub capacity_payment_ex_post: f64,
    pub mileage_payment_ex_post: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub hour: usize,
    pub capacity_kw: f64,
    pub correlation: f64,
    pub delay: f64,
    pub precision: f64,
    pub composite: f64,
    pub delay_s: u32,
    pub mileage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub time_s: u64,
    pub device: usize,
    pub kind: GesKind,
    pub event: crate::sim::EventKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartureRow {
    pub device: usize,
    pub t_in_h: f64,
    pub t_dep_h: f64,
    pub e_final_kwh: f64,
    pub e_tar_kwh: f64,
    pub band_kwh: f64,
    pub deviation_kwh: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Daily energy bill, $.
    pub bill: f64,
    pub capacity_payment: f64,
    pub mileage_payment: f64,
    pub regulation_payment: f64,
    /// Bill minus regulation payments.
    pub total: f64,
    pub regulation_payment_ex_post: f64,
    pub total_ex_post: f64,
    /// RMS of `|P_agg − P_tar|` over the fleet power range.
    pub tracking_rms: f64,
    pub scored_hours: usize,
    pub mean_score: Option<f64>,
    pub min_score: Option<f64>,
    pub max_kkt_residual: f64,
    pub ev_sessions: usize,
    pub ev_deadband_violations: usize,
    pub lockout_violations: usize,
    pub max_comfort_excess_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub mode: Mode,
    /// Hash of the scenario with mode and output directory left out.
    pub scenario_hash: String,
    pub seed: u64,
    pub regd_seed: u64,
    pub hours: usize,
    pub control_dt_s: u32,
    pub devices: usize,
    pub summary: Summary,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name == name)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Writes `rows` with a header row and returns its manifest entry. An empty
/// table still gets its header.
pub fn write_rows<T: Serialize + DeserializeOwned>(dir: &Path, name: &str, rows: &[T]) -> Result<FileEntry> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(serde_introspect::<T>())?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let path = dir.join(name);
    fs::write(&path, &bytes).map_err(|e| io_at(&path, e))?;
    Ok(FileEntry {
        name: name.to_string(),
        rows: rows.len(),
        sha256: hex(&Sha256::digest(&bytes)),
    })
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| io_at(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn summarize(out: &RunOutput) -> Summary {
    let c = &out.costs;
    let composite: Vec<f64> = out.scores.iter().map(|s| s.score.composite).collect();
    let departures = ev_final_energy_check(&out.log);
    Summary {
        bill: c.bill,
        capacity_payment: c.capacity_payment,
        mileage_payment: c.mileage_payment,
        regulation_payment: c.regulation(),
        total: c.total(),
        regulation_payment_ex_post: c.capacity_payment_ex_post + c.mileage_payment_ex_post,
        total_ex_post: c.total_ex_post(),
        tracking_rms: out.tracking_rms,
        scored_hours: composite.len(),
        mean_score: (!composite.is_empty()).then(|| composite.iter().sum::<f64>() / composite.len() as f64),
        min_score: composite.iter().copied().reduce(f64::min),
        max_kkt_residual: out.log.hours.iter().map(|h| h.kkt_max).fold(0.0, f64::max),
        ev_sessions: departures.len(),
        ev_deadband_violations: departures.iter().filter(|d| !d.ok).count(),
        lockout_violations: lockout_violations(&out.log).len(),
        max_comfort_excess_c: out.log.max_comfort_excess_c,
    }
}

/// Writes every artifact of a run into `dir` (created if missing) and
/// returns the manifest, which is written last.
pub fn write_run(dir: &Path, cfg: &RunConfig, sc: &Scenario, out: &RunOutput) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    let log = &out.log;
    let tracking: Vec<TrackingRow> = log
        .cycles
        .iter()
        .map(|r| TrackingRow {
            time_s: r.time_s,
            hour: (r.time_s / 3600) as usize,
            p_sch_kw: r.p_sch_kw,
            c_reg_kw: r.c_reg_kw,
            regd: r.regd,
            p_tar_kw: r.p_tar_kw,
            p_agg_kw: r.p_agg_kw,
            p_min_kw: r.p_min_kw,
            p_max_kw: r.p_max_kw,
            lambda: r.lambda,
            saturated: r.saturated,
            outdoor_c: r.outdoor_c,
            s_ees: r.s_avg[0],
            s_ev: r.s_avg[1],
            s_iva: r.s_avg[2],
            s_ffa: r.s_avg[3],
        })
        .collect();
    let p = &sc.prices;
    let costs: Vec<CostRow> = out
        .costs
        .hours
        .iter()
        .map(|h| CostRow {
            hour: h.hour,
            energy_price: p.energy[h.hour],
            capacity_price: p.capacity[h.hour],
            mileage_price: p.mileage[h.hour],
            power_kw: h.power_kw,
            capacity_kw: h.capacity_kw,
            bill: h.bill,
            capacity_payment: h.capacity_payment,
            mileage_payment: h.mileage_payment,
            regulation_payment: h.regulation(),
            total: h.total(),
            capacity_payment_ex_post: h.capacity_payment_ex_post,
            mileage_payment_ex_post: h.mileage_payment_ex_post,
        })
        .collect();
    let scores: Vec<ScoreRow> = out
        .scores
        .iter()
        .map(|s| ScoreRow {
            hour: s.hour,
            capacity_kw: s.capacity_kw,
            correlation: s.score.correlation,
            delay: s.score.delay,
            precision: s.score.precision,
            composite: s.score.composite,
            delay_s: s.score.delay_s,
            mileage: s.mileage,
        })
        .collect();
    let events: Vec<EventRow> = log
        .events
        .iter()
        .map(|e| EventRow {
            time_s: e.time_s,
            device: e.device,
            kind: e.kind,
            event: e.event,
            value: e.value,
        })
        .collect();
    let departures: Vec<DepartureRow> = log
        .departures
        .iter()
        .zip(ev_final_energy_check(log))
        .map(|(d, v)| DepartureRow {
            device: d.device,
            t_in_h: d.t_in_h,
            t_dep_h: d.t_dep_h,
            e_final_kwh: d.e_final_kwh,
            e_tar_kwh: d.e_tar_kwh,
            band_kwh: d.band_kwh,
            deviation_kwh: v.deviation_kwh,
            within_band: v.ok,
        })
        .collect();

    let files = vec![
        write_rows(dir, TRACKING_FILE, &tracking)?,
        write_rows(dir, HOURLY_FILE, &log.hours)?,
        write_rows(dir, COSTS_FILE, &costs)?,
        write_rows(dir, SCORES_FILE, &scores)?,
        write_rows(dir, EVENTS_FILE, &events)?,
        write_rows(dir, TRACES_FILE, &log.traces)?,
        write_rows(dir, DEPARTURES_FILE, &departures)?,
    ];
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        mode: out.mode,
        scenario_hash: cfg.scenario_hash()?,
        seed: cfg.run.seed,
        regd_seed: cfg.run.regd_seed,
        hours: sc.hours,
        control_dt_s: sc.control_dt_s,
        devices: sc.devices.len(),
        summary: summarize(out),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_at(&path, e))?;
    Ok(manifest)
}

/// Accepts the manifest file or the run directory holding it.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let path = manifest_path(path);
    let text = fs::read_to_string(&path).map_err(|e| io_at(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "{}: schema version {} (this build reads {SCHEMA_VERSION})",
            path.display(),
            m.schema_version
        )));
    }
    Ok(m)
}
