//! Exogenous time series: prices, outdoor temperature and the regD signal.

use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

/// How a series is filled in when upsampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    /// Zero-order hold (hourly prices).
    Hold,
    /// Linear between samples (temperature, regD).
    Linear,
}

/// Uniformly sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub start: DateTime<Utc>,
    pub period_s: u32,
    pub values: Vec<f64>,
    pub unit: String,
}

impl TimeSeries {
    pub fn new(start: DateTime<Utc>, period_s: u32, values: Vec<f64>, unit: impl Into<String>) -> Result<Self> {
        if period_s == 0 {
            return Err(Error::invalid("sample period must be positive"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(TimeSeries {
            start,
            period_s,
            values,
            unit: unit.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> u64 {
        self.values.len() as u64 * self.period_s as u64
    }

    /// Sample covering `offset_s` seconds after the start (held).
    pub fn at_offset(&self, offset_s: u64) -> Option<f64> {
        self.values.get((offset_s / self.period_s as u64) as usize).copied()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["timestamp", &format!("value[{}]", self.unit)])?;
        for (i, v) in self.values.iter().enumerate() {
            let t = self.start + chrono::Duration::seconds(i as i64 * self.period_s as i64);
            w.write_record([t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true), format!("{v}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Midnight of a fixed reference day, used for synthesized series.
pub fn reference_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 7, 1, 0, 0, 0).unwrap()
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .map(|t| Utc.from_utc_datetime(&t))
}

/// Reads a `timestamp,value` CSV. A header is optional; a header of the form
/// `value[unit]` must name `expected_unit`. A single missing sample is filled
/// linearly; larger gaps are rejected.
pub fn load_csv(path: &Path, expected_unit: &str) -> Result<TimeSeries> {
    let file = std::fs::File::open(path)?;
    read_csv(file, &path.display().to_string(), expected_unit)
}

/// [`load_csv`] over any reader; `origin` names the source in errors.
pub fn read_csv<R: std::io::Read>(input: R, origin: &str, expected_unit: &str) -> Result<TimeSeries> {
    let display = origin.to_string();
    let err = |line: usize, message: String| Error::Load {
        path: display.clone(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut samples: Vec<(usize, DateTime<Utc>, f64)> = Vec::new();
    let mut unit = expected_unit.to_string();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(idx + 1, |p| p.line() as usize);
        if rec.len() < 2 {
            return Err(err(line, "expected two columns: timestamp,value".into()));
        }
        let Some(t) = parse_timestamp(&rec[0]) else {
            if samples.is_empty() && idx == 0 {
                if let (Some(a), Some(b)) = (rec[1].find('['), rec[1].rfind(']')) {
                    let declared = &rec[1][a + 1..b];
                    if declared != expected_unit {
                        return Err(err(
                            line,
                            format!("unit mismatch: file declares '{declared}', expected '{expected_unit}'"),
                        ));
                    }
                    unit = declared.to_string();
                }
                continue;
            }
            return Err(err(line, format!("cannot parse timestamp '{}'", &rec[0])));
        };
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| err(line, format!("cannot parse value '{}'", &rec[1])))?;
        if !v.is_finite() {
            return Err(err(line, "value is not finite".into()));
        }
        samples.push((line, t, v));
    }
    if samples.len() < 2 {
        return Err(err(samples.first().map_or(1, |s| s.0), "need at least two samples".into()));
    }
    let period = (samples[1].1 - samples[0].1).num_seconds();
    if period <= 0 {
        return Err(err(samples[1].0, "timestamps are not increasing".into()));
    }
    let mut values = vec![samples[0].2];
    for w in samples.windows(2) {
        let (_, t0, v0) = w[0];
        let (line, t1, v1) = w[1];
        let dt = (t1 - t0).num_seconds();
        if dt <= 0 {
            return Err(err(line, "timestamps are not increasing".into()));
        }
        if dt == period {
            values.push(v1);
        } else if dt == 2 * period {
            log::warn!("{display}:{line}: one missing sample filled by linear interpolation");
            values.push(0.5 * (v0 + v1));
            values.push(v1);
        } else {
            return Err(err(
                line,
                format!("gap of {dt} s exceeds one sample period ({period} s)"),
            ));
        }
    }
    TimeSeries::new(samples[0].1, period as u32, values, unit)
}

/// Changes the sample period. One period must divide the other; upsampling
/// holds or interpolates, downsampling decimates.
pub fn resample(series: &TimeSeries, new_period_s: u32, interp: Interp) -> Result<TimeSeries> {
    let old = series.period_s;
    if new_period_s == 0 {
        return Err(Error::invalid("sample period must be positive"));
    }
    let values = if new_period_s == old {
        series.values.clone()
    } else if old % new_period_s == 0 {
        let r = (old / new_period_s) as usize;
        let v = &series.values;
        let mut out = Vec::with_capacity(v.len() * r);
        for i in 0..v.len() {
            let next = match interp {
                Interp::Linear => v.get(i + 1).copied().unwrap_or(v[i]),
                Interp::Hold => v[i],
            };
            for j in 0..r {
                out.push(v[i] + (next - v[i]) * j as f64 / r as f64);
            }
        }
        out
    } else if new_period_s % old == 0 {
        let r = (new_period_s / old) as usize;
        series.values.iter().step_by(r).copied().collect()
    } else {
        return Err(Error::invalid(format!(
            "cannot resample from {old} s to {new_period_s} s: periods are incommensurate"
        )));
    };
    TimeSeries::new(series.start, new_period_s, values, series.unit.clone())
}

/// Mean of each of the first `hours` hours. The period must divide one hour.
pub fn hourly_means(series: &TimeSeries, hours: usize) -> Result<Vec<f64>> {
    if 3600 % series.period_s != 0 {
        return Err(Error::invalid(format!(
            "{} s samples cannot be averaged per hour",
            series.period_s
        )));
    }
    let n = (3600 / series.period_s) as usize;
    if series.len() < hours * n {
        return Err(Error::invalid(format!(
            "series covers {:.2} h, need {hours} h",
            series.duration_s() as f64 / 3600.0
        )));
    }
    Ok(series
        .values
        .chunks(n)
        .take(hours)
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect())
}

/// Regulation signal in `[-1, 1]` with its hourly mileage.
#[derive(Debug, Clone, PartialEq)]
pub struct RegDSignal {
    pub series: TimeSeries,
    pub hourly_mileage: Vec<f64>,
}

impl RegDSignal {
    pub fn from_series(series: TimeSeries) -> Result<Self> {
        if let Some(v) = series.values.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::invalid(format!("regD sample {v} outside [-1, 1]")));
        }
        if 3600 % series.period_s != 0 {
            return Err(Error::invalid("regD period must divide one hour"));
        }
        let per_hour = (3600 / series.period_s) as usize;
        let hours = series.len() / per_hour;
        let hourly_mileage = (0..hours)
            .map(|h| hour_mileage(&series.values, per_hour, h))
            .collect();
        Ok(RegDSignal {
            series,
            hourly_mileage,
        })
    }

    pub fn samples_per_hour(&self) -> usize {
        (3600 / self.series.period_s) as usize
    }

    pub fn hour(&self, h: usize) -> &[f64] {
        let n = self.samples_per_hour();
        let end = ((h + 1) * n).min(self.series.len());
        &self.series.values[(h * n).min(end)..end]
    }
}

/// Total variation over hour `h`, including the step into the next hour's
/// first sample when present.
pub(crate) fn hour_mileage(values: &[f64], per_hour: usize, h: usize) -> f64 {
    let lo = h * per_hour;
    let hi = ((h + 1) * per_hour + 1).min(values.len());
    if hi <= lo {
        return 0.0;
    }
    values[lo..hi].windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Correlation time of the underlying AR(1) stages, seconds.
const REGD_TAU_S: f64 = 60.0;
/// Hourly mileage targets are drawn uniformly from this range.
const REGD_MILEAGE: (f64, f64) = (2.2, 3.2);
const REGD_MAX_MEAN: f64 = 0.02;

/// Deterministic synthetic regD: a twice-filtered AR(1) process, shaped per
/// hour to start and end at zero, re-centred to zero mean, scaled to a drawn
/// hourly mileage and clipped to `[-1, 1]`.
pub fn synth_regd(seed: u64, hours: usize, period_s: u32) -> Result<RegDSignal> {
    if period_s == 0 || 3600 % period_s != 0 {
        return Err(Error::invalid("regD period must divide one hour"));
    }
    let n = (3600 / period_s) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (-(period_s as f64) / REGD_TAU_S).exp();
    let gain = (1.0 - a * a).sqrt();
    let mileage_dist = Uniform::new(REGD_MILEAGE.0, REGD_MILEAGE.1)
        .map_err(|e| Error::invalid(e.to_string()))?;
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut values = Vec::with_capacity(hours * n);
    for _ in 0..hours {
        let mut hour: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = a * x + gain * e;
                y = a * y + gain * x;
                y
            })
            .collect();
        let target = mileage_dist.sample(&mut rng);
        shape_hour(&mut hour, target);
        values.extend(hour);
    }
    let series = TimeSeries::new(reference_start(), period_s, values, "pu")?;
    RegDSignal::from_series(series)
}

fn shape_hour(v: &mut [f64], target_mileage: f64) {
    let n = v.len();
    if n < 3 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // Bridge: pin the hour to zero at both ends (the next hour starts at 0).
    let (first, last) = (v[0], v[n - 1]);
    for (i, x) in v.iter_mut().enumerate() {
        *x -= first + (last - first) * i as f64 / (n - 1) as f64;
    }
    let bump: Vec<f64> = (0..n)
        .map(|i| (std::f64::consts::PI * i as f64 / (n - 1) as f64).sin())
        .collect();
    let bump_mean = bump.iter().sum::<f64>() / n as f64;
    let recentre = |v: &mut [f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        for (x, b) in v.iter_mut().zip(&bump) {
            *x -= m * b / bump_mean;
        }
    };
    recentre(v);
    let tv: f64 = v.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() + v[n - 1].abs();
    if tv > 0.0 {
        let k = target_mileage / tv;
        v.iter_mut().for_each(|x| *x *= k);
    }
    for _ in 0..50 {
        v.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
        let m = v.iter().sum::<f64>() / n as f64;
        if m.abs() <= 0.5 * REGD_MAX_MEAN {
            break;
        }
        recentre(v);
    }
    v.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
}
