//! Scenario configuration (TOML). Unknown keys are rejected; every omitted
//! key takes its documented default, so a parsed config serializes back with
//! all defaults materialized.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optimizer::Mode;

/// A parameter that is either fixed or drawn from `U(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dist {
    Fixed(f64),
    Uniform([f64; 2]),
}

impl Dist {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Dist::Fixed(v) => (v, v),
            Dist::Uniform([lo, hi]) => (lo, hi),
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!(
                "{name}: invalid distribution bounds [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: Mode,
    /// Seed for fleet sampling.
    pub seed: u64,
    /// Seed for the synthesized regD signal.
    pub regd_seed: u64,
    /// Simulated hours from midnight (at most 24).
    pub hours: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: Mode::DualMarket,
            seed: 42,
            regd_seed: 7,
            hours: 24,
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    /// Weight of the DoS penalty.
    pub omega_scale: f64,
    /// Assumed performance score for ex-ante payments.
    pub omega_score: f64,
    /// Assumed hourly mileage ratio.
    pub omega_mile: f64,
    pub control_dt_s: u32,
    /// Saturation look-ahead of the CP-GES demand curves.
    pub t_p_s: u32,
    /// Share of an hour an EV must be plugged in to count in its model.
    pub ev_membership: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            omega_scale: 0.1,
            omega_score: 0.92,
            omega_mile: 2.7,
            control_dt_s: 10,
            t_p_s: 300,
            ev_membership: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSource {
    pub path: PathBuf,
    pub unit: String,
}

/// External series; any omitted entry falls back to the bundled sample day
/// (regD: synthesized from `run.regd_seed`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeriesSection {
    pub energy_price: Option<SeriesSource>,
    pub capacity_price: Option<SeriesSource>,
    pub mileage_price: Option<SeriesSource>,
    pub outdoor_temp: Option<SeriesSource>,
    pub regd: Option<SeriesSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EesSpec {
    pub count: usize,
    pub capacity_kwh: Dist,
    pub p_nom_kw: Dist,
    pub eta_charge: Dist,
    pub eta_discharge: Dist,
    pub soc_init: Dist,
    pub t_res_s: u32,
}

impl Default for EesSpec {
    fn default() -> Self {
        EesSpec {
            count: 10,
            capacity_kwh: Dist::Uniform([40.0, 50.0]),
            p_nom_kw: Dist::Uniform([40.0, 50.0]),
            eta_charge: Dist::Fixed(0.9),
            eta_discharge: Dist::Fixed(0.9),
            soc_init: Dist::Fixed(0.5),
            t_res_s: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvSpec {
    pub count: usize,
    pub capacity_kwh: Dist,
    pub p_nom_kw: Dist,
    pub eta: Dist,
    /// Plug-in hour of the evening session.
    pub t_in_h: Dist,
    /// Departure hour of the following morning.
    pub t_dep_h: Dist,
    pub soc_in: Dist,
    pub soc_tar: Dist,
    pub deadband_pct: f64,
    pub t_lock_s: u32,
    /// DoS of the overnight session at midnight.
    pub dos_init: Dist,
}

impl Default for EvSpec {
    fn default() -> Self {
        EvSpec {
            count: 20,
            capacity_kwh: Dist::Uniform([20.0, 30.0]),
            p_nom_kw: Dist::Uniform([6.0, 8.0]),
            eta: Dist::Fixed(0.9),
            t_in_h: Dist::Uniform([18.0, 22.0]),
            t_dep_h: Dist::Uniform([6.0, 9.0]),
            soc_in: Dist::Uniform([0.25, 0.35]),
            soc_tar: Dist::Uniform([0.75, 0.85]),
            deadband_pct: 2.5,
            t_lock_s: 300,
            dos_init: Dist::Uniform([-0.8, 0.8]),
        }
    }
}

/// Thermal envelope distributions shared by both air-conditioner kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalSpec {
    pub r_th: Dist,
    pub c_th: Dist,
    pub t_set: Dist,
    pub t_dev: Dist,
}

const THERMAL: ThermalSpec = ThermalSpec {
    r_th: Dist::Uniform([1.0, 1.5]),
    c_th: Dist::Uniform([0.8, 1.2]),
    t_set: Dist::Uniform([23.0, 28.0]),
    t_dev: Dist::Uniform([2.0, 3.0]),
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IvaSpec {
    pub count: usize,
    pub r_th: Dist,
    pub c_th: Dist,
    pub t_set: Dist,
    pub t_dev: Dist,
    pub p_min_kw: Dist,
    pub p_max_kw: Dist,
    pub p1: f64,
    pub p2: f64,
    pub q1: f64,
    pub q2: f64,
    pub t_res_s: u32,
    pub dos_init: Dist,
}

impl Default for IvaSpec {
    fn default() -> Self {
        IvaSpec {
            count: 100,
            r_th: THERMAL.r_th,
            c_th: THERMAL.c_th,
            t_set: THERMAL.t_set,
            t_dev: THERMAL.t_dev,
            p_min_kw: Dist::Uniform([0.4, 0.5]),
            p_max_kw: Dist::Uniform([5.0, 6.0]),
            p1: 0.03,
            p2: -0.4,
            q1: 0.06,
            q2: -0.3,
            t_res_s: 60,
            dos_init: Dist::Fixed(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FfaSpec {
    pub count: usize,
    pub r_th: Dist,
    pub c_th: Dist,
    pub t_set: Dist,
    pub t_dev: Dist,
    pub p_nom_kw: Dist,
    pub cop: Dist,
    pub t_lock_s: u32,
    pub dos_init: Dist,
}

impl IvaSpec {
    pub fn thermal(&self) -> ThermalSpec {
        ThermalSpec {
            r_th: self.r_th,
            c_th: self.c_th,
            t_set: self.t_set,
            t_dev: self.t_dev,
        }
    }
}

impl FfaSpec {
    pub fn thermal(&self) -> ThermalSpec {
        ThermalSpec {
            r_th: self.r_th,
            c_th: self.c_th,
            t_set: self.t_set,
            t_dev: self.t_dev,
        }
    }
}

impl Default for FfaSpec {
    fn default() -> Self {
        FfaSpec {
            count: 100,
            r_th: THERMAL.r_th,
            c_th: THERMAL.c_th,
            t_set: THERMAL.t_set,
            t_dev: THERMAL.t_dev,
            p_nom_kw: Dist::Uniform([4.5, 5.5]),
            cop: Dist::Uniform([3.0, 4.0]),
            t_lock_s: 300,
            dos_init: Dist::Uniform([-0.8, 0.8]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetSpec {
    pub ees: EesSpec,
    pub ev: EvSpec,
    pub iva: IvaSpec,
    pub ffa: FfaSpec,
}

impl FleetSpec {
    pub fn validate(&self) -> Result<()> {
        let dists: Vec<(&str, &Dist)> = vec![
            ("ees.capacity_kwh", &self.ees.capacity_kwh),
            ("ees.p_nom_kw", &self.ees.p_nom_kw),
            ("ees.eta_charge", &self.ees.eta_charge),
            ("ees.eta_discharge", &self.ees.eta_discharge),
            ("ees.soc_init", &self.ees.soc_init),
            ("ev.capacity_kwh", &self.ev.capacity_kwh),
            ("ev.p_nom_kw", &self.ev.p_nom_kw),
            ("ev.eta", &self.ev.eta),
            ("ev.t_in_h", &self.ev.t_in_h),
            ("ev.t_dep_h", &self.ev.t_dep_h),
            ("ev.soc_in", &self.ev.soc_in),
            ("ev.soc_tar", &self.ev.soc_tar),
            ("ev.dos_init", &self.ev.dos_init),
            ("iva.r_th", &self.iva.r_th),
            ("iva.c_th", &self.iva.c_th),
            ("iva.t_set", &self.iva.t_set),
            ("iva.t_dev", &self.iva.t_dev),
            ("iva.p_min_kw", &self.iva.p_min_kw),
            ("iva.p_max_kw", &self.iva.p_max_kw),
            ("iva.dos_init", &self.iva.dos_init),
            ("ffa.r_th", &self.ffa.r_th),
            ("ffa.c_th", &self.ffa.c_th),
            ("ffa.t_set", &self.ffa.t_set),
            ("ffa.t_dev", &self.ffa.t_dev),
            ("ffa.p_nom_kw", &self.ffa.p_nom_kw),
            ("ffa.cop", &self.ffa.cop),
            ("ffa.dos_init", &self.ffa.dos_init),
        ];
        for (name, d) in dists {
            d.validate(name)?;
        }
        let (lo, hi) = self.ev.t_in_h.bounds();
        if lo < 0.0 || hi >= 24.0 {
            return Err(Error::Config("ev.t_in_h must lie within [0, 24)".into()));
        }
        let (lo, hi) = self.ev.t_dep_h.bounds();
        if lo < 0.0 || hi >= self.ev.t_in_h.bounds().0 {
            return Err(Error::Config(
                "ev.t_dep_h must lie in [0, earliest plug-in hour)".into(),
            ));
        }
        Ok(())
    }

    pub fn device_count(&self) -> usize {
        self.ees.count + self.ev.count + self.iva.count + self.ffa.count
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub constants: Constants,
    pub series: SeriesSection,
    pub fleet: FleetSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative series paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let s = &mut self.series;
        for src in [
            &mut s.energy_price,
            &mut s.capacity_price,
            &mut s.mileage_price,
            &mut s.outdoor_temp,
            &mut s.regd,
        ]
        .into_iter()
        .flatten()
        {
            if src.path.is_relative() {
                src.path = base.join(&src.path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.constants;
        if self.run.hours == 0 || self.run.hours > 24 {
            return Err(Error::Config("run.hours must lie in 1..=24".into()));
        }
        if c.control_dt_s == 0 || 3600 % c.control_dt_s != 0 {
            return Err(Error::Config("constants.control_dt_s must divide one hour".into()));
        }
        if c.t_p_s == 0 {
            return Err(Error::Config("constants.t_p_s must be positive".into()));
        }
        if !(0.0..=1.0).contains(&c.omega_score) {
            return Err(Error::Config("constants.omega_score must lie in [0, 1]".into()));
        }
        if !(c.omega_scale >= 0.0 && c.omega_mile >= 0.0) {
            return Err(Error::Config("constants must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&c.ev_membership) {
            return Err(Error::Config("constants.ev_membership must lie in [0, 1]".into()));
        }
        self.fleet.validate()
    }

    /// Canonical TOML with all defaults materialized.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML, ignoring the mode and output
    /// directory so that the cases of one scenario share a hash.
    pub fn scenario_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.run.mode = RunSection::default().mode;
        c.run.output_dir = None;
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_stated_constants() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.constants.omega_scale, 0.1);
        assert_eq!(c.constants.omega_score, 0.92);
        assert_eq!(c.constants.omega_mile, 2.7);
        assert_eq!(c.constants.control_dt_s, 10);
        assert_eq!(c.constants.t_p_s, 300);
        assert_eq!(c.fleet.device_count(), 230);
    }

    #[test]
    fn round_trip() {
        let text = r#"
            [run]
            mode = "energy_only"
            seed = 3
            [fleet.iva]
            count = 5
            t_set = 25.0
            r_th = [1.0, 1.2]
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.run.mode, Mode::EnergyOnly);
        assert_eq!(c.fleet.iva.t_set, Dist::Fixed(25.0));
        let again = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.scenario_hash().unwrap(), c.scenario_hash().unwrap());
    }

    #[test]
    fn hash_ignores_case_fields() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.mode = Mode::Baseline;
        b.run.output_dir = Some("elsewhere".into());
        assert_eq!(a.scenario_hash().unwrap(), b.scenario_hash().unwrap());
        b.run.seed += 1;
        assert_ne!(a.scenario_hash().unwrap(), b.scenario_hash().unwrap());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[run]\nmood = \"x\"\n"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml("[fleet.ffa]\ncolour = 1\n").is_err());
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(RunConfig::from_toml("[fleet.ffa]\ncop = [4.0, 3.0]\n").is_err());
        assert!(RunConfig::from_toml("[run]\nhours = 30\n").is_err());
    }
}
