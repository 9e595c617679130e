//! The single JSON pipeline configuration and `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bayes::BayesParams;
use crate::error::{Error, Result};
use crate::ingest::IngestParams;
use crate::lda::{LdaParams, SweepGrid};
use crate::model::{ActivityType, LocalClock};
use crate::staydetect::StayParams;
use crate::staylabel::LabelParams;
use crate::synth::SynthConfig;
use crate::validate::BootstrapParams;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "ACTRECON_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    pub xdr: PathBuf,
    pub stations: PathBuf,
    pub pois: PathBuf,
    pub checkins: PathBuf,
    /// Replaces the built-in category map when set.
    pub category_map: Option<PathBuf>,
    /// Replaces the built-in profession map when set.
    pub profession_map: Option<PathBuf>,
}

impl Default for InputPaths {
    fn default() -> Self {
        Self {
            xdr: "input/xdr.csv".into(),
            stations: "input/stations.csv".into(),
            pois: "input/pois.csv".into(),
            checkins: "input/checkins.csv".into(),
            category_map: None,
            profession_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateParams {
    pub types: Vec<ActivityType>,
    pub bootstrap: BootstrapParams,
    /// Exit with a validation failure when any type scores below this.
    pub min_accuracy: Option<f64>,
}

impl Default for ValidateParams {
    fn default() -> Self {
        Self {
            types: vec![ActivityType::DrinkEat, ActivityType::Shopping],
            bootstrap: BootstrapParams::default(),
            min_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsParams {
    /// Local `HH:MM` pairs for transition matrices.
    pub transitions: Vec<[String; 2]>,
    pub histogram_types: Vec<ActivityType>,
}

impl Default for AnalyticsParams {
    fn default() -> Self {
        Self {
            transitions: vec![["08:00".into(), "12:00".into()], ["16:00".into(), "20:00".into()]],
            histogram_types: vec![ActivityType::Work, ActivityType::DrinkEat, ActivityType::Shopping, ActivityType::LeisureSport],
        }
    }
}

/// Parses `HH:MM` into seconds after local midnight.
pub fn parse_hhmm(s: &str) -> Result<i64> {
    let bad = || Error::Config(format!("time {s:?} is not HH:MM"));
    let (h, m) = s.split_once(':').ok_or_else(bad)?;
    let (h, m): (i64, i64) = (h.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?);
    if !(0..24).contains(&h) || !(0..60).contains(&m) {
        return Err(bad());
    }
    Ok(h * 3600 + m * 60)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub utc_offset_secs: i64,
    pub ingest: IngestParams,
    pub stays: StayParams,
    pub label: LabelParams,
    pub bayes: BayesParams,
    pub validate: ValidateParams,
    pub lda: LdaParams,
    pub sweep: SweepGrid,
    pub analytics: AnalyticsParams,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: InputPaths::default(),
            output_dir: "out".into(),
            threads: 0,
            utc_offset_secs: 8 * 3600,
            ingest: IngestParams::default(),
            stays: StayParams::default(),
            label: LabelParams::default(),
            bayes: BayesParams::default(),
            validate: ValidateParams::default(),
            lda: LdaParams::default(),
            sweep: SweepGrid::default(),
            analytics: AnalyticsParams::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn clock(&self) -> LocalClock {
        LocalClock::new(self.utc_offset_secs)
    }

    /// Reads a config file; relative input and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_value(value)?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [&mut i.xdr, &mut i.stations, &mut i.pois, &mut i.checkins] {
            fix(p);
        }
        if let Some(p) = i.category_map.as_mut() {
            fix(p);
        }
        if let Some(p) = i.profession_map.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    /// Applies `a.b.c=value` overrides. Values parse as JSON, falling back
    /// to a plain string; every path segment must already exist.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut cur = &mut v;
            for seg in key.split('.') {
                cur = cur
                    .as_object_mut()
                    .and_then(|m| m.get_mut(seg))
                    .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            }
            *cur = value;
        }
        Self::from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.ingest.validate().map_err(cfg)?;
        self.lda.validate().map_err(cfg)?;
        self.synth.validate().map_err(cfg)?;
        crate::staydetect::DbscanParams::new(self.stays.denoise_eps_m, self.stays.denoise_min_samples).map_err(cfg)?;
        crate::staydetect::DbscanParams::new(self.stays.place_eps_m, self.stays.place_min_samples).map_err(cfg)?;
        for [a, b] in &self.analytics.transitions {
            if parse_hhmm(a)? >= parse_hhmm(b)? {
                return Err(Error::Config(format!("transition {a} -> {b} must move forward in time")));
            }
        }
        if !(self.bayes.candidate_buffer_m > 0.0) || !(self.bayes.laplace_pseudo_count > 0.0) {
            return Err(Error::Config("bayes buffer and pseudo-count must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
