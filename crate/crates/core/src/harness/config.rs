//! Config files: flat `key = value` lines, or a JSON object.
//!
//! ```text
//! # comment
//! n = 128
//! rf_chains = auto
//! m = 16
//! l = 2
//! k = 2
//! mode = robust
//! snr_db = 10
//! axis = snr
//! values = 0, 10, 20, 30
//! ```
//!
//! Values parse as booleans, numbers, or comma-separated lists thereof;
//! anything else stays a string.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};

use super::{ExperimentConfig, Mode, ModulationName, PermutationMode, SweepAxis};
use crate::beamspace::NoiseConvention;
use crate::error::{Error, Result};
use crate::robust::CalibrationMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CountOrAuto {
    Count(usize),
    Word(String),
}

/// Every recognised key; all optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    pub rf_chains: Option<CountOrAuto>,
    pub wavelength: Option<f64>,
    pub element_spacing: Option<f64>,
    pub m: Option<usize>,
    pub l: Option<usize>,
    pub t: Option<usize>,
    pub modulation: Option<ModulationName>,
    pub omega: Option<f64>,
    pub permutation: Option<PermutationMode>,
    pub k: Option<usize>,
    pub on_grid: Option<bool>,
    pub snr_db: Option<f64>,
    pub noise_variance: Option<f64>,
    pub convention: Option<String>,
    pub cfo: Option<bool>,
    pub false_alarm: Option<f64>,
    pub calibration: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub fixed_ensemble: Option<bool>,
    pub threads: Option<usize>,
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<f64>>,
    pub n_r: Option<usize>,
    /// Scan paths as `"aoa:aod"` or `"aoa:aod:re:im"`.
    pub paths: Option<Vec<String>>,
}

impl ConfigFile {
    /// Writes every set key into `cfg`.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        set!(n, wavelength, element_spacing, m, l, modulation, k, on_grid, cfo, false_alarm, trials, seed, mode, fixed_ensemble);
        if let Some(w) = self.omega {
            cfg.omega = Some(w);
        }
        if let Some(p) = self.permutation {
            cfg.permutation = Some(p);
        }
        if let Some(s) = self.snr_db {
            cfg.snr_db = Some(s);
        }
        if let Some(v) = self.noise_variance {
            cfg.noise_variance = Some(v);
        }
        if let Some(c) = &self.convention {
            cfg.convention = c.parse::<NoiseConvention>()?;
        }
        if let Some(c) = &self.calibration {
            cfg.calibration = Some(c.parse::<CalibrationMode>()?);
        }
        match &self.rf_chains {
            None => {}
            Some(CountOrAuto::Count(r)) => cfg.rf_chains = Some(*r),
            Some(CountOrAuto::Word(w)) if w == "auto" => cfg.rf_chains = None,
            Some(CountOrAuto::Word(w)) => {
                return Err(Error::InvalidParameter(format!("rf_chains: expected a count or 'auto', got '{w}'")))
            }
        }
        if let Some(t) = self.t {
            if cfg.m == 0 || t % (2 * cfg.m) != 0 {
                return Err(Error::InvalidParameter(format!(
                    "t = {t} is not a multiple of 2M = {}",
                    2 * cfg.m
                )));
            }
            let l = t / (2 * cfg.m);
            if self.l.is_some_and(|given| given != l) {
                return Err(Error::InvalidParameter(format!(
                    "t = {t} disagrees with m = {} and l = {}",
                    cfg.m, cfg.l
                )));
            }
            cfg.l = l;
        }
        Ok(())
    }
}

fn scalar(raw: &str) -> Value {
    match raw {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        _ => {}
    }
    if let Ok(u) = raw.parse::<u64>() {
        return Value::Number(u.into());
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::Number(i.into());
    }
    if let Ok(f) = raw.parse::<f64>() {
        if let Some(n) = Number::from_f64(f) {
            return Value::Number(n);
        }
    }
    Value::String(raw.to_string())
}

const LIST_KEYS: &[&str] = &["values", "paths"];

/// Parses config text in either accepted format.
pub fn parse_config_text(text: &str) -> Result<ConfigFile> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")));
    }
    let mut map = Map::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, raw) = line.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!("config line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim().replace('-', "_");
        let raw = raw.trim();
        let value = if LIST_KEYS.contains(&key.as_str()) {
            Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| if key == "paths" { Value::String(s.into()) } else { scalar(s) })
                    .collect(),
            )
        } else {
            scalar(raw)
        };
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::InvalidParameter(format!("config: duplicate key '{key}'")));
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text)
}
