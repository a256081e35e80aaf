//! Two-sided alignment: sweep the receive DFT beams and run the transmit-side
//! pipeline once per beam.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{fixed_ensemble, nmse, trial_rng, ExperimentConfig, Mode, SUCCESS_THRESHOLD};
use crate::beamspace::{measure, NoiseModel, SparseSignal};
use crate::decoder::decode;
use crate::encoder::assemble_matrix;
use crate::error::{Error, Result};
use crate::robust::robust_decode;

/// On-grid path between receive beam `aoa` and transmit beam `aod`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPath {
    pub aoa: usize,
    pub aod: usize,
    pub gain: Complex64,
}

impl std::str::FromStr for ScanPath {
    type Err = Error;

    /// `aoa:aod` (unit gain) or `aoa:aod:re:im`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad path '{s}', expected aoa:aod[:re:im]"));
        let parts: Vec<&str> = s.split(':').map(str::trim).collect();
        let idx = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            [a, d] => Ok(Self {
                aoa: idx(a)?,
                aod: idx(d)?,
                gain: Complex64::new(1.0, 0.0),
            }),
            [a, d, re, im] => Ok(Self {
                aoa: idx(a)?,
                aod: idx(d)?,
                gain: Complex64::new(num(re)?, num(im)?),
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Transmit side: `n`, `rf_chains`, `m`, `l`, noise, mode and seed are used;
    /// `k` and `trials` are ignored.
    pub transmit: ExperimentConfig,
    pub n_r: usize,
    pub paths: Vec<ScanPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamspaceMatrixEstimate {
    /// `|G|` estimate, `n_r` rows of `n_t` entries.
    pub magnitudes: Vec<Vec<f64>>,
    /// `(aoa, aod)` of the largest entry.
    pub best: Option<(usize, usize)>,
    pub no_path: bool,
    pub column_success: Vec<bool>,
    /// `n_r * 2ML`.
    pub samples: usize,
    pub noise_variance: f64,
}

fn beamspace_matrix(cfg: &ScanConfig) -> Result<Vec<Vec<Complex64>>> {
    let n_t = cfg.transmit.n;
    let mut g = vec![vec![Complex64::new(0.0, 0.0); n_t]; cfg.n_r];
    for p in &cfg.paths {
        if p.aoa >= cfg.n_r || p.aod >= n_t {
            return Err(Error::InvalidParameter(format!(
                "path ({}, {}) outside the {} x {} grid",
                p.aoa, p.aod, cfg.n_r, n_t
            )));
        }
        g[p.aoa][p.aod] += p.gain;
    }
    Ok(g)
}

/// Recovers `|G|` column by column with a shared transmit ensemble.
pub fn scan_array_receiver(cfg: &ScanConfig) -> Result<BeamspaceMatrixEstimate> {
    if cfg.n_r == 0 {
        return Err(Error::InvalidParameter("n_r must be positive".into()));
    }
    let tx = ExperimentConfig {
        k: 1,
        trials: 1,
        ..cfg.transmit.clone()
    };
    tx.validate()?;
    let g = beamspace_matrix(cfg)?;
    for (i, row) in g.iter().enumerate() {
        let k = row.iter().filter(|c| c.norm_sqr() > 0.0).count();
        if k > tx.m {
            return Err(Error::InvalidParameter(format!(
                "receive beam {i} sees {k} paths, more than M = {}",
                tx.m
            )));
        }
    }

    let energy: f64 = g.iter().flatten().map(|c| c.norm_sqr()).sum();
    let variance = match (tx.noise_variance, tx.snr_db) {
        (Some(v), _) => v,
        (None, Some(snr)) => energy / (tx.n as f64 * 10f64.powf(snr / 10.0)),
        (None, None) => 0.0,
    };
    let noise = NoiseModel {
        variance,
        cfo_enabled: tx.cfo,
        convention: tx.convention,
    };

    let spec = tx.modulation_spec()?;
    let ensemble = fixed_ensemble(&tx)?;
    let matrix = assemble_matrix(&ensemble, &spec)?.unit_norm();
    let detector = tx.detector()?;

    let mut magnitudes = Vec::with_capacity(cfg.n_r);
    let mut column_success = Vec::with_capacity(cfg.n_r);
    for (i, row) in g.iter().enumerate() {
        let mut rng = trial_rng(tx.seed, i as u64);
        let x = SparseSignal::from_coeffs(row.clone());
        let batch = measure(&x, &matrix, &noise, &mut rng)?;
        let est = match tx.mode {
            Mode::Noiseless => decode(&batch, &ensemble, &spec)?.estimate,
            Mode::Robust => robust_decode(&batch, &ensemble, &spec, &detector, variance, &mut rng)?.estimate,
        };
        let z = x.magnitudes();
        let ok = if x.energy() > 0.0 {
            nmse(&est, &z)? < SUCCESS_THRESHOLD
        } else {
            est.values.iter().all(|&v| v == 0.0)
        };
        column_success.push(ok);
        magnitudes.push(est.values);
    }

    let mut best: Option<(usize, usize, f64)> = None;
    for (i, row) in magnitudes.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0.0 && best.is_none_or(|(_, _, b)| v > b) {
                best = Some((i, j, v));
            }
        }
    }
    Ok(BeamspaceMatrixEstimate {
        no_path: best.is_none(),
        best: best.map(|(i, j, _)| (i, j)),
        magnitudes,
        column_success,
        samples: cfg.n_r * tx.t(),
        noise_variance: variance,
    })
}
