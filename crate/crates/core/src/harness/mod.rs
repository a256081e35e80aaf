//! Monte Carlo experiment runner, metrics and CSV output.

mod config;
mod scan;

pub use config::{load_config_file, parse_config_text, ConfigFile};
pub use scan::{scan_array_receiver, BeamspaceMatrixEstimate, ScanConfig, ScanPath};

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamspace::{
    measure, sigma_for_snr, synthesize_channel, ChannelConfig, NoiseConvention, NoiseModel,
    PathSet, SparseSignal,
};
use crate::decoder::{decode, MagnitudeEstimate};
use crate::encoder::{
    assemble_matrix, build_ensemble_with_rng, design_permutations, GraphEnsemble, ModulationSpec,
    PermutationSearch,
};
use crate::error::{Error, Result};
use crate::robust::{robust_decode, CalibrationMode, DetectorConfig, FusionOutcome};
use crate::theory::{nm_graph_prob, success_prob};

/// Squared relative error below which a trial counts as a success.
pub const SUCCESS_THRESHOLD: f64 = 1e-8;

/// Swap evaluations allowed when the stride permutation misses its bound.
const PERMUTATION_BUDGET: usize = 20_000;

/// Stream reserved for the frozen ensemble of `--fixed-ensemble` runs.
const FIXED_ENSEMBLE_STREAM: u64 = u64::MAX;

pub const CSV_HEADER: &str =
    "n,m,l,k,t,snr_db,mode,trials,seed,success_rate,nmse,bf_gain,theory_p,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Noiseless,
    Robust,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Noiseless => "noiseless",
            Mode::Robust => "robust",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noiseless" => Ok(Mode::Noiseless),
            "robust" => Ok(Mode::Robust),
            _ => Err(Error::InvalidParameter(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationName {
    #[default]
    Linear,
    Cosine,
}

impl std::str::FromStr for ModulationName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModulationName::Linear),
            "cosine" => Ok(ModulationName::Cosine),
            _ => Err(Error::InvalidParameter(format!("unknown modulation '{s}'"))),
        }
    }
}

/// How modulation values are assigned inside each graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    Identity,
    Designed,
}

impl std::str::FromStr for PermutationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(PermutationMode::Identity),
            "designed" => Ok(PermutationMode::Designed),
            _ => Err(Error::InvalidParameter(format!("unknown permutation mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    T,
    N,
    M,
    Snr,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" => Ok(SweepAxis::T),
            "n" => Ok(SweepAxis::N),
            "m" => Ok(SweepAxis::M),
            "snr" => Ok(SweepAxis::Snr),
            _ => Err(Error::InvalidParameter(format!("unknown sweep axis '{s}'"))),
        }
    }
}

/// One Monte Carlo operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    /// `None` picks the smallest count satisfying C1, `ceil(N / M)`.
    pub rf_chains: Option<usize>,
    pub wavelength: f64,
    pub element_spacing: f64,
    pub m: usize,
    pub l: usize,
    pub modulation: ModulationName,
    /// Cosine frequency; defaults to `pi / (2N)`.
    pub omega: Option<f64>,
    /// `None`: identity for noiseless runs, designed for robust runs.
    pub permutation: Option<PermutationMode>,
    pub k: usize,
    pub on_grid: bool,
    /// `None` means no noise.
    pub snr_db: Option<f64>,
    /// Absolute noise variance; overrides `snr_db` when set.
    pub noise_variance: Option<f64>,
    pub convention: NoiseConvention,
    pub cfo: bool,
    pub false_alarm: f64,
    /// `None` picks the mode matching `convention`.
    pub calibration: Option<CalibrationMode>,
    pub trials: usize,
    pub seed: u64,
    pub mode: Mode,
    pub fixed_ensemble: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 128,
            rf_chains: Some(8),
            wavelength: 1.0,
            element_spacing: 0.5,
            m: 16,
            l: 2,
            modulation: ModulationName::Linear,
            omega: None,
            permutation: None,
            k: 2,
            on_grid: true,
            snr_db: None,
            noise_variance: None,
            convention: NoiseConvention::TotalPower,
            cfo: true,
            false_alarm: crate::robust::default_false_alarm(),
            calibration: None,
            trials: 1000,
            seed: 0,
            mode: Mode::Noiseless,
            fixed_ensemble: false,
        }
    }
}

impl ExperimentConfig {
    /// Total number of phaseless measurements, `2 M L`.
    pub fn t(&self) -> usize {
        2 * self.m * self.l
    }

    pub fn channel(&self) -> ChannelConfig {
        let auto = self.n.div_ceil(self.m.max(1)).max(1);
        ChannelConfig {
            n_antennas: self.n,
            n_rf_chains: self.rf_chains.unwrap_or(auto),
            wavelength: self.wavelength,
            element_spacing: self.element_spacing,
        }
    }

    pub fn modulation_spec(&self) -> Result<ModulationSpec> {
        Ok(match self.modulation {
            ModulationName::Linear => ModulationSpec::linear(self.n),
            ModulationName::Cosine => match self.omega {
                Some(w) => ModulationSpec::cosine(self.n, w)?,
                None => ModulationSpec::cosine_default(self.n),
            },
        })
    }

    pub fn permutation_mode(&self) -> PermutationMode {
        self.permutation.unwrap_or(match self.mode {
            Mode::Noiseless => PermutationMode::Identity,
            Mode::Robust => PermutationMode::Designed,
        })
    }

    pub fn detector(&self) -> Result<DetectorConfig> {
        let mode = self
            .calibration
            .unwrap_or_else(|| CalibrationMode::matching(self.convention));
        DetectorConfig::new(self.false_alarm, mode)
    }

    pub fn validate(&self) -> Result<()> {
        let ch = self.channel();
        ch.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.m == 0 || self.l == 0 {
            return Err(Error::InvalidParameter("M and L must be at least 1".into()));
        }
        if self.m > self.n {
            return Err(Error::InvalidParameter(format!(
                "M = {} exceeds N = {}",
                self.m, self.n
            )));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidParameter(format!(
                "K must lie in 1..={}, got {}",
                self.n, self.k
            )));
        }
        let set_size = self.n.div_ceil(self.m);
        if set_size > ch.n_rf_chains {
            return Err(Error::C1Infeasible {
                n: self.n,
                m: self.m,
                set_size,
                rf_chains: ch.n_rf_chains,
            });
        }
        if let Some(v) = self.noise_variance {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter("noise variance must be >= 0".into()));
            }
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::InvalidParameter("snr_db must be finite".into()));
            }
        }
        self.modulation_spec()?;
        self.detector()?;
        Ok(())
    }

    /// Closed-form success probability for this point.
    pub fn theory_p(&self) -> Option<f64> {
        let lam = nm_graph_prob(self.n, self.m, self.k).ok()?;
        Some(success_prob(lam.value, self.l as u32))
    }
}

/// Per-trial random stream; independent of scheduling.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Outcome of one Monte Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub success: bool,
    pub nmse: f64,
    pub bf_gain: f64,
    /// Gain evaluated at a random direction because the estimate was empty.
    pub bf_random: bool,
    pub noise_variance: f64,
    pub k_hat: Option<usize>,
    pub fallback: bool,
}

/// Everything a trial produces, for callers that need more than the record.
#[derive(Debug, Clone)]
pub struct TrialDetail {
    pub record: TrialRecord,
    pub ensemble: GraphEnsemble,
    pub signal: SparseSignal,
    pub estimate: MagnitudeEstimate,
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

fn draw_ensemble<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> Result<GraphEnsemble> {
    let ch = cfg.channel();
    let ens = build_ensemble_with_rng(cfg.n, cfg.m, cfg.l, ch.n_rf_chains, rng)?;
    match cfg.permutation_mode() {
        PermutationMode::Identity => Ok(ens),
        PermutationMode::Designed => design_permutations(
            &ens,
            &cfg.modulation_spec()?,
            PermutationSearch::Auto,
            PERMUTATION_BUDGET,
            rng,
        ),
    }
}

/// Ensemble used by every trial of a `fixed_ensemble` run.
pub fn fixed_ensemble(cfg: &ExperimentConfig) -> Result<GraphEnsemble> {
    draw_ensemble(cfg, &mut trial_rng(cfg.seed, FIXED_ENSEMBLE_STREAM))
}

/// Draws a random K-sparse on-grid (or off-grid) channel.
pub fn draw_channel<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    rng: &mut R,
) -> Result<(Vec<Complex64>, SparseSignal)> {
    let ch = cfg.channel();
    let gains: Vec<Complex64> = (0..cfg.k).map(|_| complex_gaussian(rng)).collect();
    let paths = if cfg.on_grid {
        let support = index::sample(rng, cfg.n, cfg.k).into_vec();
        PathSet::on_grid_indices(gains, &support, &ch)?
    } else {
        let aods = (0..cfg.k)
            .map(|_| rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2))
            .collect();
        PathSet::new(gains, aods, false)?
    };
    synthesize_channel(&paths, &ch)
}

/// Runs trial number `trial` of `cfg`, drawing everything from
/// `trial_rng(cfg.seed, trial)`.
pub fn run_trial(cfg: &ExperimentConfig, trial: u64) -> Result<TrialRecord> {
    run_trial_with(cfg, trial, None).map(|d| d.record)
}

pub fn run_trial_with(
    cfg: &ExperimentConfig,
    trial: u64,
    frozen: Option<&GraphEnsemble>,
) -> Result<TrialDetail> {
    let mut rng = trial_rng(cfg.seed, trial);
    let spec = cfg.modulation_spec()?;
    let ensemble = match frozen {
        Some(e) => e.clone(),
        None => draw_ensemble(cfg, &mut rng)?,
    };
    let matrix = assemble_matrix(&ensemble, &spec)?.unit_norm();
    let (h, x) = draw_channel(cfg, &mut rng)?;

    let variance = match (cfg.noise_variance, cfg.snr_db) {
        (Some(v), _) => v,
        (None, Some(snr)) => sigma_for_snr(&h, snr, &cfg.channel())?,
        (None, None) => 0.0,
    };
    let noise = NoiseModel {
        variance,
        cfo_enabled: cfg.cfo,
        convention: cfg.convention,
    };
    let batch = measure(&x, &matrix, &noise, &mut rng)?;

    let (estimate, k_hat, fallback) = match cfg.mode {
        Mode::Noiseless => (decode(&batch, &ensemble, &spec)?.estimate, None, false),
        Mode::Robust => {
            let r = robust_decode(&batch, &ensemble, &spec, &cfg.detector()?, variance, &mut rng)?;
            let fb = matches!(r.outcome, FusionOutcome::Fallback { .. });
            (r.estimate, Some(r.k_hat), fb)
        }
    };

    let z = x.magnitudes();
    let err = nmse(&estimate, &z)?;
    let bf = beamforming_gain(&estimate, &x, &mut rng);
    Ok(TrialDetail {
        record: TrialRecord {
            trial,
            success: err < SUCCESS_THRESHOLD,
            nmse: err,
            bf_gain: bf.gain,
            bf_random: bf.random_direction,
            noise_variance: variance,
            k_hat,
            fallback,
        },
        ensemble,
        signal: x,
        estimate,
    })
}

/// `||z_hat - z||^2 / ||z||^2`.
pub fn nmse(est: &MagnitudeEstimate, z: &[f64]) -> Result<f64> {
    if est.values.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            actual: est.values.len(),
        });
    }
    let energy: f64 = z.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroTruth);
    }
    let err: f64 = est
        .values
        .iter()
        .zip(z)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(err / energy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamformingGain {
    pub gain: f64,
    pub index: usize,
    pub random_direction: bool,
}

/// `N |a^H(theta_hat) h|^2 / ||h||^2` with `theta_hat` the grid direction of
/// the largest estimated magnitude.
///
/// Steering at grid index `k` is DFT column `k`, so `a^H h = x_k` and the
/// gain is evaluated in beam space. An all-zero estimate steers at a random
/// grid direction drawn from `rng`.
pub fn beamforming_gain<R: Rng + ?Sized>(
    est: &MagnitudeEstimate,
    x: &SparseSignal,
    rng: &mut R,
) -> BeamformingGain {
    let n = x.len();
    let (index, random_direction) = match est.strongest() {
        Some(k) => (k, false),
        None => (rng.gen_range(0..n), true),
    };
    let energy = x.energy();
    let gain = if energy > 0.0 {
        n as f64 * x.coeffs[index].norm_sqr() / energy
    } else {
        0.0
    };
    BeamformingGain {
        gain,
        index,
        random_direction,
    }
}

/// Aggregated metrics for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub k: usize,
    pub t: usize,
    pub snr_db: Option<f64>,
    pub mode: Mode,
    pub trials: usize,
    pub seed: u64,
    pub success_rate: f64,
    pub nmse: f64,
    pub nmse_median: f64,
    pub bf_gain: f64,
    pub theory_p: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{},{}",
            self.n,
            self.m,
            self.l,
            self.k,
            self.t,
            opt(self.snr_db),
            self.mode.as_str(),
            self.trials,
            self.seed,
            self.success_rate,
            self.nmse,
            self.bf_gain,
            opt(self.theory_p),
            opt(self.wall_ms.map(|w| w.round())),
        )
    }
}

pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

/// Options that do not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Record wall time in the row (breaks byte-identical output).
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub row: MetricRow,
    pub records: Vec<TrialRecord>,
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs `cfg.trials` trials in parallel and reduces them in trial order.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let start = Instant::now();
    let frozen = if cfg.fixed_ensemble {
        Some(fixed_ensemble(cfg)?)
    } else {
        None
    };
    let records = in_pool(opts.threads, || {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|i| run_trial_with(cfg, i, frozen.as_ref()).map(|d| d.record))
            .collect::<Result<Vec<_>>>()
    })??;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    let row = summarize(cfg, &records, opts.timing.then_some(wall));
    Ok(ExperimentResult { row, records })
}

fn summarize(cfg: &ExperimentConfig, records: &[TrialRecord], wall_ms: Option<f64>) -> MetricRow {
    let n = records.len() as f64;
    let successes = records.iter().filter(|r| r.success).count() as f64;
    let nmse_sum: f64 = records.iter().map(|r| r.nmse).sum();
    let bf_sum: f64 = records.iter().map(|r| r.bf_gain).sum();
    let mut sorted: Vec<f64> = records.iter().map(|r| r.nmse).collect();
    sorted.sort_by(f64::total_cmp);
    MetricRow {
        n: cfg.n,
        m: cfg.m,
        l: cfg.l,
        k: cfg.k,
        t: cfg.t(),
        snr_db: if cfg.noise_variance.is_some() { None } else { cfg.snr_db },
        mode: cfg.mode,
        trials: records.len(),
        seed: cfg.seed,
        success_rate: successes / n,
        nmse: nmse_sum / n,
        nmse_median: median(&sorted),
        bf_gain: bf_sum / n,
        theory_p: match cfg.mode {
            Mode::Noiseless if cfg.on_grid => cfg.theory_p(),
            _ => None,
        },
        wall_ms,
    }
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        len if len % 2 == 1 => sorted[len / 2],
        len => 0.5 * (sorted[len / 2 - 1] + sorted[len / 2]),
    }
}

/// Config for sweep point `value` along `axis`.
///
/// `T` and `M` sweeps keep the other quantity fixed: a `T` sweep varies
/// `L = T / 2M`, an `M` sweep varies `L = T / 2M` at the base `T`.
pub fn point_config(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let as_count = |v: f64, what: &str| -> Result<usize> {
        if v >= 1.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Error::InvalidParameter(format!("{what} must be a positive integer, got {v}")))
        }
    };
    let split = |t: usize, m: usize| -> Result<usize> {
        if t % (2 * m) != 0 {
            return Err(Error::InvalidParameter(format!(
                "T = {t} is not a multiple of 2M = {}",
                2 * m
            )));
        }
        Ok(t / (2 * m))
    };
    match axis {
        SweepAxis::T => {
            let t = as_count(value, "T")?;
            cfg.l = split(t, cfg.m)?;
        }
        SweepAxis::N => cfg.n = as_count(value, "N")?,
        SweepAxis::M => {
            let t = base.t();
            cfg.m = as_count(value, "M")?;
            cfg.l = split(t, cfg.m)?;
        }
        SweepAxis::Snr => {
            if !value.is_finite() {
                return Err(Error::InvalidParameter("SNR must be finite".into()));
            }
            cfg.snr_db = Some(value);
            cfg.noise_variance = None;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One row per axis value, in the order given.
pub fn sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    opts: RunOptions,
) -> Result<Vec<MetricRow>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one value".into()));
    }
    let points = values
        .iter()
        .map(|&v| point_config(base, axis, v))
        .collect::<Result<Vec<_>>>()?;
    points
        .iter()
        .map(|cfg| run_experiment(cfg, opts).map(|r| r.row))
        .collect()
}
