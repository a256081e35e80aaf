//! Geometric mmWave channel on a uniform linear array, its DFT beam-space
//! representation, hybrid precoder factorization, and the phaseless
//! measurement process.
//!
//! All DFT quantities use the unitary convention
//! `D[n, k] = exp(j 2 pi n k / N) / sqrt(N)` (0-based `n`, `k`), so that
//! `D^T D^* = I` and a beam-space row `a(t)` is reproduced exactly by the
//! physical precoder `b(t) = D^* S(t) f_BB(t)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::MeasurementMatrix;
use crate::error::{Error, Result};

/// Tolerance used when deciding whether an angle sits on the DFT grid.
const GRID_TOL: f64 = 1e-9;

/// Transmit array description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub n_antennas: usize,
    pub n_rf_chains: usize,
    pub wavelength: f64,
    pub element_spacing: f64,
}

impl ChannelConfig {
    /// Half-wavelength ULA with unit wavelength.
    pub fn new(n_antennas: usize, n_rf_chains: usize) -> Self {
        Self {
            n_antennas,
            n_rf_chains,
            wavelength: 1.0,
            element_spacing: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 {
            return Err(Error::InvalidParameter("n_antennas must be positive".into()));
        }
        if self.n_rf_chains == 0 || self.n_rf_chains > self.n_antennas {
            return Err(Error::InvalidParameter(format!(
                "n_rf_chains must lie in 1..={}, got {}",
                self.n_antennas, self.n_rf_chains
            )));
        }
        if !(self.wavelength > 0.0) || !(self.element_spacing > 0.0) {
            return Err(Error::InvalidParameter(
                "wavelength and element spacing must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Spatial frequency `d sin(theta) / lambda`, in cycles per element.
    fn spatial_frequency(&self, theta: f64) -> f64 {
        self.element_spacing * theta.sin() / self.wavelength
    }
}

/// Propagation paths of a geometric channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub gains: Vec<Complex64>,
    pub aods: Vec<f64>,
    pub on_grid: bool,
}

impl PathSet {
    pub fn new(gains: Vec<Complex64>, aods: Vec<f64>, on_grid: bool) -> Result<Self> {
        if gains.len() != aods.len() {
            return Err(Error::DimensionMismatch {
                expected: gains.len(),
                actual: aods.len(),
            });
        }
        if gains.is_empty() {
            return Err(Error::EmptyPathSet);
        }
        Ok(Self {
            gains,
            aods,
            on_grid,
        })
    }

    /// Paths placed exactly on DFT grid columns, given by index.
    pub fn on_grid_indices(
        gains: Vec<Complex64>,
        indices: &[usize],
        cfg: &ChannelConfig,
    ) -> Result<Self> {
        let aods = indices
            .iter()
            .map(|&k| grid_angle(k, cfg))
            .collect::<Result<Vec<_>>>()?;
        Self::new(gains, aods, true)
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }
}

/// A beam-space coefficient vector together with its support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseSignal {
    pub coeffs: Vec<Complex64>,
    /// 0-based indices of the nonzero coefficients, ascending.
    pub support: Vec<usize>,
}

impl SparseSignal {
    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); n],
            support: Vec::new(),
        }
    }

    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Self {
        let support = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != Complex64::new(0.0, 0.0))
            .map(|(i, _)| i)
            .collect();
        Self { coeffs, support }
    }

    /// Builds a length-`n` signal from `(index, value)` pairs.
    pub fn from_entries(n: usize, entries: &[(usize, Complex64)]) -> Result<Self> {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n];
        for &(i, v) in entries {
            if i >= n {
                return Err(Error::InvalidParameter(format!(
                    "index {i} out of range for length {n}"
                )));
            }
            coeffs[i] += v;
        }
        Ok(Self::from_coeffs(coeffs))
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }

    /// `z = |x|`, the quantity beam alignment recovers.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.norm()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// How the noise variance is split over the real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseConvention {
    /// `sigma^2` is the total complex power; each quadrature gets `sigma^2 / 2`.
    #[default]
    TotalPower,
    /// Each quadrature has variance `sigma^2`.
    PerQuadrature,
}

impl NoiseConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseConvention::TotalPower => "total-power",
            NoiseConvention::PerQuadrature => "per-quadrature",
        }
    }

    /// Standard deviation of one quadrature component.
    pub fn quadrature_std(&self, variance: f64) -> f64 {
        match self {
            NoiseConvention::TotalPower => (variance / 2.0).sqrt(),
            NoiseConvention::PerQuadrature => variance.sqrt(),
        }
    }
}

impl std::str::FromStr for NoiseConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total-power" | "total" => Ok(NoiseConvention::TotalPower),
            "per-quadrature" | "quadrature" => Ok(NoiseConvention::PerQuadrature),
            _ => Err(Error::InvalidParameter(format!("unknown noise convention '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub variance: f64,
    pub cfo_enabled: bool,
    pub convention: NoiseConvention,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            variance: 0.0,
            cfo_enabled: true,
            convention: NoiseConvention::TotalPower,
        }
    }

    pub fn new(variance: f64, convention: NoiseConvention) -> Self {
        Self {
            variance,
            cfo_enabled: true,
            convention,
        }
    }

    /// Draws one complex noise sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let s = self.convention.quadrature_std(self.variance);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    }
}

/// Hybrid precoder realizing one measurement row: `a(t) = S(t) f_BB(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecoderFactorization {
    pub selection_columns: Vec<usize>,
    pub baseband_weights: Vec<Complex64>,
    pub time_index: usize,
}

impl PrecoderFactorization {
    /// Physical precoding vector `b(t) = D^* S(t) f_BB(t)`.
    pub fn precoder(&self, n: usize) -> Vec<Complex64> {
        let mut b = vec![Complex64::new(0.0, 0.0); n];
        for (&col, &w) in self.selection_columns.iter().zip(&self.baseband_weights) {
            let d = dft_column(n, col);
            for (bi, di) in b.iter_mut().zip(d) {
                *bi += di.conj() * w;
            }
        }
        b
    }
}

/// Phaseless measurements grouped by `(graph, right node)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaselessBatch {
    pub n_right: usize,
    pub n_graphs: usize,
    /// Raw magnitudes `[y1, y2]`, indexed by `l * n_right + m`.
    pub pairs: Vec<[f64; 2]>,
    /// Gain applied to each row before measurement (1 for unnormalized rows).
    pub row_gain: Vec<[f64; 2]>,
}

impl PhaselessBatch {
    pub fn pair(&self, graph: usize, right: usize) -> [f64; 2] {
        self.pairs[graph * self.n_right + right]
    }

    /// Measurement pair with the known row gain divided out.
    pub fn compensated(&self, graph: usize, right: usize) -> [f64; 2] {
        let i = graph * self.n_right + right;
        let [y1, y2] = self.pairs[i];
        let [g1, g2] = self.row_gain[i];
        [y1 / g1, y2 / g2]
    }

    pub fn graph(&self, graph: usize) -> &[[f64; 2]] {
        &self.pairs[graph * self.n_right..(graph + 1) * self.n_right]
    }

    pub fn len(&self) -> usize {
        self.pairs.len() * 2
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Column `k` of the unitary `n`-point DFT matrix.
pub fn dft_column(n: usize, k: usize) -> Vec<Complex64> {
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|i| {
            // reduce the exponent modulo n before scaling to keep the phase exact-ish
            let e = ((i * k) % n) as f64;
            Complex64::from_polar(scale, 2.0 * PI * e / n as f64)
        })
        .collect()
}

/// `h = D x`.
pub fn beamspace_to_antenna(x: &SparseSignal) -> Vec<Complex64> {
    let n = x.len();
    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for &k in &x.support {
        let col = dft_column(n, k);
        for (hi, di) in h.iter_mut().zip(col) {
            *hi += di * x.coeffs[k];
        }
    }
    h
}

/// `x = D^H h`.
pub fn antenna_to_beamspace(h: &[Complex64]) -> Vec<Complex64> {
    let n = h.len();
    (0..n)
        .map(|k| {
            dft_column(n, k)
                .iter()
                .zip(h)
                .map(|(d, hi)| d.conj() * hi)
                .sum()
        })
        .collect()
}

/// ULA response `a_t(theta)`, unit norm.
pub fn steering_vector(theta: f64, cfg: &ChannelConfig) -> Vec<Complex64> {
    let n = cfg.n_antennas;
    let scale = 1.0 / (n as f64).sqrt();
    let psi = 2.0 * PI * cfg.spatial_frequency(theta);
    (0..n)
        .map(|i| Complex64::from_polar(scale, i as f64 * psi))
        .collect()
}

/// Angle in `[0, 2 pi)` whose steering vector equals DFT column `k`.
pub fn grid_angle(k: usize, cfg: &ChannelConfig) -> Result<f64> {
    let n = cfg.n_antennas;
    if k >= n {
        return Err(Error::InvalidParameter(format!(
            "grid index {k} out of range for N = {n}"
        )));
    }
    // spatial frequency k/N wrapped into (-1/2, 1/2]
    let mut nu = k as f64 / n as f64;
    if nu > 0.5 {
        nu -= 1.0;
    }
    let s = nu * cfg.wavelength / cfg.element_spacing;
    if s.abs() > 1.0 + GRID_TOL {
        return Err(Error::InvalidParameter(format!(
            "grid index {k} is not reachable with spacing {}",
            cfg.element_spacing
        )));
    }
    let theta = s.clamp(-1.0, 1.0).asin();
    Ok(if theta < 0.0 { theta + 2.0 * PI } else { theta })
}

/// DFT column index matching `theta`, if it lies on the grid.
pub fn grid_index(theta: f64, cfg: &ChannelConfig) -> Option<usize> {
    let n = cfg.n_antennas as f64;
    let pos = cfg.spatial_frequency(theta) * n;
    let nearest = pos.round();
    if (pos - nearest).abs() > GRID_TOL * n.max(1.0) {
        return None;
    }
    Some((nearest as i64).rem_euclid(cfg.n_antennas as i64) as usize)
}

/// Builds `h = sum_p alpha_p a_t(theta_p)` and its beam-space coefficients.
///
/// On-grid path sets yield a signal with exactly one nonzero per path; the
/// antenna-domain vector is then `D x`. Off-grid sets use `x = D^H h`.
pub fn synthesize_channel(
    paths: &PathSet,
    cfg: &ChannelConfig,
) -> Result<(Vec<Complex64>, SparseSignal)> {
    cfg.validate()?;
    if paths.is_empty() {
        return Err(Error::EmptyPathSet);
    }
    if paths.gains.len() != paths.aods.len() {
        return Err(Error::DimensionMismatch {
            expected: paths.gains.len(),
            actual: paths.aods.len(),
        });
    }
    let n = cfg.n_antennas;

    if paths.on_grid {
        let mut entries = Vec::with_capacity(paths.len());
        for (&g, &theta) in paths.gains.iter().zip(&paths.aods) {
            let k = grid_index(theta, cfg).ok_or(Error::OffGridAngle { theta })?;
            if entries.iter().any(|&(j, _)| j == k) {
                return Err(Error::DuplicateGridIndex { index: k });
            }
            if g == Complex64::new(0.0, 0.0) {
                return Err(Error::InvalidParameter("on-grid path with zero gain".into()));
            }
            entries.push((k, g));
        }
        let x = SparseSignal::from_entries(n, &entries)?;
        let h = beamspace_to_antenna(&x);
        return Ok((h, x));
    }

    let mut h = vec![Complex64::new(0.0, 0.0); n];
    for (&g, &theta) in paths.gains.iter().zip(&paths.aods) {
        for (hi, a) in h.iter_mut().zip(steering_vector(theta, cfg)) {
            *hi += g * a;
        }
    }
    let x = SparseSignal::from_coeffs(antenna_to_beamspace(&h));
    Ok((h, x))
}

/// Splits a C1-feasible beam-space row into column selection and baseband
/// weights.
pub fn factorize_row(
    row: &[Complex64],
    cfg: &ChannelConfig,
    time_index: usize,
) -> Result<PrecoderFactorization> {
    if row.len() != cfg.n_antennas {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_antennas,
            actual: row.len(),
        });
    }
    let (selection_columns, baseband_weights): (Vec<usize>, Vec<Complex64>) = row
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != Complex64::new(0.0, 0.0))
        .map(|(i, v)| (i, *v))
        .unzip();
    if selection_columns.len() > cfg.n_rf_chains {
        return Err(Error::C1Violation {
            row: time_index,
            nonzeros: selection_columns.len(),
            limit: cfg.n_rf_chains,
        });
    }
    Ok(PrecoderFactorization {
        selection_columns,
        baseband_weights,
        time_index,
    })
}

/// Takes phaseless measurements `y_t = |e^{j phi_t} a_t^T x + w_t|`.
///
/// The row gains stored in `matrix` are applied to the signal term and
/// recorded in the batch; noise is added after the gain.
pub fn measure<R: Rng + ?Sized>(
    x: &SparseSignal,
    matrix: &MeasurementMatrix,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<PhaselessBatch> {
    if matrix.n_cols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: matrix.n_cols(),
            actual: x.len(),
        });
    }
    if !(noise.variance >= 0.0) {
        return Err(Error::InvalidParameter("noise variance must be >= 0".into()));
    }
    let n_pairs = matrix.n_graphs() * matrix.n_right();
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut row_gain = Vec::with_capacity(n_pairs);
    let sample = |row: usize, rng: &mut R| -> f64 {
        let gain = matrix.row_gain(row);
        let u: Complex64 = matrix
            .row(row)
            .iter()
            .map(|&(c, v)| x.coeffs[c] * (v * gain))
            .sum();
        let phi = if noise.cfo_enabled {
            rng.gen_range(0.0..2.0 * PI)
        } else {
            0.0
        };
        if noise.variance == 0.0 {
            // |e^{j phi} u| = |u|
            return u.norm();
        }
        let w = noise.sample(rng);
        (Complex64::from_polar(1.0, phi) * u + w).norm()
    };
    for p in 0..n_pairs {
        let y1 = sample(2 * p, rng);
        let y2 = sample(2 * p + 1, rng);
        pairs.push([y1, y2]);
        row_gain.push([matrix.row_gain(2 * p), matrix.row_gain(2 * p + 1)]);
    }
    Ok(PhaselessBatch {
        n_right: matrix.n_right(),
        n_graphs: matrix.n_graphs(),
        pairs,
        row_gain,
    })
}

/// Noise variance giving `snr_db = 10 log10(|h|^2 / (N sigma^2))`.
pub fn sigma_for_snr(h: &[Complex64], snr_db: f64, cfg: &ChannelConfig) -> Result<f64> {
    let energy: f64 = h.iter().map(|c| c.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroChannel);
    }
    Ok(energy / (cfg.n_antennas as f64 * 10f64.powf(snr_db / 10.0)))
}

/// Inverse of [`sigma_for_snr`].
pub fn snr_for_sigma(h: &[Complex64], variance: f64, cfg: &ChannelConfig) -> Result<f64> {
    let energy: f64 = h.iter().map(|c| c.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::ZeroChannel);
    }
    Ok(10.0 * (energy / (cfg.n_antennas as f64 * variance)).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{assemble_matrix, build_ensemble, ModulationSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use proptest::{prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn norm(v: &[Complex64]) -> f64 {
        v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn steering_vector_broadside_is_flat() {
        let cfg = ChannelConfig::new(4, 2);
        let a = steering_vector(0.0, &cfg);
        for z in a {
            assert!((z - c(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_vector_unit_norm_sweep() {
        let cfg = ChannelConfig::new(37, 4);
        for i in 0..1000 {
            let theta = 2.0 * PI * i as f64 / 1000.0;
            assert!((norm(&steering_vector(theta, &cfg)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_angle_reproduces_dft_column() {
        let cfg = ChannelConfig::new(8, 2);
        for k in 0..8 {
            // explicit unitary DFT column built independently
            let col: Vec<Complex64> = (0..8)
                .map(|n| {
                    let ang = 2.0 * PI * (n * k) as f64 / 8.0;
                    c(ang.cos(), ang.sin()) / 8f64.sqrt()
                })
                .collect();
            let a = steering_vector(grid_angle(k, &cfg).unwrap(), &cfg);
            for (x, y) in a.iter().zip(&col) {
                assert!((x - y).norm() < 1e-12, "k={k}");
            }
            assert_eq!(grid_index(grid_angle(k, &cfg).unwrap(), &cfg), Some(k));
        }
    }

    #[test]
    fn single_on_grid_path() {
        let cfg = ChannelConfig::new(16, 4);
        let paths = PathSet::on_grid_indices(vec![c(1.0, 0.0)], &[5], &cfg).unwrap();
        let (h, x) = synthesize_channel(&paths, &cfg).unwrap();
        assert_eq!(x.support, vec![5]);
        assert!((x.coeffs[5].norm() - 1.0).abs() < 1e-12);
        assert!((norm(&h) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_paths_rejected() {
        let cfg = ChannelConfig::new(16, 4);
        assert_eq!(PathSet::new(vec![], vec![], true), Err(Error::EmptyPathSet));
        let bad = PathSet {
            gains: vec![],
            aods: vec![],
            on_grid: false,
        };
        assert_eq!(synthesize_channel(&bad, &cfg), Err(Error::EmptyPathSet));
    }

    #[test]
    fn off_grid_angle_rejected_when_flagged_on_grid() {
        let cfg = ChannelConfig::new(16, 4);
        let paths = PathSet::new(vec![c(1.0, 0.0)], vec![0.1234], true).unwrap();
        assert!(matches!(
            synthesize_channel(&paths, &cfg),
            Err(Error::OffGridAngle { .. })
        ));
    }

    #[test]
    fn two_paths_reconstruct_through_dft() {
        let cfg = ChannelConfig::new(16, 4);
        let paths =
            PathSet::on_grid_indices(vec![c(1.0, 0.0), c(0.0, 0.5)], &[2, 11], &cfg).unwrap();
        let (h, x) = synthesize_channel(&paths, &cfg).unwrap();
        assert_eq!(x.sparsity(), 2);
        // h built from the steering vectors directly
        let mut direct = vec![c(0.0, 0.0); 16];
        for (g, th) in paths.gains.iter().zip(&paths.aods) {
            for (d, a) in direct.iter_mut().zip(steering_vector(*th, &cfg)) {
                *d += g * a;
            }
        }
        let diff: Vec<Complex64> = h.iter().zip(&direct).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) / norm(&h) < 1e-12);
        assert!((x.coeffs[11].norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn off_grid_channel_keeps_energy() {
        let cfg = ChannelConfig::new(16, 4);
        let paths = PathSet::new(vec![c(0.3, -0.7)], vec![0.3], false).unwrap();
        let (h, x) = synthesize_channel(&paths, &cfg).unwrap();
        assert!((norm(&h) - x.energy().sqrt()).abs() < 1e-12);
        assert!(x.sparsity() > 1);
    }

    #[test]
    fn factorize_identity() {
        let cfg = ChannelConfig::new(8, 2);
        let mut row = vec![c(0.0, 0.0); 8];
        row[3] = c(1.0, 0.0);
        row[7] = c(2.0, 0.0);
        let f = factorize_row(&row, &cfg, 0).unwrap();
        assert_eq!(f.selection_columns, vec![3, 7]);
        assert_eq!(f.baseband_weights, vec![c(1.0, 0.0), c(2.0, 0.0)]);
    }

    #[test]
    fn factorize_rejects_too_many_nonzeros() {
        let cfg = ChannelConfig::new(8, 2);
        let mut row = vec![c(0.0, 0.0); 8];
        row[0] = c(1.0, 0.0);
        row[1] = c(1.0, 0.0);
        row[2] = c(1.0, 0.0);
        assert_eq!(
            factorize_row(&row, &cfg, 4),
            Err(Error::C1Violation {
                row: 4,
                nonzeros: 3,
                limit: 2
            })
        );
    }

    #[test]
    fn physical_precoder_reproduces_random_row() {
        let cfg = ChannelConfig::new(16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 0..50 {
            let mut row = vec![c(0.0, 0.0); 16];
            for _ in 0..4 {
                let i = rng.gen_range(0..16);
                row[i] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let f = factorize_row(&row, &cfg, t).unwrap();
            let b = f.precoder(16);
            // D^T b
            for (k, want) in row.iter().enumerate() {
                let got: Complex64 = dft_column(16, k).iter().zip(&b).map(|(d, bi)| d * bi).sum();
                assert!((got - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_signal_zero_noise_gives_zero() {
        let ens = build_ensemble(16, 4, 2, 4, 1).unwrap();
        let a = assemble_matrix(&ens, &ModulationSpec::linear(16)).unwrap();
        let x = SparseSignal::zeros(16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = measure(&x, &a, &NoiseModel::noiseless(), &mut rng).unwrap();
        assert!(y.pairs.iter().all(|p| p[0] == 0.0 && p[1] == 0.0));
    }

    #[test]
    fn cfo_is_invisible_without_noise() {
        let ens = build_ensemble(16, 4, 2, 4, 1).unwrap();
        let a = assemble_matrix(&ens, &ModulationSpec::linear(16)).unwrap();
        let x = SparseSignal::from_entries(16, &[(2, c(0.4, -1.1)), (9, c(-0.3, 0.2))]).unwrap();
        let mut on = NoiseModel::noiseless();
        on.cfo_enabled = true;
        let mut off = on;
        off.cfo_enabled = false;
        let y_on = measure(&x, &a, &on, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let y_off = measure(&x, &a, &off, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(y_on, y_off);
    }

    #[test]
    fn measure_is_deterministic_per_seed() {
        let ens = build_ensemble(8, 4, 2, 2, 5).unwrap();
        let a = assemble_matrix(&ens, &ModulationSpec::linear(8)).unwrap();
        let x = SparseSignal::from_entries(8, &[(1, c(1.0, 0.5)), (6, c(-0.2, 0.9))]).unwrap();
        let noise = NoiseModel::new(0.01, NoiseConvention::TotalPower);
        let y1 = measure(&x, &a, &noise, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let y2 = measure(&x, &a, &noise, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(y1, y2);
        let y3 = measure(&x, &a, &noise, &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
        assert_ne!(y1, y3);
    }

    #[test]
    fn measure_rejects_wrong_length() {
        let ens = build_ensemble(8, 4, 1, 2, 5).unwrap();
        let a = assemble_matrix(&ens, &ModulationSpec::linear(8)).unwrap();
        let x = SparseSignal::zeros(9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            measure(&x, &a, &NoiseModel::noiseless(), &mut rng),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn snr_formula() {
        let cfg = ChannelConfig::new(128, 8);
        let mut h = vec![c(0.0, 0.0); 128];
        h[0] = c(1.0, 0.0);
        let s = sigma_for_snr(&h, 20.0, &cfg).unwrap();
        assert!((s - 1.0 / 12800.0).abs() < 1e-18);

        let h: Vec<Complex64> = vec![c(1.0, 0.0); 128];
        assert!((sigma_for_snr(&h, 0.0, &cfg).unwrap() - 1.0).abs() < 1e-15);

        let s = sigma_for_snr(&h, 13.7, &cfg).unwrap();
        let back = snr_for_sigma(&h, s, &cfg).unwrap();
        assert!((sigma_for_snr(&h, back, &cfg).unwrap() - s).abs() < 1e-12 * s);

        assert_eq!(
            sigma_for_snr(&vec![c(0.0, 0.0); 128], 10.0, &cfg),
            Err(Error::ZeroChannel)
        );
    }

    proptest! {
        #[test]
        fn dft_round_trip(seed: u64, n in 1usize..48) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let x = SparseSignal::from_coeffs(coeffs);
            let back = antenna_to_beamspace(&beamspace_to_antenna(&x));
            for (a, b) in back.iter().zip(&x.coeffs) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn grid_angle_round_trip(n in 1usize..300, k_frac in 0.0f64..1.0) {
            let cfg = ChannelConfig::new(n, 1);
            let k = ((k_frac * n as f64) as usize).min(n - 1);
            let theta = grid_angle(k, &cfg).unwrap();
            prop_assert!((0.0..2.0 * PI).contains(&theta));
            prop_assert_eq!(grid_index(theta, &cfg), Some(k));
        }

        #[test]
        fn cfo_invisible_for_random_signals(seed: u64, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ens = build_ensemble(32, 8, 2, 4, seed).unwrap();
            let a = assemble_matrix(&ens, &ModulationSpec::linear(32)).unwrap().unit_norm();
            let idx = rand::seq::index::sample(&mut rng, 32, k).into_vec();
            let entries: Vec<(usize, Complex64)> = idx
                .iter()
                .map(|&i| (i, Complex64::new(rng.gen_range(0.1..1.0), rng.gen_range(-1.0..1.0))))
                .collect();
            let x = SparseSignal::from_entries(32, &entries).unwrap();
            let mut off = NoiseModel::noiseless();
            off.cfo_enabled = false;
            let with = measure(&x, &a, &NoiseModel::noiseless(), &mut rng).unwrap();
            let without = measure(&x, &a, &off, &mut rng).unwrap();
            prop_assert_eq!(with, without);
        }

        #[test]
        fn measurements_are_nonnegative(seed: u64, var in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ens = build_ensemble(16, 4, 2, 4, seed).unwrap();
            let a = assemble_matrix(&ens, &ModulationSpec::linear(16)).unwrap();
            let x = SparseSignal::from_entries(16, &[(3, Complex64::new(0.5, 0.5))]).unwrap();
            let batch = measure(&x, &a, &NoiseModel::new(var, NoiseConvention::TotalPower), &mut rng).unwrap();
            prop_assert!(batch.pairs.iter().flatten().all(|&y| y >= 0.0));
            prop_assert_eq!(batch.len(), a.n_rows());
        }
    }
}
