//! Noise-robust decoding: energy detection of nulltons, sparsity estimation
//! from the least-nullton graphs, argmin index estimation on permuted
//! modulation values, and set-intersection fusion across candidate graphs.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamspace::{NoiseConvention, PhaselessBatch};
use crate::decoder::{EstimateSource, MagnitudeEstimate};
use crate::encoder::{GraphEnsemble, ModulationSpec};
use crate::error::{Error, Result};

/// Default false-alarm probability, `e^{-9/2}`.
pub fn default_false_alarm() -> f64 {
    (-4.5f64).exp()
}

/// Which Rayleigh tail the threshold is calibrated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    /// `|w|` with total complex power `sigma^2`: `P(|w| > e) = exp(-e^2 / sigma^2)`.
    #[default]
    Standard,
    /// `|w|` with per-quadrature variance `sigma^2`: `P(|w| > e) = exp(-e^2 / (2 sigma^2))`.
    PaperCompat,
}

impl CalibrationMode {
    /// The mode whose tail matches noise drawn under `convention`.
    pub fn matching(convention: NoiseConvention) -> Self {
        match convention {
            NoiseConvention::TotalPower => CalibrationMode::Standard,
            NoiseConvention::PerQuadrature => CalibrationMode::PaperCompat,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CalibrationMode::Standard => "standard",
            CalibrationMode::PaperCompat => "paper-compat",
        }
    }
}

impl std::str::FromStr for CalibrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CalibrationMode::Standard),
            "paper-compat" | "paper" => Ok(CalibrationMode::PaperCompat),
            _ => Err(Error::InvalidParameter(format!("unknown calibration mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub false_alarm: f64,
    pub mode: CalibrationMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            false_alarm: default_false_alarm(),
            mode: CalibrationMode::Standard,
        }
    }
}

impl DetectorConfig {
    pub fn new(false_alarm: f64, mode: CalibrationMode) -> Result<Self> {
        if !(false_alarm > 0.0 && false_alarm < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "false alarm probability must lie in (0, 1), got {false_alarm}"
            )));
        }
        Ok(Self { false_alarm, mode })
    }

    /// Threshold `epsilon` on `y1` for noise variance `variance`.
    pub fn threshold(&self, variance: f64) -> f64 {
        if variance <= 0.0 {
            return 0.0;
        }
        let spread = match self.mode {
            CalibrationMode::Standard => 1.0,
            CalibrationMode::PaperCompat => 2.0,
        };
        (-spread * variance * self.false_alarm.ln()).sqrt()
    }
}

/// `true` for active (non-nullton) right nodes: `y1 > epsilon`.
pub fn detect_nulltons(pairs: &[[f64; 2]], epsilon: f64) -> Vec<bool> {
    pairs.iter().map(|p| p[0] > epsilon).collect()
}

/// Per-right-node diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub right_node: usize,
    pub active: bool,
    /// Raw measurement pair.
    pub y: [f64; 2],
    /// `y2 / y1` after gain compensation, for decoded nodes.
    pub ratio: Option<f64>,
    pub chosen: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDecodeReport {
    pub graph: usize,
    pub nullton_count: usize,
    pub is_nm_candidate: bool,
    pub estimate: MagnitudeEstimate,
    pub nodes: Vec<NodeRecord>,
    /// Active nodes skipped because `y1` did not clear the threshold.
    pub degenerate: usize,
}

impl GraphDecodeReport {
    /// `(right node, chosen left node, ratio)` for every decoded singleton.
    pub fn singleton_records(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.right_node, n.chosen?, n.ratio?)))
    }
}

/// Decodes the active right nodes of one graph.
///
/// Each active node contributes magnitude `y1` at the member of its set
/// whose modulation value is closest to `y2 / y1` (ties: lower index).
pub fn robust_decode_graph(
    batch: &PhaselessBatch,
    ens: &GraphEnsemble,
    graph: usize,
    spec: &ModulationSpec,
    active: &[bool],
    epsilon: f64,
) -> Result<GraphDecodeReport> {
    if active.len() != ens.n_right() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_right(),
            actual: active.len(),
        });
    }
    if spec.len() != ens.n_left() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_left(),
            actual: spec.len(),
        });
    }
    let mut values = vec![0.0; ens.n_left()];
    let mut nodes = Vec::with_capacity(ens.n_right());
    let mut degenerate = 0;
    for (m, &is_active) in active.iter().enumerate() {
        let raw = batch.pair(graph, m);
        let mut rec = NodeRecord {
            right_node: m,
            active: is_active,
            y: raw,
            ratio: None,
            chosen: None,
        };
        let set = ens.set(graph, m);
        if is_active && !set.is_empty() {
            let [y1, y2] = batch.compensated(graph, m);
            if raw[0] <= epsilon || !(y1 > 0.0) {
                degenerate += 1;
            } else {
                let ratio = y2 / y1;
                let mut best = set[0];
                let mut best_d = f64::INFINITY;
                for &i in set {
                    let d = (ens.modulation_value(graph, i, spec) - ratio).abs();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                values[best] = y1;
                rec.ratio = Some(ratio);
                rec.chosen = Some(best);
            }
        }
        nodes.push(rec);
    }
    Ok(GraphDecodeReport {
        graph,
        nullton_count: active.iter().filter(|a| !**a).count(),
        is_nm_candidate: false,
        estimate: MagnitudeEstimate::from_values(values, EstimateSource::Graph(graph)),
        nodes,
        degenerate,
    })
}

/// `K_hat = M - min_l J_l`; flags every report attaining the minimum.
pub fn estimate_k(reports: &mut [GraphDecodeReport], n_right: usize) -> usize {
    let Some(min_j) = reports.iter().map(|r| r.nullton_count).min() else {
        return 0;
    };
    for r in reports.iter_mut() {
        r.is_nm_candidate = r.nullton_count == min_j;
    }
    n_right.saturating_sub(min_j)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionOutcome {
    /// No candidate estimate.
    Empty,
    /// One candidate, returned unchanged.
    Single,
    /// Every rank resolved by intersection; `random_picks` ranks needed a
    /// random choice among several survivors.
    Intersected { random_picks: usize },
    /// Some rank had an empty intersection; candidate `chosen` was returned.
    Fallback { chosen: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub estimate: MagnitudeEstimate,
    pub outcome: FusionOutcome,
}

fn graph_of(e: &MagnitudeEstimate) -> Result<usize> {
    match e.source {
        EstimateSource::Graph(l) => Ok(l),
        _ => Err(Error::InvalidParameter(
            "fusion inputs must be single-graph estimates".into(),
        )),
    }
}

/// Combines candidate estimates by rank-wise set intersection.
///
/// When several indices survive an intersection, those chosen by the most
/// graphs are kept and one of them is drawn at random.
///
/// All random choices come from `rng`.
pub fn fuse_estimates<R: Rng + ?Sized>(
    estimates: &[MagnitudeEstimate],
    ens: &GraphEnsemble,
    rng: &mut R,
) -> Result<Fused> {
    match estimates {
        [] => {
            return Ok(Fused {
                estimate: MagnitudeEstimate::zeros(ens.n_left(), EstimateSource::Empty),
                outcome: FusionOutcome::Empty,
            })
        }
        [only] => {
            return Ok(Fused {
                estimate: only.clone(),
                outcome: FusionOutcome::Single,
            })
        }
        _ => {}
    }
    let graphs = estimates.iter().map(graph_of).collect::<Result<Vec<_>>>()?;
    let ranked: Vec<Vec<usize>> = estimates.iter().map(|e| e.ranked_support()).collect();
    let k_hat = ranked[0].len();
    if ranked.iter().any(|r| r.len() != k_hat) {
        return Err(Error::InvalidParameter(
            "fusion inputs must share the same nonzero count".into(),
        ));
    }
    let count = estimates.len() as f64;
    let mut values = vec![0.0; ens.n_left()];
    let mut random_picks = 0;
    for k in 0..k_hat {
        let mut inter: Vec<usize> = {
            let (g, i) = (graphs[0], ranked[0][k]);
            ens.set(g, ens.right_node_of(g, i)).to_vec()
        };
        for (&g, r) in graphs.iter().zip(&ranked).skip(1) {
            let set = ens.set(g, ens.right_node_of(g, r[k]));
            inter.retain(|i| set.binary_search(i).is_ok());
        }
        let index = match inter.len() {
            0 => {
                let chosen = rng.gen_range(0..estimates.len());
                let mut estimate = estimates[chosen].clone();
                estimate.source = EstimateSource::Fallback(graphs[chosen]);
                return Ok(Fused {
                    estimate,
                    outcome: FusionOutcome::Fallback { chosen },
                });
            }
            1 => inter[0],
            _ => {
                // members picked by the most graphs first, then a random draw
                let votes = |i: usize| ranked.iter().filter(|r| r[k] == i).count();
                let top = inter.iter().map(|&i| votes(i)).max().unwrap_or(0);
                inter.retain(|&i| votes(i) == top);
                if inter.len() > 1 {
                    random_picks += 1;
                }
                inter[rng.gen_range(0..inter.len())]
            }
        };
        // mean written as an offset from the first reading so equal readings stay exact
        let first = estimates[0].values[ranked[0][k]];
        let offset: f64 = estimates
            .iter()
            .zip(&ranked)
            .map(|(e, r)| e.values[r[k]] - first)
            .sum();
        values[index] = first + offset / count;
    }
    Ok(Fused {
        estimate: MagnitudeEstimate::from_values(values, EstimateSource::Fused(graphs)),
        outcome: FusionOutcome::Intersected { random_picks },
    })
}

/// Full robust decoding result.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustDecoded {
    pub estimate: MagnitudeEstimate,
    pub k_hat: usize,
    pub epsilon: f64,
    pub reports: Vec<GraphDecodeReport>,
    /// Candidate graphs discarded because their count differed from `k_hat`.
    pub dropped: Vec<usize>,
    pub outcome: FusionOutcome,
}

/// Detect, estimate `K`, decode candidate graphs and fuse them.
pub fn robust_decode<R: Rng + ?Sized>(
    batch: &PhaselessBatch,
    ens: &GraphEnsemble,
    spec: &ModulationSpec,
    detector: &DetectorConfig,
    variance: f64,
    rng: &mut R,
) -> Result<RobustDecoded> {
    if batch.n_right != ens.n_right() || batch.n_graphs != ens.n_graphs() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_right() * ens.n_graphs(),
            actual: batch.n_right * batch.n_graphs,
        });
    }
    let epsilon = detector.threshold(variance);
    let actives: Vec<Vec<bool>> = (0..ens.n_graphs())
        .map(|l| detect_nulltons(batch.graph(l), epsilon))
        .collect();
    let mut reports: Vec<GraphDecodeReport> = actives
        .iter()
        .enumerate()
        .map(|(l, a)| GraphDecodeReport {
            graph: l,
            nullton_count: a.iter().filter(|x| !**x).count(),
            is_nm_candidate: false,
            estimate: MagnitudeEstimate::zeros(ens.n_left(), EstimateSource::Graph(l)),
            nodes: Vec::new(),
            degenerate: 0,
        })
        .collect();
    let k_hat = estimate_k(&mut reports, ens.n_right());

    let mut candidates = Vec::new();
    let mut dropped = Vec::new();
    for l in 0..ens.n_graphs() {
        let decoded = robust_decode_graph(batch, ens, l, spec, &actives[l], epsilon)?;
        let candidate = reports[l].is_nm_candidate;
        if candidate {
            if decoded.estimate.nonzero_count == k_hat {
                candidates.push(decoded.estimate.clone());
            } else {
                dropped.push(l);
            }
        }
        reports[l] = GraphDecodeReport {
            is_nm_candidate: candidate,
            ..decoded
        };
    }
    let fused = fuse_estimates(&candidates, ens, rng)?;
    Ok(RobustDecoded {
        estimate: fused.estimate,
        k_hat,
        epsilon,
        reports,
        dropped,
        outcome: fused.outcome,
    })
}

/// CSV dump of the per-right-node diagnostics, one row per right node.
pub fn reports_to_csv(reports: &[GraphDecodeReport]) -> String {
    let mut out = String::from("graph,right_node,candidate,active,y1,y2,ratio,chosen\n");
    for r in reports {
        for n in &r.nodes {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.graph,
                n.right_node,
                u8::from(r.is_nm_candidate),
                u8::from(n.active),
                n.y[0],
                n.y[1],
                n.ratio.map(|v| v.to_string()).unwrap_or_default(),
                n.chosen.map(|v| v.to_string()).unwrap_or_default(),
            );
        }
    }
    out
}
