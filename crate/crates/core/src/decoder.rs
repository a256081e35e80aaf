//! Noiseless phaseless decoding: every non-zero right node is read as a
//! singleton, and the graph yielding the most nonzeros wins.

use serde::{Deserialize, Serialize};

use crate::beamspace::PhaselessBatch;
use crate::encoder::{GraphEnsemble, ModulationKind, ModulationSpec};
use crate::error::{Error, Result};

/// Upper clamp for the arccos argument of the cosine estimator.
const ARCCOS_MAX: f64 = 1.0 - 1e-12;

/// Where a magnitude estimate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateSource {
    Graph(usize),
    /// Set-intersection fusion over these graphs.
    Fused(Vec<usize>),
    /// Fusion gave up and returned this graph's estimate.
    Fallback(usize),
    /// No graph produced anything (e.g. no active right node).
    Empty,
}

/// Estimate of `z = |x|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeEstimate {
    pub values: Vec<f64>,
    pub source: EstimateSource,
    pub nonzero_count: usize,
}

impl MagnitudeEstimate {
    pub fn zeros(n: usize, source: EstimateSource) -> Self {
        Self {
            values: vec![0.0; n],
            source,
            nonzero_count: 0,
        }
    }

    pub fn from_values(values: Vec<f64>, source: EstimateSource) -> Self {
        let nonzero_count = values.iter().filter(|&&v| v > 0.0).count();
        Self {
            values,
            source,
            nonzero_count,
        }
    }

    /// Nonzero indices ordered by decreasing magnitude (ties: lower index).
    pub fn ranked_support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len())
            .filter(|&i| self.values[i] > 0.0)
            .collect();
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        idx
    }

    /// Index of the largest entry, if any entry is positive.
    pub fn strongest(&self) -> Option<usize> {
        self.ranked_support().first().copied()
    }
}

/// Output of [`decode_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDecode {
    pub estimate: MagnitudeEstimate,
    /// Right nodes whose cosine ratio fell outside `[0, 1)` and was clamped.
    pub clamped: usize,
}

/// Real-valued position (0-based value index) implied by a singleton ratio.
fn value_position(y: [f64; 2], spec: &ModulationSpec) -> (f64, bool) {
    let [y1, y2] = y;
    match spec.kind {
        ModulationKind::Linear => (spec.len() as f64 * y2 / y1 - 1.0, false),
        ModulationKind::Cosine { omega } => {
            let arg = y2 / (2.0 * y1);
            let clamped = !(0.0..ARCCOS_MAX).contains(&arg);
            let arg = arg.clamp(0.0, ARCCOS_MAX);
            (arg.acos() / omega - 1.0, clamped)
        }
    }
}

/// Member of `set` whose assigned value index is nearest to `pos`.
fn snap(set: &[usize], pos: f64, ens: &GraphEnsemble, graph: usize) -> usize {
    let mut best = set[0];
    let mut best_d = f64::INFINITY;
    for &i in set {
        let d = (ens.value_index(graph, i) as f64 - pos).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn check_layout(batch: &PhaselessBatch, ens: &GraphEnsemble, spec: &ModulationSpec) -> Result<()> {
    if batch.n_right != ens.n_right() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_right(),
            actual: batch.n_right,
        });
    }
    if batch.n_graphs != ens.n_graphs() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_graphs(),
            actual: batch.n_graphs,
        });
    }
    if spec.len() != ens.n_left() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_left(),
            actual: spec.len(),
        });
    }
    Ok(())
}

/// Decodes graph `graph` as if it were an NM-graph.
pub fn decode_graph(
    batch: &PhaselessBatch,
    ens: &GraphEnsemble,
    graph: usize,
    spec: &ModulationSpec,
) -> Result<GraphDecode> {
    check_layout(batch, ens, spec)?;
    if graph >= ens.n_graphs() {
        return Err(Error::InvalidParameter(format!("graph {graph} out of range")));
    }
    let mut values = vec![0.0; ens.n_left()];
    let mut clamped = 0;
    for m in 0..ens.n_right() {
        if batch.pair(graph, m)[0] == 0.0 {
            continue;
        }
        let set = ens.set(graph, m);
        if set.is_empty() {
            continue;
        }
        let y = batch.compensated(graph, m);
        let (pos, was_clamped) = value_position(y, spec);
        clamped += usize::from(was_clamped);
        values[snap(set, pos, ens, graph)] = y[0];
    }
    Ok(GraphDecode {
        estimate: MagnitudeEstimate::from_values(values, EstimateSource::Graph(graph)),
        clamped,
    })
}

/// Result of noiseless decoding over all graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub estimate: MagnitudeEstimate,
    pub per_graph: Vec<GraphDecode>,
}

/// Runs [`decode_graph`] on every graph and keeps the estimate with the most
/// nonzeros (ties go to the lowest graph index).
pub fn decode(batch: &PhaselessBatch, ens: &GraphEnsemble, spec: &ModulationSpec) -> Result<Decoded> {
    let per_graph = (0..ens.n_graphs())
        .map(|l| decode_graph(batch, ens, l, spec))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (l, g) in per_graph.iter().enumerate() {
        if g.estimate.nonzero_count > per_graph[best].estimate.nonzero_count {
            best = l;
        }
    }
    Ok(Decoded {
        estimate: per_graph[best].estimate.clone(),
        per_graph,
    })
}
