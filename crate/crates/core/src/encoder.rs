//! Sparse encoding: balanced random bipartite graphs, modulation values and
//! the stacked `2ML x N` measurement matrix.
//!
//! Left node `n` (0-based storage) carries modulation value `t_{n+1}`; each
//! graph may permute which value a node receives. Right node `m` of graph `l`
//! owns rows `2(lM + m)` (all-ones row) and `2(lM + m) + 1` (modulated row).

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Second-row modulation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModulationKind {
    /// `t_n = 2 cos(n omega)`, `omega` in `(0, pi / (2N)]`.
    Cosine { omega: f64 },
    /// `t_n = n / N`.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSpec {
    pub kind: ModulationKind,
    /// `values[i] = t_{i+1}`.
    pub values: Vec<f64>,
}

impl ModulationSpec {
    pub fn linear(n: usize) -> Self {
        Self {
            kind: ModulationKind::Linear,
            values: (1..=n).map(|i| i as f64 / n as f64).collect(),
        }
    }

    pub fn cosine(n: usize, omega: f64) -> Result<Self> {
        let max = PI / (2.0 * n as f64);
        if !(omega > 0.0 && omega <= max) {
            return Err(Error::InvalidParameter(format!(
                "omega must lie in (0, {max}], got {omega}"
            )));
        }
        Ok(Self {
            kind: ModulationKind::Cosine { omega },
            values: (1..=n).map(|i| 2.0 * (i as f64 * omega).cos()).collect(),
        })
    }

    /// Cosine modulation with the widest allowed `omega = pi / (2N)`.
    pub fn cosine_default(n: usize) -> Self {
        Self::cosine(n, PI / (2.0 * n as f64)).expect("default omega is in range")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModulationKind::Cosine { .. } => "cosine",
            ModulationKind::Linear => "linear",
        }
    }
}

/// `L` random partitions of `N` left nodes into `M` sets, plus the per-graph
/// modulation-value assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleRepr", into = "EnsembleRepr")]
pub struct GraphEnsemble {
    n_left: usize,
    n_right: usize,
    rf_chains: usize,
    seed: Option<u64>,
    partitions: Vec<Vec<Vec<usize>>>,
    permutations: Vec<Vec<usize>>,
    membership: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleRepr {
    n_left: usize,
    n_right: usize,
    n_graphs: usize,
    rf_chains: usize,
    seed: Option<u64>,
    partitions: Vec<Vec<Vec<usize>>>,
    permutations: Vec<Vec<usize>>,
}

impl TryFrom<EnsembleRepr> for GraphEnsemble {
    type Error = Error;

    fn try_from(r: EnsembleRepr) -> Result<Self> {
        if r.partitions.len() != r.n_graphs {
            return Err(Error::DimensionMismatch {
                expected: r.n_graphs,
                actual: r.partitions.len(),
            });
        }
        let mut ens =
            GraphEnsemble::from_partitions(r.n_left, r.rf_chains, r.partitions, Some(r.permutations))?;
        if ens.n_right != r.n_right {
            return Err(Error::DimensionMismatch {
                expected: r.n_right,
                actual: ens.n_right,
            });
        }
        ens.seed = r.seed;
        Ok(ens)
    }
}

impl From<GraphEnsemble> for EnsembleRepr {
    fn from(e: GraphEnsemble) -> Self {
        EnsembleRepr {
            n_left: e.n_left,
            n_right: e.n_right,
            n_graphs: e.partitions.len(),
            rf_chains: e.rf_chains,
            seed: e.seed,
            partitions: e.partitions,
            permutations: e.permutations,
        }
    }
}

impl GraphEnsemble {
    /// Builds an ensemble from explicit partitions (0-based node indices).
    ///
    /// Each graph must split `0..n_left` into the same number of disjoint
    /// sets. Missing permutations default to the identity.
    pub fn from_partitions(
        n_left: usize,
        rf_chains: usize,
        partitions: Vec<Vec<Vec<usize>>>,
        permutations: Option<Vec<Vec<usize>>>,
    ) -> Result<Self> {
        if partitions.is_empty() {
            return Err(Error::InvalidParameter("ensemble needs at least one graph".into()));
        }
        let n_right = partitions[0].len();
        if n_right == 0 {
            return Err(Error::InvalidParameter("graph needs at least one right node".into()));
        }
        let mut membership = Vec::with_capacity(partitions.len());
        let mut sorted = Vec::with_capacity(partitions.len());
        for (l, graph) in partitions.into_iter().enumerate() {
            if graph.len() != n_right {
                return Err(Error::DimensionMismatch {
                    expected: n_right,
                    actual: graph.len(),
                });
            }
            let mut owner = vec![usize::MAX; n_left];
            let mut sets = Vec::with_capacity(n_right);
            for (m, mut set) in graph.into_iter().enumerate() {
                set.sort_unstable();
                for &i in &set {
                    if i >= n_left || owner[i] != usize::MAX {
                        return Err(Error::InvalidParameter(format!(
                            "graph {l}: node {i} is out of range or in two sets"
                        )));
                    }
                    owner[i] = m;
                }
                sets.push(set);
            }
            if owner.contains(&usize::MAX) {
                return Err(Error::InvalidParameter(format!(
                    "graph {l}: sets do not cover every left node"
                )));
            }
            membership.push(owner);
            sorted.push(sets);
        }
        let n_graphs = sorted.len();
        let permutations = match permutations {
            Some(p) => {
                if p.len() != n_graphs {
                    return Err(Error::DimensionMismatch {
                        expected: n_graphs,
                        actual: p.len(),
                    });
                }
                for perm in &p {
                    check_bijection(perm, n_left)?;
                }
                p
            }
            None => vec![(0..n_left).collect(); n_graphs],
        };
        Ok(Self {
            n_left,
            n_right,
            rf_chains,
            seed: None,
            partitions: sorted,
            permutations,
            membership,
        })
    }

    pub fn n_left(&self) -> usize {
        self.n_left
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn n_graphs(&self) -> usize {
        self.partitions.len()
    }

    pub fn rf_chains(&self) -> usize {
        self.rf_chains
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Sorted members of right node `m` in graph `l`.
    pub fn set(&self, graph: usize, right: usize) -> &[usize] {
        &self.partitions[graph][right]
    }

    pub fn sets(&self, graph: usize) -> &[Vec<usize>] {
        &self.partitions[graph]
    }

    /// Right node of graph `l` that left node `n` connects to.
    pub fn right_node_of(&self, graph: usize, left: usize) -> usize {
        self.membership[graph][left]
    }

    /// Index into the modulation values assigned to `left` in graph `l`.
    pub fn value_index(&self, graph: usize, left: usize) -> usize {
        self.permutations[graph][left]
    }

    pub fn permutation(&self, graph: usize) -> &[usize] {
        &self.permutations[graph]
    }

    pub fn max_set_size(&self) -> usize {
        self.partitions
            .iter()
            .flat_map(|g| g.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    pub fn set_sizes(&self, graph: usize) -> Vec<usize> {
        self.partitions[graph].iter().map(Vec::len).collect()
    }

    /// Modulation value `t^{(l)}` carried by `left` in graph `l`.
    pub fn modulation_value(&self, graph: usize, left: usize, spec: &ModulationSpec) -> f64 {
        spec.values[self.permutations[graph][left]]
    }

    /// True when graph `l` has no right node holding two of `support`.
    pub fn is_nm_graph(&self, graph: usize, support: &[usize]) -> bool {
        let mut hit = vec![false; self.n_right];
        for &n in support {
            let m = self.membership[graph][n];
            if hit[m] {
                return false;
            }
            hit[m] = true;
        }
        true
    }

    fn set_permutation(&mut self, graph: usize, perm: Vec<usize>) {
        self.permutations[graph] = perm;
    }
}

fn check_bijection(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: perm.len(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidParameter("permutation is not a bijection".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Sizes of a balanced split of `n` items into `m` sets: the first `n mod m`
/// sets get one extra item.
pub fn balanced_sizes(n: usize, m: usize) -> Vec<usize> {
    let base = n / m;
    let extra = n % m;
    (0..m).map(|i| base + usize::from(i < extra)).collect()
}

/// Draws `n_graphs` independent balanced partitions from `seed`.
pub fn build_ensemble(
    n_left: usize,
    n_right: usize,
    n_graphs: usize,
    rf_chains: usize,
    seed: u64,
) -> Result<GraphEnsemble> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ens = build_ensemble_with_rng(n_left, n_right, n_graphs, rf_chains, &mut rng)?;
    ens.seed = Some(seed);
    Ok(ens)
}

/// Same as [`build_ensemble`] but drawing from a caller-owned stream.
pub fn build_ensemble_with_rng<R: Rng + ?Sized>(
    n_left: usize,
    n_right: usize,
    n_graphs: usize,
    rf_chains: usize,
    rng: &mut R,
) -> Result<GraphEnsemble> {
    if n_right == 0 || n_graphs == 0 {
        return Err(Error::InvalidParameter("M and L must be at least 1".into()));
    }
    if n_right > n_left {
        return Err(Error::InvalidParameter(format!(
            "M = {n_right} exceeds N = {n_left}"
        )));
    }
    let set_size = n_left.div_ceil(n_right);
    if set_size > rf_chains {
        return Err(Error::C1Infeasible {
            n: n_left,
            m: n_right,
            set_size,
            rf_chains,
        });
    }
    let sizes = balanced_sizes(n_left, n_right);
    let mut nodes: Vec<usize> = (0..n_left).collect();
    let partitions = (0..n_graphs)
        .map(|_| {
            nodes.shuffle(rng);
            let mut rest = nodes.as_slice();
            sizes
                .iter()
                .map(|&s| {
                    let (head, tail) = rest.split_at(s);
                    rest = tail;
                    head.to_vec()
                })
                .collect()
        })
        .collect();
    GraphEnsemble::from_partitions(n_left, rf_chains, partitions, None)
}

/// Minimum gap between modulation values inside each set, then the minimum
/// over sets. Singleton and empty sets contribute `+inf`.
pub fn min_pairwise_distance(sets: &[Vec<usize>], perm: &[usize], spec: &ModulationSpec) -> f64 {
    sets.iter()
        .map(|s| set_min_gap(s, perm, spec))
        .fold(f64::INFINITY, f64::min)
}

fn set_min_gap(set: &[usize], perm: &[usize], spec: &ModulationSpec) -> f64 {
    let mut v: Vec<f64> = set.iter().map(|&i| spec.values[perm[i]]).collect();
    v.sort_by(f64::total_cmp);
    v.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Lexicographic objective for local search: larger min gap first, then
/// fewer sets sitting at that gap.
fn objective(sets: &[Vec<usize>], perm: &[usize], spec: &ModulationSpec) -> (f64, usize) {
    let gaps: Vec<f64> = sets.iter().map(|s| set_min_gap(s, perm, spec)).collect();
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let ties = gaps.iter().filter(|&&g| g == min).count();
    (min, ties)
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// How permutations are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationSearch {
    /// Exhaustive for `N <= 8`, heuristic otherwise.
    Auto,
    Exhaustive,
    Heuristic,
}

/// Largest `N` for which exhaustive permutation search is allowed.
pub const EXHAUSTIVE_LIMIT: usize = 8;

/// Assigns modulation values per graph to maximize the smallest in-set gap.
///
/// `search_budget` caps the number of swap evaluations spent by the local
/// search; it only runs when the stride assignment misses the pigeonhole
/// bound (which cannot happen for balanced partitions).
pub fn design_permutations<R: Rng + ?Sized>(
    ens: &GraphEnsemble,
    spec: &ModulationSpec,
    search: PermutationSearch,
    search_budget: usize,
    rng: &mut R,
) -> Result<GraphEnsemble> {
    if spec.len() != ens.n_left() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_left(),
            actual: spec.len(),
        });
    }
    let exhaustive = match search {
        PermutationSearch::Exhaustive => {
            if ens.n_left() > EXHAUSTIVE_LIMIT {
                return Err(Error::InvalidParameter(format!(
                    "exhaustive permutation search limited to N <= {EXHAUSTIVE_LIMIT}"
                )));
            }
            true
        }
        PermutationSearch::Auto => ens.n_left() <= EXHAUSTIVE_LIMIT,
        PermutationSearch::Heuristic => false,
    };
    let mut out = ens.clone();
    for l in 0..ens.n_graphs() {
        let sets = ens.sets(l);
        if sets.iter().all(|s| s.len() < 2) {
            continue;
        }
        let perm = if exhaustive {
            exhaustive_assignment(sets, spec)
        } else {
            heuristic_assignment(sets, spec, search_budget, rng)
        };
        out.set_permutation(l, perm);
    }
    Ok(out)
}

fn exhaustive_assignment(sets: &[Vec<usize>], spec: &ModulationSpec) -> Vec<usize> {
    let n = spec.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_obj = objective(sets, &perm, spec);
    // Heap's algorithm; identity is evaluated first so ties keep it.
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let obj = objective(sets, &perm, spec);
            if better(obj, best_obj) {
                best_obj = obj;
                best.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Round-robin assignment of sorted modulation values over the sets, larger
/// sets first in each round.
pub fn stride_assignment(sets: &[Vec<usize>], spec: &ModulationSpec) -> Vec<usize> {
    let n = spec.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| spec.values[a].total_cmp(&spec.values[b]));
    let mut set_order: Vec<usize> = (0..sets.len()).collect();
    set_order.sort_by_key(|&m| std::cmp::Reverse(sets[m].len()));

    let mut perm = vec![0usize; n];
    let mut filled = vec![0usize; sets.len()];
    let mut values = order.into_iter();
    'rounds: loop {
        let mut progressed = false;
        for &m in &set_order {
            if filled[m] < sets[m].len() {
                let Some(v) = values.next() else { break 'rounds };
                perm[sets[m][filled[m]]] = v;
                filled[m] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    perm
}

/// Pigeonhole upper bound on the achievable min gap: any `M + 1` consecutive
/// sorted values put two in the same set.
pub fn min_gap_upper_bound(n_sets: usize, spec: &ModulationSpec) -> f64 {
    let mut v = spec.values.clone();
    v.sort_by(f64::total_cmp);
    if v.len() <= n_sets {
        return f64::INFINITY;
    }
    v.windows(n_sets + 1)
        .map(|w| w[n_sets] - w[0])
        .fold(f64::INFINITY, f64::min)
}

fn heuristic_assignment<R: Rng + ?Sized>(
    sets: &[Vec<usize>],
    spec: &ModulationSpec,
    budget: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = spec.len();
    let identity: Vec<usize> = (0..n).collect();
    let stride = stride_assignment(sets, spec);
    let (mut best, mut best_obj) = {
        let oi = objective(sets, &identity, spec);
        let os = objective(sets, &stride, spec);
        if better(oi, os) {
            (identity, oi)
        } else {
            (stride, os)
        }
    };
    let bound = min_gap_upper_bound(sets.len(), spec);
    if best_obj.0 >= bound || budget == 0 {
        return best;
    }

    // random-restart pairwise-swap hill climbing
    let mut spent = 0usize;
    let mut start = best.clone();
    while spent < budget {
        let mut cur = start.clone();
        let mut cur_obj = objective(sets, &cur, spec);
        let mut improved = true;
        while improved && spent < budget {
            improved = false;
            for _ in 0..n.min(budget - spent) {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                spent += 1;
                if a == b {
                    continue;
                }
                cur.swap(a, b);
                let obj = objective(sets, &cur, spec);
                if better(obj, cur_obj) {
                    cur_obj = obj;
                    improved = true;
                } else {
                    cur.swap(a, b);
                }
            }
        }
        if better(cur_obj, best_obj) {
            best_obj = cur_obj;
            best = cur;
        }
        if best_obj.0 >= bound {
            break;
        }
        start = (0..n).collect();
        start.shuffle(rng);
    }
    best
}

/// Stacked measurement matrix with sparse rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMatrix {
    n_cols: usize,
    n_right: usize,
    n_graphs: usize,
    rows: Vec<Vec<(usize, f64)>>,
    gains: Vec<f64>,
}

impl MeasurementMatrix {
    /// Builds a matrix from raw rows, grouped in `(ones, modulated)` pairs.
    pub fn from_rows(
        n_cols: usize,
        n_right: usize,
        n_graphs: usize,
        rows: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if rows.len() != 2 * n_right * n_graphs {
            return Err(Error::DimensionMismatch {
                expected: 2 * n_right * n_graphs,
                actual: rows.len(),
            });
        }
        if rows.iter().flatten().any(|&(c, _)| c >= n_cols) {
            return Err(Error::InvalidParameter("row entry outside column range".into()));
        }
        let gains = vec![1.0; rows.len()];
        Ok(Self {
            n_cols,
            n_right,
            n_graphs,
            rows,
            gains,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn n_right(&self) -> usize {
        self.n_right
    }

    pub fn n_graphs(&self) -> usize {
        self.n_graphs
    }

    /// Nonzero `(column, value)` entries of row `t`, before gain.
    pub fn row(&self, t: usize) -> &[(usize, f64)] {
        &self.rows[t]
    }

    pub fn row_gain(&self, t: usize) -> f64 {
        self.gains[t]
    }

    /// Row indices of right node `m` in graph `l`.
    pub fn pair_rows(&self, graph: usize, right: usize) -> (usize, usize) {
        let p = graph * self.n_right + right;
        (2 * p, 2 * p + 1)
    }

    /// Copy whose rows are scaled to unit Euclidean norm.
    pub fn unit_norm(&self) -> Self {
        let gains = self
            .rows
            .iter()
            .map(|r| {
                let nrm = r.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
                if nrm > 0.0 {
                    1.0 / nrm
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            gains,
            ..self.clone()
        }
    }

    /// Dense view including gains, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .zip(&self.gains)
            .map(|(r, g)| {
                let mut d = vec![0.0; self.n_cols];
                for &(c, v) in r {
                    d[c] = v * g;
                }
                d
            })
            .collect()
    }
}

/// Stacks `H_l (Khatri-Rao) T_l` for every graph.
pub fn assemble_matrix(ens: &GraphEnsemble, spec: &ModulationSpec) -> Result<MeasurementMatrix> {
    if spec.len() != ens.n_left() {
        return Err(Error::DimensionMismatch {
            expected: ens.n_left(),
            actual: spec.len(),
        });
    }
    let mut rows = Vec::with_capacity(2 * ens.n_right() * ens.n_graphs());
    for l in 0..ens.n_graphs() {
        for set in ens.sets(l) {
            rows.push(set.iter().map(|&i| (i, 1.0)).collect());
            rows.push(
                set.iter()
                    .map(|&i| (i, ens.modulation_value(l, i, spec)))
                    .collect(),
            );
        }
    }
    let a = MeasurementMatrix::from_rows(ens.n_left(), ens.n_right(), ens.n_graphs(), rows)?;
    let report = c1_check(&a, ens.rf_chains());
    if !report.ok {
        return Err(Error::C1Violation {
            row: report.worst_row,
            nonzeros: report.max_support,
            limit: ens.rf_chains(),
        });
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct C1Report {
    pub ok: bool,
    pub max_support: usize,
    /// First row attaining `max_support`.
    pub worst_row: usize,
}

/// Checks that every row has at most `rf_chains` nonzeros.
pub fn c1_check(a: &MeasurementMatrix, rf_chains: usize) -> C1Report {
    let mut max_support = 0;
    let mut worst_row = 0;
    for (t, r) in a.rows.iter().enumerate() {
        let nnz = r.iter().filter(|(_, v)| *v != 0.0).count();
        if nnz > max_support {
            max_support = nnz;
            worst_row = t;
        }
    }
    C1Report {
        ok: max_support <= rf_chains,
        max_support,
        worst_row,
    }
}

/// Everything needed to replay an experiment's encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayFile {
    pub ensemble: GraphEnsemble,
    pub modulation: ModulationSpec,
}

impl ReplayFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ReplayFile =
            serde_json::from_str(s).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if file.modulation.len() != file.ensemble.n_left() {
            return Err(Error::DimensionMismatch {
                expected: file.ensemble.n_left(),
                actual: file.modulation.len(),
            });
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn contiguous(n: usize, m: usize) -> Vec<Vec<usize>> {
        let r = n / m;
        (0..m).map(|j| (j * r..(j + 1) * r).collect()).collect()
    }

    #[test]
    fn reference_configuration_has_sets_of_eight() {
        let ens = build_ensemble(128, 16, 3, 8, 7).unwrap();
        for l in 0..3 {
            assert!(ens.set_sizes(l).iter().all(|&s| s == 8));
        }
        let a = assemble_matrix(&ens, &ModulationSpec::linear(128)).unwrap();
        let rep = c1_check(&a, 8);
        assert!(rep.ok);
        assert_eq!(rep.max_support, 8);
    }

    #[test]
    fn remainder_spread_over_sets() {
        let ens = build_ensemble(10, 4, 1, 3, 0).unwrap();
        let mut sizes = ens.set_sizes(0);
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }

    #[test]
    fn singleton_sets_make_every_graph_nm() {
        let ens = build_ensemble(8, 8, 2, 1, 0).unwrap();
        assert!(ens.is_nm_graph(0, &[0, 1, 2, 3, 4, 5, 6, 7]));
        assert!(ens.is_nm_graph(1, &[2, 5]));
    }

    #[test]
    fn c1_infeasible_rejected() {
        assert_eq!(
            build_ensemble(128, 8, 1, 8, 0).unwrap_err(),
            Error::C1Infeasible {
                n: 128,
                m: 8,
                set_size: 16,
                rf_chains: 8
            }
        );
    }

    #[test]
    fn modulation_values() {
        let lin = ModulationSpec::linear(4);
        assert_eq!(lin.values, vec![0.25, 0.5, 0.75, 1.0]);
        let cos = ModulationSpec::cosine_default(16);
        for w in cos.values.windows(2) {
            assert!(w[0] > w[1]);
        }
        assert!(cos.values.iter().all(|&t| (0.0..2.0).contains(&t)));
        assert!(ModulationSpec::cosine(16, 0.2).is_err());
        assert!(ModulationSpec::cosine(16, 0.0).is_err());
    }

    #[test]
    fn hand_built_matrix() {
        let ens = GraphEnsemble::from_partitions(4, 2, vec![vec![vec![0, 1], vec![2, 3]]], None)
            .unwrap();
        let a = assemble_matrix(&ens, &ModulationSpec::linear(4)).unwrap();
        assert_eq!(
            a.to_dense(),
            vec![
                vec![1.0, 1.0, 0.0, 0.0],
                vec![0.25, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 1.0],
                vec![0.0, 0.0, 0.75, 1.0],
            ]
        );
    }

    #[test]
    fn row_and_column_counts() {
        for (m, l) in [(2, 1), (4, 3), (8, 2), (16, 4)] {
            let ens = build_ensemble(32, m, l, 16, 11).unwrap();
            let a = assemble_matrix(&ens, &ModulationSpec::linear(32)).unwrap();
            assert_eq!(a.n_rows(), 2 * m * l);
            let dense = a.to_dense();
            for col in 0..32 {
                let nnz = dense.iter().filter(|r| r[col] != 0.0).count();
                assert_eq!(nnz, 2 * l);
            }
        }
    }

    #[test]
    fn c1_check_reports_offending_row() {
        let rows = vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0), (2, 1.0)]];
        let a = MeasurementMatrix::from_rows(4, 1, 1, rows).unwrap();
        let rep = c1_check(&a, 2);
        assert!(!rep.ok);
        assert_eq!(rep.worst_row, 1);
        assert_eq!(rep.max_support, 3);
    }

    #[test]
    fn unit_norm_rows() {
        let ens = build_ensemble(16, 4, 2, 4, 1).unwrap();
        let a = assemble_matrix(&ens, &ModulationSpec::linear(16)).unwrap().unit_norm();
        for r in a.to_dense() {
            let n: f64 = r.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    /// Brute-force max-min over all value assignments.
    fn brute_force_best(sets: &[Vec<usize>], spec: &ModulationSpec) -> f64 {
        fn rec(
            k: usize,
            used: &mut Vec<bool>,
            perm: &mut Vec<usize>,
            sets: &[Vec<usize>],
            spec: &ModulationSpec,
            best: &mut f64,
        ) {
            let n = perm.len();
            if k == n {
                let mut worst = f64::INFINITY;
                for s in sets {
                    for i in 0..s.len() {
                        for j in i + 1..s.len() {
                            let d = (spec.values[perm[s[i]]] - spec.values[perm[s[j]]]).abs();
                            worst = worst.min(d);
                        }
                    }
                }
                *best = best.max(worst);
                return;
            }
            for v in 0..n {
                if !used[v] {
                    used[v] = true;
                    perm[k] = v;
                    rec(k + 1, used, perm, sets, spec, best);
                    used[v] = false;
                }
            }
        }
        let n = spec.len();
        let mut best = f64::NEG_INFINITY;
        rec(0, &mut vec![false; n], &mut vec![0; n], sets, spec, &mut best);
        best
    }

    #[test]
    fn stride_is_optimal_on_six_nodes() {
        let sets = contiguous(6, 3);
        let spec = ModulationSpec::linear(6);
        let stride = stride_assignment(&sets, &spec);
        let got: Vec<Vec<usize>> = sets
            .iter()
            .map(|s| {
                let mut v: Vec<usize> = s.iter().map(|&i| stride[i] + 1).collect();
                v.sort_unstable();
                v
            })
            .collect();
        assert_eq!(got, vec![vec![1, 4], vec![2, 5], vec![3, 6]]);
        let d = min_pairwise_distance(&sets, &stride, &spec);
        assert!((d - 0.5).abs() < 1e-15);
        assert!((brute_force_best(&sets, &spec) - 0.5).abs() < 1e-15);

        let ens = GraphEnsemble::from_partitions(6, 2, vec![sets.clone()], None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let designed =
            design_permutations(&ens, &spec, PermutationSearch::Exhaustive, 0, &mut rng).unwrap();
        let d = min_pairwise_distance(designed.sets(0), designed.permutation(0), &spec);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singleton_sets_keep_identity() {
        let ens = build_ensemble(8, 8, 2, 1, 3).unwrap();
        let spec = ModulationSpec::linear(8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = design_permutations(&ens, &spec, PermutationSearch::Auto, 100, &mut rng).unwrap();
        assert_eq!(out, ens);
        assert_eq!(min_pairwise_distance(out.sets(0), out.permutation(0), &spec), f64::INFINITY);
    }

    #[test]
    fn exhaustive_matches_or_beats_heuristic() {
        for seed in 0..5 {
            let ens = build_ensemble(8, 3, 2, 3, seed).unwrap();
            for spec in [ModulationSpec::linear(8), ModulationSpec::cosine_default(8)] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ex = design_permutations(&ens, &spec, PermutationSearch::Exhaustive, 0, &mut rng)
                    .unwrap();
                let he =
                    design_permutations(&ens, &spec, PermutationSearch::Heuristic, 500, &mut rng)
                        .unwrap();
                for l in 0..2 {
                    let de = min_pairwise_distance(ex.sets(l), ex.permutation(l), &spec);
                    let dh = min_pairwise_distance(he.sets(l), he.permutation(l), &spec);
                    assert!(de >= dh - 1e-15);
                    assert!((de - brute_force_best(ens.sets(l), &spec)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn replay_round_trip() {
        let ens = build_ensemble(20, 5, 2, 4, 9).unwrap();
        let spec = ModulationSpec::linear(20);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ens = design_permutations(&ens, &spec, PermutationSearch::Auto, 10, &mut rng).unwrap();
        let file = ReplayFile {
            ensemble: ens,
            modulation: spec,
        };
        let back = ReplayFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
        assert!(ReplayFile::from_json("{\"ensemble\": 3}").is_err());
    }

    #[test]
    fn overlapping_partition_rejected() {
        let bad = vec![vec![vec![0, 1], vec![1, 2]]];
        assert!(GraphEnsemble::from_partitions(3, 2, bad, None).is_err());
        let uncovered = vec![vec![vec![0], vec![1]]];
        assert!(GraphEnsemble::from_partitions(3, 2, uncovered, None).is_err());
    }

    proptest! {
        #[test]
        fn partitions_are_balanced_covers(n in 1usize..80, m_frac in 0.05f64..1.0, l in 1usize..4, seed: u64) {
            let m = ((n as f64 * m_frac).ceil() as usize).clamp(1, n);
            let r = n.div_ceil(m);
            let ens = build_ensemble(n, m, l, r, seed).unwrap();
            for g in 0..l {
                let mut seen = vec![0u8; n];
                for s in ens.sets(g) {
                    prop_assert!(s.len() == n / m || s.len() == r);
                    for &i in s { seen[i] += 1; }
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }
        }

        #[test]
        fn design_never_worse_than_identity(n in 4usize..40, m in 2usize..6, seed: u64, cosine: bool) {
            let m = m.min(n);
            let ens = build_ensemble(n, m, 2, n, seed).unwrap();
            let spec = if cosine { ModulationSpec::cosine_default(n) } else { ModulationSpec::linear(n) };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = design_permutations(&ens, &spec, PermutationSearch::Auto, 200, &mut rng).unwrap();
            for l in 0..2 {
                let before = min_pairwise_distance(ens.sets(l), ens.permutation(l), &spec);
                let after = min_pairwise_distance(out.sets(l), out.permutation(l), &spec);
                prop_assert!(after >= before);
                prop_assert!(after <= min_gap_upper_bound(m, &spec) + 1e-15);
            }
            prop_assert_eq!(assemble_matrix(&out, &spec).unwrap(), assemble_matrix(&out, &spec).unwrap());
        }
    }
}
