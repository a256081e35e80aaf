//! Closed-form NM-graph probability, success probability and sample
//! complexity, with an exhaustive enumeration oracle for small `N`.
//!
//! Probabilities are computed as exact big rationals and only converted to
//! `f64` at the edge.

use std::fmt::Write as _;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::balanced_sizes;
use crate::error::{Error, Result};
use crate::harness::{run_experiment, ExperimentConfig, Mode, RunOptions};

/// Largest `N` the enumeration oracle accepts.
pub const ORACLE_MAX_N: usize = 14;

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `eta(K)`: sum over K-subsets of sets of the product of their sizes, i.e.
/// the elementary symmetric polynomial `e_K(r_1, ..., r_M)`.
pub fn elementary_symmetric(sizes: &[usize], k: usize) -> BigUint {
    let mut e = vec![BigUint::zero(); k + 1];
    e[0] = BigUint::one();
    for &r in sizes {
        let r = BigUint::from(r);
        for j in (1..=k).rev() {
            let add = &e[j - 1] * &r;
            e[j] += add;
        }
    }
    e.swap_remove(k)
}

fn ratio(num: BigUint, den: BigUint) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Probability that a graph with set sizes `sizes` is an NM-graph for a
/// uniformly random K-support: `eta(K) / C(N, K)`.
pub fn nm_prob_for_sizes(sizes: &[usize], k: usize) -> Result<BigRational> {
    let n: usize = sizes.iter().sum();
    if k > n {
        return Err(Error::InvalidParameter(format!("K = {k} exceeds N = {n}")));
    }
    Ok(ratio(elementary_symmetric(sizes, k), binomial(n, k)))
}

/// Equal-set value `r^K C(M, K) / C(N, K)` with `r = N / M` (possibly
/// fractional); upper bound for every partition with `M` sets.
pub fn equal_set_bound(n: usize, m: usize, k: usize) -> Result<BigRational> {
    if m < k {
        return Err(Error::MLessThanK { m, k });
    }
    let r = BigRational::new(BigInt::from(n), BigInt::from(m));
    let mut rk = BigRational::one();
    for _ in 0..k {
        rk *= &r;
    }
    Ok(rk * ratio(binomial(m, k), binomial(n, k)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmProbability {
    pub exact: BigRational,
    pub value: f64,
    /// `false` when `M` does not divide `N` and the balanced-partition
    /// `eta(K)` form was used.
    pub equal_sets: bool,
}

/// Probability that one balanced random graph is an NM-graph.
pub fn nm_graph_prob(n: usize, m: usize, k: usize) -> Result<NmProbability> {
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!("need 1 <= M <= N, got M = {m}")));
    }
    if m < k {
        return Err(Error::MLessThanK { m, k });
    }
    let equal_sets = n % m == 0;
    let exact = if equal_sets {
        equal_set_bound(n, m, k)?
    } else {
        nm_prob_for_sizes(&balanced_sizes(n, m), k)?
    };
    Ok(NmProbability {
        value: rational_to_f64(&exact),
        exact,
        equal_sets,
    })
}

/// `1 - (1 - lambda)^L`.
pub fn success_prob(lambda: f64, n_graphs: u32) -> f64 {
    1.0 - (1.0 - lambda).powi(n_graphs as i32)
}

pub fn success_prob_exact(lambda: &BigRational, n_graphs: u32) -> BigRational {
    let miss = BigRational::one() - lambda;
    let mut acc = BigRational::one();
    for _ in 0..n_graphs {
        acc *= &miss;
    }
    BigRational::one() - acc
}

/// Formats `100 p` rounded half-up to `decimals` places, e.g. `94.4882`.
pub fn percent_rounded(p: &BigRational, decimals: u32) -> String {
    let scale = BigInt::from(10u32).pow(decimals + 2);
    let scaled = p * BigRational::from_integer(scale);
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    let units = (scaled + half).floor().to_integer();
    let pow = BigInt::from(10u32).pow(decimals);
    let whole = &units / &pow;
    let frac = (&units % &pow).to_string();
    if decimals == 0 {
        return whole.to_string();
    }
    format!("{whole}.{frac:0>width$}", width = decimals as usize)
}

/// Smallest `L` with `1 - (1 - lambda)^L >= p0`.
pub fn required_graphs(lambda: f64, p0: f64) -> Result<u32> {
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidParameter(format!("p0 must lie in (0, 1), got {p0}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if lambda >= 1.0 {
        return Ok(1);
    }
    if lambda <= 0.0 {
        return Err(Error::InfeasibleTarget { lambda });
    }
    let est = ((1.0 - p0).ln() / (1.0 - lambda).ln()).ceil().max(1.0);
    if !est.is_finite() || est > u32::MAX as f64 {
        return Err(Error::InfeasibleTarget { lambda });
    }
    // guard against rounding right at an integer boundary
    let mut l = est as u32;
    while l > 1 && success_prob(lambda, l - 1) >= p0 {
        l -= 1;
    }
    while success_prob(lambda, l) < p0 {
        l += 1;
    }
    Ok(l)
}

/// Base of the logarithms in the sample-complexity constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    Natural,
    #[default]
    Base2,
}

impl LogBase {
    pub fn log(&self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Base2 => x.log2(),
        }
    }
}

/// `f(K, delta)` evaluated at `delta = K`: `(1 - (1 - 1/K) / K)^K`.
pub fn f_at_delta_k(k: usize) -> f64 {
    let k = k as f64;
    let step = (1.0 - 1.0 / k) / k;
    (k * (-step).ln_1p()).exp()
}

/// Limit of `h(K, K)` as `K -> inf`: `1 / log((1 - e^{-1})^{-1})`.
pub fn h_limit(base: LogBase) -> f64 {
    1.0 / base.log(1.0 / (1.0 - (-1.0f64).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexity {
    pub f: f64,
    pub h: f64,
    /// `c = 2 log((1 - p0)^{-1})`.
    pub c: f64,
    /// `c K^2 h(K, K)`.
    pub t_bound: f64,
}

/// Measurement count sufficient for success probability `p0` with `M = K^2`.
pub fn sample_complexity_bound(k: usize, p0: f64, base: LogBase) -> Result<SampleComplexity> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::InvalidParameter(format!("p0 must lie in (0, 1), got {p0}")));
    }
    let f = f_at_delta_k(k);
    let h = 1.0 / base.log(1.0 / (1.0 - f));
    let c = 2.0 * base.log(1.0 / (1.0 - p0));
    let kf = k as f64;
    Ok(SampleComplexity {
        f,
        h,
        c,
        t_bound: c * kf * kf * h,
    })
}

/// Exact NM probability of an explicit partition, by enumerating every
/// K-subset of the `N` left nodes.
pub fn oracle_nm_prob(sets: &[Vec<usize>], k: usize) -> Result<BigRational> {
    let n: usize = sets.iter().map(Vec::len).sum();
    if n > ORACLE_MAX_N {
        return Err(Error::OracleTooLarge {
            n,
            limit: ORACLE_MAX_N,
        });
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("K = {k} exceeds N = {n}")));
    }
    let mut owner = vec![usize::MAX; n];
    for (m, s) in sets.iter().enumerate() {
        for &i in s {
            if i >= n || owner[i] != usize::MAX {
                return Err(Error::InvalidParameter("sets must partition 0..N".into()));
            }
            owner[i] = m;
        }
    }
    let mut good = 0u64;
    let mut total = 0u64;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        total += 1;
        let mut hit = vec![false; sets.len()];
        if pick.iter().all(|&i| !std::mem::replace(&mut hit[owner[i]], true)) {
            good += 1;
        }
        // next combination in lexicographic order
        let Some(pos) = (0..k).rev().find(|&j| pick[j] < n - k + j) else {
            break;
        };
        pick[pos] += 1;
        for j in pos + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
    Ok(BigRational::new(BigInt::from(good), BigInt::from(total)))
}

/// Outcome of [`verify_against_oracle`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    /// `(N, M, K)` equal-set cases compared.
    pub equal_cases: usize,
    pub random_partitions: usize,
    /// Human-readable description of every disagreement.
    pub failures: Vec<String>,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn random_partition<R: Rng + ?Sized>(n: usize, m: usize, balanced: bool, rng: &mut R) -> Vec<Vec<usize>> {
    let sizes = if balanced {
        let mut s = balanced_sizes(n, m);
        s.shuffle(rng);
        s
    } else {
        // random composition of n into m positive parts
        let mut cuts: Vec<usize> = index::sample(rng, n - 1, m - 1).into_iter().map(|c| c + 1).collect();
        cuts.sort_unstable();
        cuts.push(n);
        let mut prev = 0;
        cuts.iter()
            .map(|&c| {
                let size = c - prev;
                prev = c;
                size
            })
            .collect()
    };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for size in sizes {
        let mut set = perm[start..start + size].to_vec();
        set.sort_unstable();
        out.push(set);
        start += size;
    }
    out
}

/// Compares the closed forms with exhaustive enumeration.
///
/// Every `(N, M, K)` with `N <= max_n`, `M | N`, `1 <= K <= M` is checked for
/// exact equality. Then `random_partitions` partitions with unequal sizes
/// (half balanced, half arbitrary) are checked against the equal-set bound,
/// which must hold strictly for `K >= 2`.
pub fn verify_against_oracle(max_n: usize, random_partitions: usize, seed: u64) -> Result<OracleCheck> {
    let mut check = OracleCheck::default();
    for n in 1..=max_n {
        for m in (1..=n).filter(|m| n % m == 0) {
            let r = n / m;
            let sets: Vec<Vec<usize>> = (0..m).map(|j| (j * r..(j + 1) * r).collect()).collect();
            for k in 1..=m {
                let formula = nm_graph_prob(n, m, k)?.exact;
                let oracle = oracle_nm_prob(&sets, k)?;
                if formula != oracle {
                    check.failures.push(format!("N={n} M={m} K={k}: formula {formula} != oracle {oracle}"));
                }
                check.equal_cases += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while check.random_partitions < random_partitions {
        let n = rng.gen_range(4..=max_n.max(4));
        let m = rng.gen_range(2..n);
        let balanced = check.random_partitions % 2 == 0;
        let sets = random_partition(n, m, balanced, &mut rng);
        let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
        if sizes.iter().all(|&s| s == sizes[0]) {
            continue;
        }
        let k = rng.gen_range(2..=m);
        let oracle = oracle_nm_prob(&sets, k)?;
        let eta = nm_prob_for_sizes(&sizes, k)?;
        let bound = equal_set_bound(n, m, k)?;
        if oracle != eta {
            check.failures.push(format!("sizes {sizes:?} K={k}: eta form {eta} != oracle {oracle}"));
        }
        if oracle >= bound {
            check.failures.push(format!("sizes {sizes:?} K={k}: oracle {oracle} not below bound {bound}"));
        }
        check.random_partitions += 1;
    }
    Ok(check)
}

/// Fraction of noiseless trials recovering `|x|` to squared relative error
/// below `1e-8`.
pub fn empirical_success_rate(params: &ExperimentConfig, trials: usize, seed: u64) -> Result<f64> {
    let cfg = ExperimentConfig {
        trials,
        seed,
        mode: Mode::Noiseless,
        snr_db: None,
        noise_variance: None,
        ..params.clone()
    };
    Ok(run_experiment(&cfg, RunOptions::default())?.row.success_rate)
}

/// One line of calculator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub n: usize,
    pub m: usize,
    pub l: u32,
    pub k: usize,
    pub lambda: f64,
    /// Exact `lambda` as `num/den`.
    pub lambda_exact: String,
    pub p: f64,
    pub p_percent: String,
    pub l_required: Option<u32>,
    pub t_bound: f64,
}

pub const THEORY_CSV_HEADER: &str = "n,m,l,k,lambda,p,l_required,t_bound";

impl TheoryRow {
    pub fn compute(n: usize, m: usize, l: u32, k: usize, p0: f64, base: LogBase) -> Result<Self> {
        let nm = nm_graph_prob(n, m, k)?;
        let p = success_prob_exact(&nm.exact, l);
        let l_required = match required_graphs(nm.value, p0) {
            Ok(v) => Some(v),
            Err(Error::InfeasibleTarget { .. }) => None,
            Err(e) => return Err(e),
        };
        let t_bound = if k == 0 {
            0.0
        } else {
            sample_complexity_bound(k, p0, base)?.t_bound
        };
        Ok(Self {
            n,
            m,
            l,
            k,
            lambda: nm.value,
            lambda_exact: nm.exact.to_string(),
            p: rational_to_f64(&p),
            p_percent: percent_rounded(&p, 4),
            l_required,
            t_bound,
        })
    }

    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.n,
            self.m,
            self.l,
            self.k,
            self.lambda,
            self.p,
            self.l_required.map(|v| v.to_string()).unwrap_or_default(),
            self.t_bound
        );
        s
    }
}
