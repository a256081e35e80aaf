//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use sbgcode_core::beamspace::{
    measure, synthesize_channel, ChannelConfig, NoiseConvention, NoiseModel, PathSet, SparseSignal,
};
use sbgcode_core::decoder::decode;
use sbgcode_core::encoder::{assemble_matrix, build_ensemble};
use sbgcode_core::harness::{
    beamforming_gain, point_config, run_experiment, run_trial_with, trial_rng, ExperimentConfig,
    Mode, PermutationMode, RunOptions, SweepAxis,
};
use sbgcode_core::robust::{default_false_alarm, detect_nulltons, CalibrationMode, DetectorConfig};
use sbgcode_core::theory::{
    f_at_delta_k, h_limit, sample_complexity_bound, verify_against_oracle, LogBase,
};

const BIN: &str = env!("CARGO_BIN_EXE_sbgcode");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn sbgcode(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("run sbgcode")
}

fn opts() -> RunOptions {
    RunOptions::default()
}

fn theory_exactness() -> Outcome {
    let cases = [(16, 1, "94.4882"), (8, 2, "98.6050"), (4, 4, "99.6450"), (2, 8, "99.6333")];
    let mut pass = true;
    let mut seen = Vec::new();
    let mut slowest = Duration::ZERO;
    for (m, l, want) in cases {
        let start = Instant::now();
        let out = sbgcode(&["theory", "--n", "128", "--m", &m.to_string(), "--k", "2", "--l", &l.to_string()]);
        slowest = slowest.max(start.elapsed());
        let stdout = String::from_utf8_lossy(&out.stdout);
        let got = stdout
            .lines()
            .find_map(|line| line.strip_prefix("p = "))
            .and_then(|rest| rest.split('(').nth(1))
            .map(|s| s.trim_end_matches(')').trim_end_matches('%').to_string())
            .unwrap_or_default();
        pass &= out.status.success() && got == want;
        seen.push(format!("M={m},L={l}: {got}%"));
    }
    pass &= slowest < Duration::from_secs(1);
    outcome(pass, format!("{} (slowest run {:?})", seen.join(", "), slowest))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let check = verify_against_oracle(12, 200, 2024).expect("oracle check");
    let elapsed = start.elapsed();
    outcome(
        check.passed() && elapsed < Duration::from_secs(60),
        format!(
            "{} equal-set cases exact, {} unequal partitions strictly below bound, {} mismatches, {:?}",
            check.equal_cases,
            check.random_partitions,
            check.failures.len(),
            elapsed
        ),
    )
}

fn monte_carlo_vs_theory() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for k in 1..=3 {
        for l in 1..=4 {
            let cfg = ExperimentConfig {
                n: 128,
                rf_chains: Some(8),
                m: 16,
                l,
                k,
                trials: 10_000,
                seed: 1000 + 10 * k as u64 + l as u64,
                ..Default::default()
            };
            let row = run_experiment(&cfg, opts()).expect("experiment").row;
            let theory = row.theory_p.expect("theory_p");
            let dev = (row.success_rate - theory).abs();
            worst = worst.max(dev);
            pass &= dev <= 0.012;
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    outcome(pass, format!("12 points, max |empirical - theory| = {worst:.4} (limit 0.012), {elapsed:?}"))
}

fn n_independence() -> Outcome {
    let mut rates = Vec::new();
    for n in [64, 128, 256] {
        let cfg = ExperimentConfig {
            n,
            rf_chains: None,
            m: 16,
            l: 2,
            k: 2,
            trials: 10_000,
            seed: 4,
            ..Default::default()
        };
        rates.push(run_experiment(&cfg, opts()).expect("experiment").row.success_rate);
    }
    let spread = rates.iter().cloned().fold(f64::MIN, f64::max) - rates.iter().cloned().fold(f64::MAX, f64::min);
    outcome(spread < 0.02, format!("success rates {rates:?} at N = 64, 128, 256; spread {spread:.4} (limit 0.02)"))
}

fn m_tradeoff() -> Outcome {
    let base = ExperimentConfig {
        n: 128,
        rf_chains: None,
        m: 16,
        l: 2,
        k: 2,
        trials: 10_000,
        seed: 5,
        ..Default::default()
    };
    let ms = [2.0, 4.0, 8.0, 16.0];
    let mut emp = Vec::new();
    let mut theory = Vec::new();
    for m in ms {
        let cfg = point_config(&base, SweepAxis::M, m).expect("point");
        theory.push(cfg.theory_p().expect("theory"));
        emp.push(run_experiment(&cfg, opts()).expect("experiment").row.success_rate);
    }
    let moderate = emp[1].max(emp[2]);
    let theory_peak = (0..4).max_by(|&a, &b| theory[a].total_cmp(&theory[b])).unwrap();
    let pass = moderate >= emp[0] && moderate > emp[3] && theory_peak == 1;
    outcome(
        pass,
        format!(
            "empirical M=2,4,8,16: {emp:?}; best moderate {moderate} >= M=2 and > M=16; theory peaks at M={}",
            ms[theory_peak]
        ),
    )
}

fn false_alarm_rate(convention: NoiseConvention) -> f64 {
    let n = 128;
    let ens = build_ensemble(n, 16, 25, 8, 66).expect("ensemble");
    let spec = sbgcode_core::encoder::ModulationSpec::linear(n);
    let a = assemble_matrix(&ens, &spec).expect("matrix").unit_norm();
    let variance = 0.37;
    let noise = NoiseModel::new(variance, convention);
    let detector = DetectorConfig::new(default_false_alarm(), CalibrationMode::matching(convention)).unwrap();
    let eps = detector.threshold(variance);
    let x = SparseSignal::zeros(n);
    let mut rng = trial_rng(6, convention as u64);
    let (mut alarms, mut nodes) = (0usize, 0usize);
    while nodes < 100_000 {
        let batch = measure(&x, &a, &noise, &mut rng).expect("measure");
        let active = detect_nulltons(&batch.pairs, eps);
        alarms += active.iter().filter(|&&b| b).count();
        nodes += active.len();
    }
    alarms as f64 / nodes as f64
}

fn detector_calibration() -> Outcome {
    let target = default_false_alarm();
    let total = false_alarm_rate(NoiseConvention::TotalPower);
    let quad = false_alarm_rate(NoiseConvention::PerQuadrature);
    let compat = DetectorConfig::new(target, CalibrationMode::PaperCompat).unwrap();
    let three_sigma = [0.25, 1.0, 4.0, 1e-6].iter().all(|&v: &f64| compat.threshold(v) == 3.0 * v.sqrt());
    let pass = (total - target).abs() <= 0.003 && (quad - target).abs() <= 0.003 && three_sigma;
    outcome(
        pass,
        format!(
            "target {target:.5}; total-power/standard {total:.5}, per-quadrature/paper-compat {quad:.5}; paper-compat epsilon == 3 sigma: {three_sigma}"
        ),
    )
}

fn robust_properties() -> Vec<(String, Outcome)> {
    let mut out = Vec::new();
    let noiseless = ExperimentConfig {
        n: 128,
        rf_chains: Some(8),
        m: 16,
        l: 2,
        k: 2,
        permutation: Some(PermutationMode::Designed),
        seed: 7,
        ..Default::default()
    };
    for (tag, variance) in [("7a sigma^2 = 0", 0.0), ("7a sigma^2 = 1e-18", 1e-18)] {
        let robust = ExperimentConfig {
            mode: Mode::Robust,
            noise_variance: Some(variance),
            ..noiseless.clone()
        };
        let (mut identical, mut within) = (0, 0);
        for t in 0..500 {
            let a = run_trial_with(&noiseless, t, None).expect("trial");
            let b = run_trial_with(&robust, t, None).expect("trial");
            if a.estimate.values == b.estimate.values {
                identical += 1;
            }
            let diff: f64 = a.estimate.values.iter().zip(&b.estimate.values).map(|(p, q)| (p - q) * (p - q)).sum();
            let norm: f64 = a.estimate.values.iter().map(|p| p * p).sum();
            if diff <= 1e-8 * norm {
                within += 1;
            }
        }
        out.push((
            format!("{tag}: robust equals noiseless on 500 instances"),
            outcome(
                identical == 500,
                format!("bit-identical {identical}/500, within 1e-8 relative {within}/500"),
            ),
        ));
    }

    let base = ExperimentConfig {
        mode: Mode::Robust,
        trials: 2000,
        seed: 8,
        ..noiseless
    };
    let mut medians = Vec::new();
    let mut means = Vec::new();
    for snr in [0.0, 10.0, 20.0, 30.0] {
        let cfg = point_config(&base, SweepAxis::Snr, snr).expect("point");
        let row = run_experiment(&cfg, opts()).expect("experiment").row;
        medians.push(row.nmse_median);
        means.push(row.nmse);
    }
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    out.push((
        "7b median NMSE non-increasing in SNR".into(),
        outcome(monotone, format!("median NMSE at 0/10/20/30 dB: {:?}", medians.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>())),
    ));
    out.push((
        "7c NMSE(30 dB) at least 10x below NMSE(0 dB)".into(),
        outcome(
            means[3] * 10.0 <= means[0],
            format!("mean NMSE {:.3e} -> {:.3e} (ratio {:.1})", means[0], means[3], means[0] / means[3]),
        ),
    ));
    out
}

fn sample_complexity_constants() -> Outcome {
    let f = f_at_delta_k(10_000);
    let h = h_limit(LogBase::Base2);
    let at_k = sample_complexity_bound(10_000, 0.99, LogBase::Base2).unwrap().h;
    let pass = (f - (-1.0f64).exp()).abs() <= 1e-3 && (h - 1.51).abs() <= 0.01;
    outcome(pass, format!("f(1e4) = {f:.6} vs e^-1 = {:.6}; base-2 h limit {h:.4} (h at K=1e4: {at_k:.4})", (-1.0f64).exp()))
}

fn beamforming_sanity() -> Outcome {
    let cfg = ExperimentConfig {
        n: 128,
        rf_chains: Some(8),
        m: 16,
        l: 2,
        k: 1,
        seed: 9,
        ..Default::default()
    };
    let exact_n = (0..200).all(|t| {
        let r = run_trial_with(&cfg, t, None).expect("trial").record;
        r.success && r.bf_gain == 128.0
    });

    let ch = ChannelConfig::new(128, 8);
    let paths = PathSet::on_grid_indices(
        vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.5)],
        &[17, 90],
        &ch,
    )
    .unwrap();
    let (_, x) = synthesize_channel(&paths, &ch).unwrap();
    let spec = sbgcode_core::encoder::ModulationSpec::linear(128);
    let mut two_path = None;
    for seed in 0..50 {
        let ens = build_ensemble(128, 16, 1, 8, seed).unwrap();
        if !ens.is_nm_graph(0, &x.support) {
            continue;
        }
        let a = assemble_matrix(&ens, &spec).unwrap().unit_norm();
        let mut rng = trial_rng(seed, 0);
        let batch = measure(&x, &a, &NoiseModel::noiseless(), &mut rng).unwrap();
        let est = decode(&batch, &ens, &spec).unwrap().estimate;
        two_path = Some(beamforming_gain(&est, &x, &mut rng).gain);
        break;
    }
    let g2 = two_path.unwrap_or(f64::NAN);
    let pass = exact_n && (g2 - 0.8 * 128.0).abs() <= 1e-9;
    outcome(pass, format!("K=1 gain == N on 200 trials: {exact_n}; K=2 (1, 0.5) gain {g2} vs 0.8N = 102.4"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut notes = Vec::new();
    let runs: [(&str, &[&str]); 2] = [
        ("robust snr", &["--mode", "robust", "sweep", "--axis", "snr", "--values", "0,10,20,30", "--trials", "400"]),
        ("noiseless T", &["sweep", "--axis", "t", "--values", "32,64,96,128", "--trials", "2000", "--k", "3"]),
    ];
    for (name, args) in runs {
        let mut outputs = Vec::new();
        for threads in ["1", "4", "8", "8"] {
            let path = dir.path().join(format!("{}-{threads}-{}.csv", name.replace(' ', "_"), outputs.len()));
            let mut full: Vec<&str> = vec!["--seed", "31", "--threads", threads, "--out", path.to_str().unwrap()];
            full.extend_from_slice(args);
            let status = sbgcode(&full).status;
            pass &= status.success();
            outputs.push(std::fs::read(&path).unwrap_or_default());
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]) && !outputs[0].is_empty();
        pass &= same;
        notes.push(format!("{name}: {}", if same { "identical" } else { "differs" }));
    }
    outcome(pass, format!("1/4/8/8 threads -> {}", notes.join(", ")))
}

fn main() {
    let mut results: Vec<(String, Outcome)> = vec![
        ("1 theory exactness".into(), theory_exactness()),
        ("2 oracle equivalence".into(), oracle_equivalence()),
        ("3 Monte Carlo vs closed form".into(), monte_carlo_vs_theory()),
        ("4 N-independence".into(), n_independence()),
        ("5 M tradeoff".into(), m_tradeoff()),
        ("6 detector calibration".into(), detector_calibration()),
    ];
    results.extend(robust_properties());
    results.push(("8 sample-complexity constants".into(), sample_complexity_constants()));
    results.push(("9 beamforming gain".into(), beamforming_sanity()));
    results.push(("10 determinism".into(), determinism()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
