use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sbgcode_core::beamspace::NoiseConvention;
use sbgcode_core::harness::{
    self, load_config_file, scan_array_receiver, ConfigFile, ExperimentConfig, Mode,
    ModulationName, PermutationMode, RunOptions, ScanConfig, ScanPath, SweepAxis,
};
use sbgcode_core::robust::CalibrationMode;
use sbgcode_core::theory::{self, LogBase, TheoryRow, THEORY_CSV_HEADER};

#[derive(Parser, Debug)]
#[command(name = "sbgcode", version, about = "Phaseless beam alignment with sparse bipartite graph codes")]
struct Cli {
    /// Key = value (or JSON) config file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write CSV output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// NM-graph probability, success probability and measurement bounds.
    Theory(TheoryArgs),
    /// Monte Carlo run at a single operating point.
    Simulate(ExpArgs),
    /// Monte Carlo runs along one axis.
    Sweep(SweepArgs),
    /// Receive-beam scan recovering the beam-space channel matrix.
    Scan(ScanArgs),
    /// Checks the closed forms against exhaustive enumeration.
    Selftest,
}

#[derive(Args, Debug)]
struct TheoryArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    l: u32,
    /// Target success probability for `l_required` and `t_bound`.
    #[arg(long, default_value_t = 0.99)]
    p0: f64,
    /// Logarithm base for `t_bound`: `2` or `e`.
    #[arg(long, default_value = "2")]
    log_base: String,
}

#[derive(Args, Debug, Clone, Default)]
struct ExpArgs {
    #[arg(long)]
    n: Option<usize>,
    /// RF chains, or `auto` for ceil(N / M).
    #[arg(long)]
    rf_chains: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    noise_variance: Option<f64>,
    /// `total-power` or `per-quadrature`.
    #[arg(long)]
    convention: Option<String>,
    /// `standard` or `paper-compat`.
    #[arg(long)]
    calibration: Option<String>,
    #[arg(long)]
    false_alarm: Option<f64>,
    #[arg(long)]
    modulation: Option<ModulationName>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    permutation: Option<PermutationMode>,
    #[arg(long)]
    off_grid: bool,
    #[arg(long)]
    no_cfo: bool,
    /// Reuse one ensemble for every trial.
    #[arg(long)]
    fixed_ensemble: bool,
    /// Fill the `wall_ms` column.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    axis: Option<SweepAxis>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    values: Option<Vec<f64>>,
    #[command(flatten)]
    exp: ExpArgs,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Receive array size.
    #[arg(long)]
    n_r: Option<usize>,
    /// Paths as `aoa:aod` or `aoa:aod:re:im`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    paths: Option<Vec<String>>,
    #[command(flatten)]
    exp: ExpArgs,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_enum<T: std::str::FromStr>(s: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(config_err)
}

fn load_file(cli: &Cli) -> CliResult<ConfigFile> {
    match &cli.config {
        None => Ok(ConfigFile::default()),
        Some(p) => load_config_file(p).map_err(config_err),
    }
}

fn experiment(cli: &Cli, file: &ConfigFile, args: &ExpArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    file.apply(&mut cfg).map_err(config_err)?;
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = args.$f.clone() { cfg.$f = v; } )* };
    }
    over!(n, m, l, k, trials, false_alarm);
    if let Some(m) = args.modulation {
        cfg.modulation = m;
    }
    if args.omega.is_some() {
        cfg.omega = args.omega;
    }
    if args.permutation.is_some() {
        cfg.permutation = args.permutation;
    }
    if args.snr_db.is_some() {
        cfg.snr_db = args.snr_db;
    }
    if args.noise_variance.is_some() {
        cfg.noise_variance = args.noise_variance;
    }
    if let Some(c) = &args.convention {
        cfg.convention = parse_enum::<NoiseConvention>(c)?;
    }
    if let Some(c) = &args.calibration {
        cfg.calibration = Some(parse_enum::<CalibrationMode>(c)?);
    }
    match args.rf_chains.as_deref() {
        None => {}
        Some("auto") => cfg.rf_chains = None,
        Some(r) => cfg.rf_chains = Some(r.parse().map_err(|_| config_err(format!("bad --rf-chains '{r}'")))?),
    }
    if args.off_grid {
        cfg.on_grid = false;
    }
    if args.no_cfo {
        cfg.cfo = false;
    }
    if args.fixed_ensemble {
        cfg.fixed_ensemble = true;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn run_options(cli: &Cli, file: &ConfigFile, args: &ExpArgs) -> CliResult<RunOptions> {
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(config_err("--threads must be at least 1"));
    }
    Ok(RunOptions {
        threads,
        timing: args.timing,
    })
}

fn emit(cli: &Cli, text: &str) -> CliResult<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|e| runtime_err(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_theory(cli: &Cli, a: &TheoryArgs) -> CliResult<()> {
    let base = match a.log_base.as_str() {
        "2" => LogBase::Base2,
        "e" | "ln" => LogBase::Natural,
        other => return Err(config_err(format!("--log-base must be 2 or e, got '{other}'"))),
    };
    let row = TheoryRow::compute(a.n, a.m, a.l, a.k, a.p0, base).map_err(config_err)?;
    println!("N = {}, M = {}, K = {}, L = {}", row.n, row.m, row.k, row.l);
    println!("lambda = {:.6} ({})", row.lambda, row.lambda_exact);
    println!("p = {:.6} ({}%)", row.p, row.p_percent);
    match row.l_required {
        Some(l) => println!("l_required = {l} (p0 = {})", a.p0),
        None => println!("l_required = unreachable (p0 = {})", a.p0),
    }
    println!("t_bound = {:.4} (M = K^2, log base {})", row.t_bound, a.log_base);
    if let Some(p) = &cli.out {
        let csv = format!("{THEORY_CSV_HEADER}\n{}\n", row.csv_line());
        std::fs::write(p, csv).map_err(|e| runtime_err(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn cmd_simulate(cli: &Cli, args: &ExpArgs) -> CliResult<()> {
    let file = load_file(cli)?;
    let cfg = experiment(cli, &file, args)?;
    let opts = run_options(cli, &file, args)?;
    let result = harness::run_experiment(&cfg, opts).map_err(runtime_err)?;
    emit(cli, &harness::to_csv(&[result.row]))
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> CliResult<()> {
    let file = load_file(cli)?;
    let cfg = experiment(cli, &file, &a.exp)?;
    let opts = run_options(cli, &file, &a.exp)?;
    let axis = a.axis.or(file.axis).ok_or_else(|| config_err("sweep needs --axis"))?;
    let values = a
        .values
        .clone()
        .or_else(|| file.values.clone())
        .ok_or_else(|| config_err("sweep needs --values"))?;
    for &v in &values {
        harness::point_config(&cfg, axis, v).map_err(config_err)?;
    }
    let rows = harness::sweep(&cfg, axis, &values, opts).map_err(runtime_err)?;
    emit(cli, &harness::to_csv(&rows))
}

fn cmd_scan(cli: &Cli, a: &ScanArgs) -> CliResult<()> {
    let file = load_file(cli)?;
    let mut exp = a.exp.clone();
    exp.k.get_or_insert(1);
    let transmit = experiment(cli, &file, &exp)?;
    let n_r = a.n_r.or(file.n_r).ok_or_else(|| config_err("scan needs --n-r"))?;
    let paths = a
        .paths
        .clone()
        .or_else(|| file.paths.clone())
        .unwrap_or_default()
        .iter()
        .map(|p| p.parse::<ScanPath>().map_err(config_err))
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = ScanConfig { transmit, n_r, paths };
    let est = scan_array_receiver(&cfg).map_err(runtime_err)?;
    match est.best {
        Some((i, j)) => println!("best pair: aoa {i}, aod {j} (|G| = {})", est.magnitudes[i][j]),
        None => println!("best pair: none (no path detected)"),
    }
    let ok = est.column_success.iter().filter(|&&s| s).count();
    println!("columns recovered: {ok}/{}", est.column_success.len());
    println!("samples: {}", est.samples);
    if cli.out.is_some() {
        let mut csv = String::new();
        for row in &est.magnitudes {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            csv.push_str(&line.join(","));
            csv.push('\n');
        }
        emit(cli, &csv)?;
    }
    Ok(())
}

fn cmd_selftest(cli: &Cli) -> CliResult<()> {
    let check = theory::verify_against_oracle(12, 200, cli.seed.unwrap_or(0)).map_err(runtime_err)?;
    println!(
        "oracle vs formula: {} equal-set cases, {} random partitions",
        check.equal_cases, check.random_partitions
    );
    for f in &check.failures {
        println!("  MISMATCH {f}");
    }
    if check.passed() {
        println!("selftest passed");
        Ok(())
    } else {
        Err(runtime_err(format!("{} mismatches", check.failures.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Theory(a) => cmd_theory(&cli, a),
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Sweep(a) => cmd_sweep(&cli, a),
        Command::Scan(a) => cmd_scan(&cli, a),
        Command::Selftest => cmd_selftest(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
