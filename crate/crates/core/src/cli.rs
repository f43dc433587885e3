//! Batch command-line front end: config parsing, experiment dispatch, and
//! CSV / manifest emission.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for runtime or
//! capacity errors. Every flag can also be set through a `CFSCHED_*`
//! environment variable for CI use.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{self, ExperimentConfig, HarnessError, SweepReport};
use crate::scenario::ScenarioError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("validation failed: {0} check(s) did not pass")]
    ValidationFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Harness(HarnessError::InvalidExperiment(_)) => 1,
            CliError::Harness(HarnessError::Scenario(ScenarioError::InvalidConfig(_))) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Parser)]
#[command(name = "cfsched", version, about = "Multicell and cell-free massive MIMO downlink scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo SNR sweep and write CSV results plus a manifest
    Sweep(SweepArgs),
    /// Schedule a single channel realization and print the chosen sets
    Schedule(ScheduleArgs),
    /// Run the numerical invariant suite on small instances
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration; built-in defaults apply when omitted
    #[arg(long, env = "CFSCHED_CONFIG")]
    config: Option<PathBuf>,
    /// Override the master seed
    #[arg(long, env = "CFSCHED_SEED")]
    seed: Option<u64>,
    /// Override the trial count
    #[arg(long, env = "CFSCHED_TRIALS")]
    trials: Option<usize>,
    /// Suppress informational output
    #[arg(long, env = "CFSCHED_QUIET")]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory
    #[arg(long, env = "CFSCHED_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// SNR point in dB
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    /// Trial index selecting the realization
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Also print AP / BS / user positions of the drop
    #[arg(long)]
    dump_scenario: bool,
}

/// Binary entry point.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(args) => run_sweep_command(&args),
        Command::Schedule(args) => run_schedule_command(&args),
        Command::Validate(args) => run_validate_command(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Parses (and validates) an experiment configuration from a TOML file.
/// An empty file yields the built-in defaults. Unknown keys and type
/// mismatches are reported with the offending key and position.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = common.trials {
        config.n_trials = trials;
    }
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(config)
}

/// Renders a float with up to `sig` significant digits, trimming trailing
/// zeros; stable across runs for identical inputs.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if exp < -4 || exp >= sig as i32 {
        let s = format!("{:.*e}", sig - 1, x);
        match s.find('e') {
            Some(pos) => {
                let (mantissa, exponent) = s.split_at(pos);
                let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
                format!("{mantissa}{exponent}")
            }
            None => s,
        }
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    }
}

/// Writes the sweep report as CSV: a fixed 7-column header and one row per
/// (network, method, precoder, snr) combination, numbers at 6 significant
/// digits. Byte-stable for a fixed seed.
pub fn emit_csv(report: &SweepReport, path: &Path) -> Result<(), CliError> {
    fs::write(path, csv_string(report)).map_err(io_err(path))?;
    Ok(())
}

/// Reproducibility record emitted alongside every result set.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub duration_secs: f64,
    pub dominance_violations: u64,
    pub warnings: Vec<String>,
    /// Resolved configuration; re-running with exactly this block reproduces
    /// the results byte for byte.
    pub config: ExperimentConfig,
}

fn run_sweep_command(args: &SweepArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    let started = Instant::now();
    let report = harness::run_sweep(&config)?;
    let duration = started.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let csv_path = args.out.join("results.csv");
    emit_csv(&report, &csv_path)?;

    let config_echo_path = args.out.join("resolved_config.toml");
    let echo = toml::to_string_pretty(&config)
        .map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))?;
    fs::write(&config_echo_path, echo).map_err(io_err(&config_echo_path))?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: args.common.config.as_ref().map(|p| p.display().to_string()),
        output_dir: args.out.display().to_string(),
        duration_secs: duration,
        dominance_violations: report.dominance_violations,
        warnings: report.warnings.clone(),
        config,
    };
    let manifest_path = args.out.join("manifest.toml");
    let body = toml::to_string_pretty(&manifest)
        .map_err(|e| CliError::Config(format!("cannot serialize manifest: {e}")))?;
    fs::write(&manifest_path, body).map_err(io_err(&manifest_path))?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if !args.common.quiet {
        println!(
            "wrote {} rows over {} trials to {} in {:.2} s",
            report.rows.len(),
            report.n_trials,
            csv_path.display(),
            duration
        );
        if report.dominance_violations > 0 {
            println!("dominance violations: {}", report.dominance_violations);
        }
    }
    Ok(())
}

fn run_schedule_command(args: &ScheduleArgs) -> Result<(), CliError> {
    let config = load_config(&args.common)?;
    if args.dump_scenario {
        // same drop the realization below schedules on
        let scenario_cfg = harness::trial_scenario_config(&config, args.trial);
        let scenario = crate::scenario::generate_scenario(&scenario_cfg)
            .map_err(HarnessError::from)?;
        println!("# scenario (trial {}, derived seed {})", args.trial, scenario_cfg.rng_seed);
        for (i, p) in scenario.bs_positions.iter().enumerate() {
            println!("bs {i}: ({:.2}, {:.2})", p.x, p.y);
        }
        for (i, p) in scenario.ap_positions.iter().enumerate() {
            println!("ap {i}: ({:.2}, {:.2})", p.x, p.y);
        }
        for (i, p) in scenario.user_positions.iter().enumerate() {
            println!("user {i}: ({:.2}, {:.2}) cell {}", p.x, p.y, scenario.cell_of_user[i]);
        }
    }
    let outcomes = harness::run_single_realization(&config, args.snr, args.trial)?;
    println!(
        "# trial {} at {} dB; {} users, target {}",
        args.trial, args.snr, config.scenario.num_users, config.scheduled_users
    );
    for o in &outcomes {
        let sets: Vec<String> = o.selected.iter().map(|s| format!("{s:?}")).collect();
        println!(
            "{:<9} {:<4} {:<13} rate {:>10} b/s/Hz  flops {:>10}  users {}",
            o.network.to_string(),
            o.precoder.to_string(),
            o.method.to_string(),
            fmt_sig(o.sum_rate, 6),
            o.flops,
            sets.join(" | ")
        );
    }
    Ok(())
}

fn run_validate_command(args: &CommonArgs) -> Result<(), CliError> {
    let checks = validation_checks();
    let mut failures = 0;
    for (name, outcome) in checks {
        let ok = outcome.is_ok();
        if !ok {
            failures += 1;
        }
        if !args.quiet || !ok {
            match outcome {
                Ok(detail) => println!("PASS {name}: {detail}"),
                Err(detail) => println!("FAIL {name}: {detail}"),
            }
        }
    }
    if failures > 0 {
        return Err(CliError::ValidationFailed(failures));
    }
    if !args.quiet {
        println!("all checks passed");
    }
    Ok(())
}

type CheckResult = Result<String, String>;

fn validation_checks() -> Vec<(&'static str, CheckResult)> {
    use crate::precoding;
    use crate::rates;
    use crate::scheduling::{self, Criterion, FlopCounter};
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let random_matrix = |rows: usize, cols: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| crate::scenario::sample_cn01(&mut rng))
    };

    let mut checks: Vec<(&'static str, CheckResult)> = Vec::new();

    checks.push(("zf_residual", {
        let h = random_matrix(4, 8, 1);
        match precoding::zf_precoder(&h) {
            Ok(p) => {
                let diff = &h * &p - DMatrix::<Complex64>::identity(4, 4);
                let residual = diff.iter().map(|z| z.norm()).fold(0.0, f64::max);
                if residual < 1e-9 {
                    Ok(format!("max residual {residual:.2e}"))
                } else {
                    Err(format!("residual {residual:.2e} above 1e-9"))
                }
            }
            Err(e) => Err(e.to_string()),
        }
    }));

    checks.push(("waterfill_kkt", {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst: f64 = 0.0;
        let mut failed = None;
        for _ in 0..1000 {
            use rand::Rng;
            let n = rng.gen_range(1..=12);
            let gains: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(-3.0..3.0))).collect();
            let total = 10f64.powf(rng.gen_range(-1.0..2.0));
            match precoding::waterfill(&gains, total) {
                Ok((mu, p)) => {
                    let residual = (p.iter().sum::<f64>() - total).abs();
                    worst = worst.max(residual / total);
                    let kkt = p.iter().zip(&gains).all(|(pi, c)| {
                        if *pi > 0.0 {
                            (mu - 1.0 / c - pi).abs() <= 1e-9 * (1.0 + pi)
                        } else {
                            mu <= 1.0 / c + 1e-9
                        }
                    });
                    if residual > 1e-9 * total || !kkt {
                        failed = Some(format!("residual {residual:.2e}, kkt {kkt}"));
                        break;
                    }
                }
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        match failed {
            None => Ok(format!("1000 instances, worst relative residual {worst:.2e}")),
            Some(msg) => Err(msg),
        }
    }));

    checks.push(("log_det_cross_decomposition", {
        // Cholesky route against an LU-determinant route.
        let mut worst: f64 = 0.0;
        let mut failed = None;
        for seed in 0..100 {
            let b = random_matrix(5, 5, 100 + seed);
            let a = &b * b.adjoint() + DMatrix::<Complex64>::identity(5, 5).scale(0.1);
            let chol = rates::log2_det_hermitian(&a).unwrap();
            let lu = a.determinant().norm().log2();
            let rel = (chol - lu).abs() / lu.abs().max(1.0);
            worst = worst.max(rel);
            if rel > 1e-9 {
                failed = Some(format!("seed {seed}: {chol} vs {lu}"));
                break;
            }
        }
        match failed {
            None => Ok(format!("100 instances, worst relative gap {worst:.2e}")),
            Some(msg) => Err(msg),
        }
    }));

    checks.push(("path_loss_shape", {
        let cfg = crate::scenario::ScenarioConfig::default();
        let mut prev = f64::INFINITY;
        let mut ok = true;
        let mut d = 0.5;
        while d < 390.0 {
            let pl = crate::scenario::path_loss_db(d, &cfg).unwrap();
            if pl > prev + 1e-12 {
                ok = false;
                break;
            }
            prev = pl;
            d += 0.5;
        }
        let c0 = (crate::scenario::path_loss_db(cfg.breakpoint_inner_m - 1e-9, &cfg).unwrap()
            - crate::scenario::path_loss_db(cfg.breakpoint_inner_m + 1e-9, &cfg).unwrap())
        .abs();
        let c1 = (crate::scenario::path_loss_db(cfg.breakpoint_outer_m - 1e-9, &cfg).unwrap()
            - crate::scenario::path_loss_db(cfg.breakpoint_outer_m + 1e-9, &cfg).unwrap())
        .abs();
        if ok && c0 < 1e-6 && c1 < 1e-6 {
            Ok(format!("monotone, breakpoint gaps {c0:.1e} / {c1:.1e}"))
        } else {
            Err(format!("monotone {ok}, breakpoint gaps {c0:.1e} / {c1:.1e}"))
        }
    }));

    checks.push(("correlation_bounds", {
        let mut h = DMatrix::<Complex64>::zeros(2, 4);
        h[(0, 0)] = Complex64::new(1.0, 0.0);
        h[(1, 1)] = Complex64::new(1.0, 0.0);
        let orth = rates::sum_channel_correlation(&h).unwrap();
        h[(1, 0)] = Complex64::new(1.0, 0.0);
        h[(1, 1)] = Complex64::new(0.0, 0.0);
        let dup = rates::sum_channel_correlation(&h).unwrap();
        if orth == 0.0 && (dup - 2.0).abs() < 1e-12 {
            Ok("orthogonal 0, identical 2".into())
        } else {
            Err(format!("orthogonal {orth}, identical {dup}"))
        }
    }));

    checks.push(("scheduler_dominance", {
        let mut bad = None;
        for seed in 0..5 {
            let h = random_matrix(8, 12, 500 + seed);
            let power = 12.0;
            let mut fc = FlopCounter::new();
            let zfs = match scheduling::zfs_schedule(&h, 4, power, &mut fc) {
                Ok(r) => r,
                Err(e) => {
                    bad = Some(e.to_string());
                    break;
                }
            };
            if zfs.selected.len() != 4 {
                continue;
            }
            let mut eval = |set: &[usize], fc: &mut FlopCounter| {
                scheduling::charge_zf_throughput(fc, set.len(), h.ncols());
                rates::zf_throughput(&h.select_rows(set.iter()), power)
                    .unwrap_or(f64::NEG_INFINITY)
            };
            let mut sorted = zfs.selected.clone();
            sorted.sort_unstable();
            let zfs_rate = eval(&sorted, &mut fc);
            let enh = scheduling::enhanced_greedy_schedule(
                &h,
                4,
                power,
                Criterion::SumRate(&mut eval),
                &mut fc,
            )
            .unwrap();
            let mut eval2 = |set: &[usize], fc: &mut FlopCounter| {
                scheduling::charge_zf_throughput(fc, set.len(), h.ncols());
                rates::zf_throughput(&h.select_rows(set.iter()), power)
                    .unwrap_or(f64::NEG_INFINITY)
            };
            let ex = scheduling::exhaustive_schedule(8, 4, &mut eval2, 1000, &mut fc).unwrap();
            if !(ex.criterion_value >= enh.criterion_value && enh.criterion_value >= zfs_rate) {
                bad = Some(format!(
                    "seed {seed}: {} / {} / {zfs_rate}",
                    ex.criterion_value, enh.criterion_value
                ));
                break;
            }
        }
        match bad {
            None => Ok("exhaustive >= enhanced >= zfs on 5 instances".into()),
            Some(msg) => Err(msg),
        }
    }));

    checks.push(("waterfilling_optimality", {
        let mut bad = None;
        for seed in 0..50 {
            let h = random_matrix(3, 8, 900 + seed);
            let wf = rates::zf_throughput(&h, 8.0);
            let ep = rates::zf_throughput_equal_power(&h, 8.0);
            if let (Ok(wf), Ok(ep)) = (wf, ep) {
                if wf < ep - 1e-9 {
                    bad = Some(format!("seed {seed}: waterfilling {wf} < equal power {ep}"));
                    break;
                }
            }
        }
        match bad {
            None => Ok("water-filling never below equal power on 50 sets".into()),
            Some(msg) => Err(msg),
        }
    }));

    checks.push(("sweep_determinism", {
        let config = ExperimentConfig {
            snr_points_db: vec![0.0, 10.0],
            n_trials: 2,
            methods: vec![harness::Method::Zfs],
            networks: vec![harness::Network::Cellfree],
            precoders: vec![crate::precoding::PrecoderKind::Zf],
            scheduled_users: 4,
            scenario: crate::scenario::ScenarioConfig {
                num_users: 8,
                num_cells: 4,
                bs_antennas: 4,
                num_aps: 16,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = harness::run_sweep(&config).map(|r| csv_string(&r));
        let b = harness::run_sweep(&config).map(|r| csv_string(&r));
        match (a, b) {
            (Ok(a), Ok(b)) if a == b => Ok("two runs, identical CSV bytes".into()),
            (Ok(_), Ok(_)) => Err("same seed produced different CSV output".into()),
            (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
        }
    }));

    checks
}

/// In-memory CSV rendering behind [`emit_csv`].
fn csv_string(report: &SweepReport) -> String {
    let mut out = String::from("network,method,precoder,snr_db,mean_sum_rate,stderr,mean_flops\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.network,
            row.method,
            row.precoder,
            fmt_sig(row.snr_db, 6),
            fmt_sig(row.mean_sum_rate, 6),
            fmt_sig(row.stderr, 6),
            fmt_sig(row.mean_flops, 6),
        ));
    }
    out
}
