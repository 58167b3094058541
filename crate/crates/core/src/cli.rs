//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on invalid input or I/O failure, 2 when
//! `--check` is given and a statistical check fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ExperimentConfig, InitialConvention};
use crate::drift::DriftPath;
use crate::error::{Error, Result};
use crate::flow::{simulate_replica, FlowPath};
use crate::girsanov::{drift_convergence_diagnostic, log_likelihood_ratio, tilted_probability};
use crate::harness::{
    cluster_count_test, coalescence_battery, martingale_battery, path_to_json, scaling_battery,
    write_path_csv, write_reports_csv, TestReport,
};
use crate::ldp::{generator_battery, rate_function, varadhan_sweep, TargetSet, TestFunction};
use crate::observables::{quantile, wasserstein2, AtomicMeasure};
use crate::rng::SEED_ENV_VAR;
use crate::stats::{normal_sf, Summary};
use crate::stoch_calc::{integrate_simple, GridFunction, SimpleProcess};

#[derive(Debug, Parser)]
#[command(name = "massflow", version, about = "Modified Arratia flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one path and write its blocks as CSV.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Also write the path as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run statistical test batteries.
    Stats {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "martingale")]
        battery: Battery,
        /// First label for the coalescence battery.
        #[arg(long, default_value_t = 0.25)]
        u: f64,
        /// Second label for the coalescence battery.
        #[arg(long, default_value_t = 0.75)]
        v: f64,
        #[arg(long)]
        check: bool,
    },
    /// Stochastic integral of a time-constant integrand along one path, or
    /// with `--check` the mean of `I_T^2` against the mean predicted QV.
    Integral {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "one")]
        integrand: Integrand,
        #[arg(long)]
        check: bool,
    },
    /// Likelihood-ratio diagnostics for the tilted flow.
    Girsanov {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "unit-mean")]
        mode: GirsanovMode,
        /// Constant drift for `unit-mean` and `tail`.
        #[arg(long, default_value_t = 0.5)]
        h: f64,
        /// Speed of the target path `u + v t` for `convergence`.
        #[arg(long, default_value_t = 0.3)]
        v: f64,
        /// Noise scales for `convergence`.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125")]
        eps_list: Vec<f64>,
        #[arg(long)]
        check: bool,
    },
    /// Probability sweep for a Wasserstein ball around a shifted uniform law.
    Varadhan {
        #[command(flatten)]
        config: ConfigArgs,
        /// Shift of the ball's center relative to the initial law.
        #[arg(long, default_value_t = 0.3)]
        shift: f64,
        #[arg(long, default_value_t = 0.15)]
        radius: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.004,0.002,0.001")]
        eps_list: Vec<f64>,
        #[arg(long, value_enum, default_value = "entry")]
        tilt: Tilt,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Relative tolerance for the extrapolated value under `--check`.
        #[arg(long, default_value_t = 0.35)]
        tolerance: f64,
        #[arg(long)]
        check: bool,
    },
    /// Quadratic Wasserstein distance between two measures stored as CSV
    /// (`position,weight`).
    Wasserstein { a: PathBuf, b: PathBuf },
    /// Rate function of a deterministic path on the configured grid.
    Rate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value = "straightline")]
        path: RatePathKind,
        /// Speed of the translation `u + v t`.
        #[arg(long, default_value_t = 0.0)]
        v: f64,
        /// Endpoint measure (CSV) for a straight line; overrides `--v`.
        #[arg(long)]
        target: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Battery {
    Martingale,
    Scaling,
    Coalescence,
    Cluster,
    Generator,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Integrand {
    /// `f = 1`.
    One,
    /// `f(u) = u`.
    Label,
    /// `f(u) = sin(2 pi u)`.
    Wave,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GirsanovMode {
    /// `E exp(ln M)` under the driftless law.
    UnitMean,
    /// Tilted tail probability of a single particle against the Gaussian tail.
    Tail,
    /// Mean sup-distance of the drifted flow to its target path.
    Convergence,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tilt {
    None,
    /// Straight line to the nearest point of the ball.
    Entry,
    /// Straight line to the ball's center.
    Center,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RatePathKind {
    Straightline,
    Frozen,
}

/// Experiment parameters: a `key = value` file, overridden by flags.
#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "T")]
    t_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Master seed; falls back to MASSFLOW_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    convention: Option<InitialConvention>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let (mut config, seen) = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => (ExperimentConfig::default(), Vec::new()),
        };
        let seeded = seen.iter().any(|k| k == "seed" || k == "master_seed");
        if !seeded && self.seed.is_none() {
            if let Ok(value) = std::env::var(SEED_ENV_VAR) {
                config.master_seed = value.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("{SEED_ENV_VAR}: cannot parse {value:?}"))
                })?;
            }
        }
        macro_rules! apply {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { config.$field = v; })*
            };
        }
        apply!(n => n, t_max => t_max, dt => dt, epsilon => epsilon, beta => beta,
               replicas => replicas, seed => master_seed, convention => initial_convention);
        if let Some(out) = &self.output {
            config.output = Some(out.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

/// Parse `args` (program name first) and run, writing to the process's
/// stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

/// `Ok(false)` signals a failed `--check`.
fn dispatch(command: Command, out: &mut dyn Write) -> Result<bool> {
    match command {
        Command::Simulate { config, json } => {
            let config = config.resolve()?;
            let path = simulate_replica(&config, 0)?;
            with_output(config.output.as_deref(), out, |w| write_path_csv(&path, w))?;
            if let Some(json) = json {
                write_file(&json, path_to_json(&path)?.as_bytes())?;
            }
            Ok(true)
        }
        Command::Stats {
            config,
            battery,
            u,
            v,
            check,
        } => {
            let config = config.resolve()?;
            let reports = match battery {
                Battery::Martingale => martingale_battery(&config)?,
                Battery::Scaling => scaling_battery(&config)?,
                Battery::Coalescence => coalescence_battery(&config, u, v)?,
                Battery::Cluster => vec![cluster_count_test(&config)?],
                Battery::Generator => generator_reports(&config)?,
            };
            finish_reports(&reports, &config, out, check)
        }
        Command::Integral {
            config,
            integrand,
            check,
        } => integral(config.resolve()?, integrand, check, out),
        Command::Girsanov {
            config,
            mode,
            h,
            v,
            eps_list,
            check,
        } => {
            let config = config.resolve()?;
            match mode {
                GirsanovMode::UnitMean => {
                    let report = unit_mean(&config, h)?;
                    finish_reports(&[report], &config, out, check)
                }
                GirsanovMode::Tail => {
                    let report = tilted_tail(&config)?;
                    finish_reports(&[report], &config, out, check)
                }
                GirsanovMode::Convergence => {
                    let grid = config.grid()?;
                    let phi = DriftPath::from_fn_with_rate(
                        &config.labels(),
                        &grid,
                        |u, t| u + v * t,
                        |_, _| v,
                    )?;
                    let table = drift_convergence_diagnostic(&phi, &eps_list, &config)?;
                    with_output(config.output.as_deref(), out, |w| table.write_csv(w))?;
                    Ok(!check || table.is_monotone())
                }
            }
        }
        Command::Varadhan {
            config,
            shift,
            radius,
            eps_list,
            tilt,
            json,
            tolerance,
            check,
        } => {
            let config = config.resolve()?;
            let lambda_n = AtomicMeasure::uniform_grid(config.n, config.initial_convention)?;
            let target = TargetSet::wasserstein_ball(lambda_n.shifted(shift)?, radius)?;
            let grid = config.grid()?;
            let labels = config.labels();
            let drift = match tilt {
                Tilt::None => None,
                Tilt::Entry => Some(target.entry_tilt(&labels, &grid)?),
                Tilt::Center => Some(target.center_tilt(&labels, &grid)?),
            };
            let report = varadhan_sweep(
                &target,
                &eps_list,
                config.replicas,
                &config,
                drift.as_ref(),
                config.master_seed,
            )?;
            with_output(config.output.as_deref(), out, |w| report.write_csv(w))?;
            if let Some(json) = json {
                write_file(&json, report.to_json()?.as_bytes())?;
            }
            let trend = report
                .estimates_by_decreasing_eps()
                .is_some_and(|e| e.iter().all(|&x| x < 0.0) && e.windows(2).all(|w| w[1] > w[0]));
            let close = report.extrapolated.is_some_and(|x| {
                let theory = report.theoretical_rate;
                (x - theory).abs() <= tolerance * theory.abs()
            });
            Ok(!check || (trend && close))
        }
        Command::Wasserstein { a, b } => {
            let a = AtomicMeasure::load_csv(&a)?;
            let b = AtomicMeasure::load_csv(&b)?;
            writeln!(out, "{}", format_number(wasserstein2(&a, &b))).map_err(stdout_err)?;
            Ok(true)
        }
        Command::Rate {
            config,
            path,
            v,
            target,
        } => {
            let config = config.resolve()?;
            let grid = config.grid()?;
            let labels = config.labels();
            let phi = match (path, target) {
                (RatePathKind::Frozen, _) => DriftPath::frozen(&labels, &grid)?,
                (RatePathKind::Straightline, Some(file)) => {
                    let g = quantile(&AtomicMeasure::load_csv(&file)?).cell_averages(config.n);
                    DriftPath::straight_line(&labels, &grid, &g)?
                }
                (RatePathKind::Straightline, None) => {
                    DriftPath::from_fn_with_rate(&labels, &grid, |u, t| u + v * t, |_, _| v)?
                }
            };
            writeln!(out, "{}", format_number(rate_function(&phi))).map_err(stdout_err)?;
            Ok(true)
        }
    }
}

fn generator_reports(config: &ExperimentConfig) -> Result<Vec<TestReport>> {
    let started = std::time::Instant::now();
    let report = generator_battery(config, &TestFunction::square())?;
    let mut reports: Vec<TestReport> = report
        .checks
        .iter()
        .map(|c| {
            TestReport::z(
                format!("generator defect c={} (f=x^2)", c.constant),
                c.z,
                config.replicas,
                started,
            )
        })
        .collect();
    reports.push(TestReport::z(
        "generator quadratic variation (f=x^2)",
        report.qv_z,
        config.replicas,
        started,
    ));
    Ok(reports)
}

fn integral(
    config: ExperimentConfig,
    integrand: Integrand,
    check: bool,
    out: &mut dyn Write,
) -> Result<bool> {
    let labels = config.labels();
    let f = GridFunction::from_labels(&labels, |u| match integrand {
        Integrand::One => 1.0,
        Integrand::Label => u,
        Integrand::Wave => (2.0 * std::f64::consts::PI * u).sin(),
    })?;
    let process = SimpleProcess::constant(f);
    if !check {
        let path = simulate_replica(&config, 0)?;
        let integral = integrate_simple(&path, &process)?;
        return with_output(config.output.as_deref(), out, |w| integral.write_csv(w)).map(|_| true);
    }
    let started = std::time::Instant::now();
    let diffs = (0..config.replicas as u64)
        .map(|r| {
            let path = simulate_replica(&config, r)?;
            let i = integrate_simple(&path, &process)?;
            Ok(i.final_value().powi(2) - i.final_qv())
        })
        .collect::<Result<Vec<f64>>>()?;
    let report = TestReport::z(
        "integral second moment vs quadratic variation",
        Summary::of(&diffs).z_score(0.0),
        config.replicas,
        started,
    );
    finish_reports(&[report], &config, out, true)
}

fn unit_mean(config: &ExperimentConfig, h: f64) -> Result<TestReport> {
    if config.epsilon <= 0.0 {
        return Err(Error::InvalidConfig(
            "unit-mean check needs epsilon > 0".into(),
        ));
    }
    let started = std::time::Instant::now();
    let drift = DriftPath::constant_rate(&config.labels(), &config.grid()?, h)?;
    let weights = (0..config.replicas as u64)
        .map(|r| {
            let path = simulate_replica(config, r)?;
            Ok(log_likelihood_ratio(&path, &drift, config.epsilon)?.exp())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(TestReport::z(
        format!("likelihood ratio unit mean h={h}"),
        Summary::of(&weights).z_score(1.0),
        config.replicas,
        started,
    ))
}

/// Single particle: `P(y(T) - y(0) > 3 sqrt(eps T))` by tilting along the
/// straight line to the threshold.
fn tilted_tail(config: &ExperimentConfig) -> Result<TestReport> {
    if config.n != 1 {
        return Err(Error::InvalidConfig("tail check needs n = 1".into()));
    }
    if config.epsilon <= 0.0 {
        return Err(Error::InvalidConfig("tail check needs epsilon > 0".into()));
    }
    let started = std::time::Instant::now();
    let a = 3.0 * (config.epsilon * config.t_max).sqrt();
    let drift = DriftPath::constant_rate(&config.labels(), &config.grid()?, a / config.t_max)?;
    let start = config.labels()[0];
    let event = |p: &FlowPath| p.last().blocks()[0].position - start > a;
    let est = tilted_probability(
        config,
        event,
        &drift,
        config.epsilon,
        config.replicas,
        config.master_seed,
    )?;
    Ok(TestReport::z(
        "tilted single-particle tail",
        (est.estimate - normal_sf(3.0)) / est.std_error,
        config.replicas,
        started,
    ))
}

fn finish_reports(
    reports: &[TestReport],
    config: &ExperimentConfig,
    out: &mut dyn Write,
    check: bool,
) -> Result<bool> {
    for r in reports {
        writeln!(out, "{r}").map_err(stdout_err)?;
    }
    if let Some(path) = &config.output {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        write_reports_csv(reports, BufWriter::new(file))?;
    }
    Ok(!check || reports.iter().all(|r| r.pass))
}

fn with_output(
    path: Option<&Path>,
    out: &mut dyn Write,
    write: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match path {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush().map_err(|e| Error::io(path, e))
        }
        None => write(out),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn stdout_err(e: io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Twelve decimals with trailing zeros trimmed, keeping one digit after the
/// point.
fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0');
    let s = if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    };
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("massflow").chain(args.iter().copied());
        let code = run_with(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(0.125), "0.125");
        assert_eq!(format_number(1.0), "1.0");
        assert_eq!(format_number(0.125000000000004), "0.125");
        assert_eq!(format_number(-1e-15), "0.0");
        assert_eq!(format_number(f64::INFINITY), "inf");
    }

    #[test]
    fn rate_straight_line() {
        let (code, out, _) =
            run_capture(&["rate", "--path", "straightline", "--v", "0.5", "--T", "1"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), "0.125");
        let (_, out, _) = run_capture(&["rate", "--path", "frozen"]);
        assert_eq!(out.trim(), "0.0");
    }

    #[test]
    fn bad_input_exits_one() {
        assert_eq!(run_capture(&["rate", "--bogus"]).0, 1);
        assert_eq!(run_capture(&["simulate", "--n", "0"]).0, 1);
        assert_eq!(run_capture(&["frobnicate"]).0, 1);
        let (code, _, err) = run_capture(&["simulate", "--dt=-1"]);
        assert_eq!(code, 1);
        assert!(err.contains("dt"));
        assert_eq!(run_capture(&["--help"]).0, 0);
    }
}
