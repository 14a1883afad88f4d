// SPDX-License-Identifier: MIT OR Apache-2.0

//! `qcd`: simulate Markov streams, run the kernel CuSum detectors, compute
//! bound certificates and run Monte Carlo sweeps.
//!
//! Exit codes: 0 success or alarm, 2 input error, 3 censored run,
//! 4 infeasible bounds.

mod stream;

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use qcd_core::bench::{sweep_and_emit, ExperimentConfig, SWEEP_CSV};
use qcd_core::markov::{stream_rng, write_path_csv, ChainSampler};
use qcd_core::theory::calibrate;
use qcd_core::{Algorithm, ChangePoint, Error, Event};

const EXIT_INPUT: u8 = 2;
const EXIT_CENSORED: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Core(Error),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Infeasible { .. }) => EXIT_INFEASIBLE,
            _ => EXIT_INPUT,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "qcd",
    version,
    about = "Data-driven quickest change detection for Markov streams"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON). Defaults to the built-in three-state example.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase stderr verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Detector overrides shared by several subcommands.
#[derive(Args, Debug, Default)]
struct DetectorFlags {
    /// Block size.
    #[arg(long)]
    m: Option<usize>,
    /// Drift offset subtracted from each block score.
    #[arg(long)]
    sigma: Option<f64>,
    /// Alarm threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write monitored (x) and reference (y) sample paths as CSV.
    Simulate {
        #[arg(long, default_value_t = 1000)]
        length: usize,
        /// Change point: an index, "never", or "worst-case-start".
        #[arg(long, value_parser = parse_change_point)]
        change_point: Option<ChangePoint>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a detector over a stream until it alarms or the input ends.
    Detect {
        #[arg(long, value_parser = parse_algorithm, default_value = "oral")]
        algorithm: Algorithm,
        /// Line-delimited `x,y` pairs; `-` reads stdin.
        #[arg(long, conflicts_with_all = ["x", "y"])]
        input: Option<PathBuf>,
        /// Single-column monitored stream.
        #[arg(long, requires = "y")]
        x: Option<PathBuf>,
        /// Single-column reference stream.
        #[arg(long, requires = "x")]
        y: Option<PathBuf>,
        /// Write the JSON-lines event log here instead of stdout.
        #[arg(long)]
        events: Option<PathBuf>,
        #[command(flatten)]
        detector: DetectorFlags,
    },
    /// Compute the delay and false-alarm certificates as JSON.
    Bounds {
        #[command(flatten)]
        detector: DetectorFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo sweep over the configured algorithms.
    Bench(BenchArgs),
    /// Sweep both algorithms and print the joint ADD vs log ARL table.
    Compare(BenchArgs),
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "qcd-out")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    max_samples: Option<u64>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
    #[command(flatten)]
    detector: DetectorFlags,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_change_point(s: &str) -> Result<ChangePoint, String> {
    let value = match s.parse::<u64>() {
        Ok(n) => serde_json::Value::from(n),
        Err(_) => serde_json::Value::from(s),
    };
    serde_json::from_value(value).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("qcd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::reference(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn apply(flags: &DetectorFlags, config: &mut ExperimentConfig) -> Result<(), CliError> {
    let d = &mut config.detector;
    if let Some(m) = flags.m {
        d.m = m;
    }
    if let Some(sigma) = flags.sigma {
        d.sigma = sigma;
        config.sweep_sigmas = vec![sigma];
    }
    if let Some(c) = flags.threshold {
        d.threshold = c;
    }
    if let Some(b) = flags.bandwidth {
        d.kernel.bandwidth = b;
    }
    config.validate()?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let mut config = load_config(&cli.common)?;
    let verbose = cli.common.verbose;
    if verbose > 0 {
        eprintln!("config sha256 {} seed {}", config.hash(), config.seed);
    }
    match cli.command {
        Command::Simulate {
            length,
            change_point,
            out,
        } => {
            if let Some(cp) = change_point {
                config.change_point = cp;
            }
            simulate(&config, length, &out)
        }
        Command::Detect {
            algorithm,
            input,
            x,
            y,
            events,
            detector,
        } => {
            apply(&detector, &mut config)?;
            let (xs, ys) = match (input, x, y) {
                (Some(path), _, _) if path.as_os_str() != "-" => {
                    stream::read_pairs(BufReader::new(open(&path)?), &path.display().to_string())?
                }
                (_, Some(xp), Some(yp)) => (
                    stream::read_column(BufReader::new(open(&xp)?), &xp.display().to_string())?,
                    stream::read_column(BufReader::new(open(&yp)?), &yp.display().to_string())?,
                ),
                _ => stream::read_pairs(io::stdin().lock(), "stdin")?,
            };
            detect(&config, algorithm, &xs, &ys, events.as_deref(), verbose)
        }
        Command::Bounds { detector, out } => {
            apply(&detector, &mut config)?;
            let report = calibrate(&config.detector, &config.kernel_p, &config.kernel_q)?;
            let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            emit(out.as_deref(), &json)?;
            if report.is_feasible() {
                Ok(0)
            } else {
                for i in &report.infeasible {
                    eprintln!("qcd: {} bound infeasible: {}; {}", i.bound, i.reason, i.remedy);
                }
                Ok(EXIT_INFEASIBLE)
            }
        }
        Command::Bench(args) => {
            bench_config(&args, &mut config)?;
            for path in bench(&config, &args.out, verbose)? {
                print_stdout(&format!("{}\n", path.display()))?;
            }
            Ok(0)
        }
        Command::Compare(args) => {
            bench_config(&args, &mut config)?;
            config.algorithms = vec![Algorithm::Oral, Algorithm::Ral];
            bench(&config, &args.out, verbose)?;
            let table = std::fs::read_to_string(args.out.join(SWEEP_CSV))
                .map_err(|e| CliError::input(format!("{}: {e}", args.out.display())))?;
            print_stdout(&table)?;
            Ok(0)
        }
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, body: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, format!("{body}\n")).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?,
        None => print_stdout(&format!("{body}\n"))?,
    }
    Ok(())
}

/// Writes to stdout, treating a closed pipe as success.
fn print_stdout(text: &str) -> Result<(), CliError> {
    let mut stdout = io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::input(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct SimulateMetadata<'a> {
    config_sha256: String,
    seed: u64,
    length: usize,
    change_point: ChangePoint,
    files: [&'a str; 2],
}

fn simulate(config: &ExperimentConfig, length: usize, out: &Path) -> Result<u8, CliError> {
    if length == 0 {
        return Err(CliError::input("--length must be positive"));
    }
    let p = &config.kernel_p;
    let init = p.stationary()?;
    let xs: Vec<f64> = ChainSampler::new(
        p,
        &config.kernel_q,
        config.change_point,
        &init,
        stream_rng(config.seed, 0),
    )?
    .take(length)
    .collect();
    let ys: Vec<f64> = ChainSampler::new(p, p, ChangePoint::Never, &init, stream_rng(config.seed, 1))?
        .take(length)
        .collect();
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_path_csv(&out.join("x.csv"), "x", &xs)?;
    write_path_csv(&out.join("y.csv"), "y", &ys)?;
    let meta = SimulateMetadata {
        config_sha256: config.hash(),
        seed: config.seed,
        length,
        change_point: config.change_point,
        files: ["x.csv", "y.csv"],
    };
    let json = serde_json::to_string_pretty(&meta).map_err(Error::from)?;
    emit(Some(&out.join("simulate.json")), &json)?;
    Ok(0)
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Alarm {
        algorithm: Algorithm,
        sample_index: u64,
        block: u64,
        statistic: f64,
        threshold: f64,
        kernel_calls: u64,
        trajectory: Vec<f64>,
    },
    Censored {
        algorithm: Algorithm,
        samples: u64,
        statistic: f64,
        threshold: f64,
        kernel_calls: u64,
        trajectory: Vec<f64>,
    },
}

fn detect(
    config: &ExperimentConfig,
    algorithm: Algorithm,
    xs: &[f64],
    ys: &[f64],
    events: Option<&Path>,
    verbose: u8,
) -> Result<u8, CliError> {
    if xs.len() != ys.len() {
        return Err(CliError::input(format!(
            "x and y streams differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    let mut log: Box<dyn Write> = match events {
        Some(path) => Box::new(io::BufWriter::new(File::create(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut det = algorithm.build(config.detector)?;
    let mut trajectory = Vec::new();
    let threshold = config.detector.threshold;
    let mut record = None;
    for (&x, &y) in xs.iter().zip(ys) {
        let event = det.push(x, y)?;
        if matches!(event, Event::None) {
            continue;
        }
        trajectory.push(det.statistic());
        let line = serde_json::to_string(&event).map_err(Error::from)?;
        match writeln!(log, "{line}") {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => return Err(CliError::input(format!("event log: {e}"))),
            _ => {}
        }
        if let Event::Alarm {
            sample_index,
            block,
            statistic,
            ..
        } = event
        {
            record = Some(Record::Alarm {
                algorithm,
                sample_index,
                block,
                statistic,
                threshold,
                kernel_calls: det.kernel_calls(),
                trajectory: std::mem::take(&mut trajectory),
            });
            break;
        }
    }
    let _ = log.flush();
    drop(log);
    let (record, code) = match record {
        Some(r) => (r, 0),
        None => (
            Record::Censored {
                algorithm,
                samples: det.samples_seen(),
                statistic: det.statistic(),
                threshold,
                kernel_calls: det.kernel_calls(),
                trajectory,
            },
            EXIT_CENSORED,
        ),
    };
    if verbose > 0 && code == EXIT_CENSORED {
        eprintln!("no alarm after {} samples", det.samples_seen());
    }
    emit(None, &serde_json::to_string(&record).map_err(Error::from)?)?;
    Ok(code)
}

fn bench_config(args: &BenchArgs, config: &mut ExperimentConfig) -> Result<(), CliError> {
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(n) = args.max_samples {
        config.max_samples = n;
    }
    if let Some(a) = args.algorithm {
        config.algorithms = vec![a];
    }
    apply(&args.detector, config)
}

fn bench(config: &ExperimentConfig, out: &Path, verbose: u8) -> Result<Vec<PathBuf>, CliError> {
    if verbose > 0 {
        eprintln!(
            "sweeping {:?} over sigma {:?}, {} trials each",
            config.algorithms, config.sweep_sigmas, config.trials
        );
    }
    Ok(sweep_and_emit(config, out)?)
}
