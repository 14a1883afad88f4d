// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded Monte Carlo harness: ARL and ADD estimation over threshold grids,
//! kernel-call profiling, and CSV/SVG/JSON emission.
//!
//! Each trial draws its monitored and reference streams from
//! [`stream_rng`]`(seed, 2 * trial)` and `(seed, 2 * trial + 1)`, so results
//! depend only on `(config, seed)` and not on how trials are scheduled.
//!
//! One detector run per trial serves the whole threshold grid: the CuSum
//! path does not depend on `c`, so the alarm time for each `c` is the first
//! sample where the statistic exceeds it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{Algorithm, DetectorConfig, Event};
use crate::error::{Error, Result};
use crate::markov::{stream_rng, ChainSampler, ChangePoint, TransitionKernel};

pub const SCHEMA_VERSION: u32 = 1;
/// ARL cells censored more often than this are flagged as lower bounds.
pub const CENSOR_FLAG_RATE: f64 = 0.2;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_sigmas() -> Vec<f64> {
    vec![0.3, 0.35]
}

fn default_trials() -> usize {
    200
}

fn default_max_samples() -> u64 {
    100_000
}

fn default_change_point() -> ChangePoint {
    ChangePoint::At(1)
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Oral, Algorithm::Ral]
}

fn default_complexity_grid() -> Vec<u64> {
    vec![1_000, 2_000, 5_000, 10_000, 20_000, 50_000]
}

/// Experiment description shared by every CLI subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema: u32,
    pub kernel_p: TransitionKernel,
    pub kernel_q: TransitionKernel,
    pub detector: DetectorConfig,
    /// Threshold grid for the block detector, strictly increasing.
    pub thresholds: Vec<f64>,
    /// Threshold grid for the sliding-window baseline. It accumulates one
    /// score per sample instead of one per block, so it needs a larger range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ral_thresholds: Option<Vec<f64>>,
    #[serde(default = "default_sigmas")]
    pub sweep_sigmas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Change point for delay estimation; `1` is the worst-case-start surrogate.
    #[serde(default = "default_change_point")]
    pub change_point: ChangePoint,
    #[serde(default = "default_max_samples")]
    pub max_samples: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_complexity_grid")]
    pub complexity_grid: Vec<u64>,
}

impl ExperimentConfig {
    /// The two-chain experiment with block size 10.
    pub fn reference() -> Self {
        use crate::markov::reference::{chain_p, chain_q};
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            kernel_p: chain_p(),
            kernel_q: chain_q(),
            detector: DetectorConfig {
                m: 10,
                sigma: 0.3,
                threshold: 1.0,
                kernel: Default::default(),
            },
            thresholds: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            ral_thresholds: Some(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
            sweep_sigmas: default_sigmas(),
            trials: default_trials(),
            change_point: default_change_point(),
            max_samples: default_max_samples(),
            seed: 2023,
            algorithms: default_algorithms(),
            complexity_grid: default_complexity_grid(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported config schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        self.kernel_p.check_same_state_space(&self.kernel_q)?;
        self.detector.validate()?;
        check_increasing("thresholds", &self.thresholds)?;
        if let Some(grid) = &self.ral_thresholds {
            check_increasing("ral_thresholds", grid)?;
        }
        if self.trials == 0 {
            return Err(Error::NoTrials);
        }
        if self.max_samples == 0 {
            return Err(Error::InvalidParameter("max_samples must be positive".to_string()));
        }
        if self.sweep_sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("sweep sigmas must be > 0".to_string()));
        }
        if self.complexity_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "complexity_grid must be strictly increasing".to_string(),
            ));
        }
        Ok(())
    }

    pub fn thresholds_for(&self, algorithm: Algorithm) -> &[f64] {
        match (algorithm, &self.ral_thresholds) {
            (Algorithm::Ral, Some(grid)) => grid,
            _ => &self.thresholds,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn check_increasing(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("threshold grid"));
    }
    if grid.iter().any(|c| !(c.is_finite() && *c >= 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!(
            "{name} must be finite, non-negative and strictly increasing, got {grid:?}"
        )));
    }
    Ok(())
}

/// Mean and standard error over trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(trials)`.
    pub se: f64,
    pub censor_rate: f64,
    /// Set when `censor_rate` exceeds [`CENSOR_FLAG_RATE`]: censored trials
    /// count at the cap, so the mean underestimates.
    pub lower_bound: bool,
}

impl Estimate {
    fn from_samples(values: &[f64], censored: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NoTrials);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let censor_rate = censored as f64 / n;
        Ok(Estimate {
            mean,
            se: (var / n).sqrt(),
            censor_rate,
            lower_bound: censor_rate > CENSOR_FLAG_RATE,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub sigma: f64,
    pub threshold: f64,
    pub arl: Option<Estimate>,
    pub add: Option<Estimate>,
    /// Mean kernel evaluations per trial up to the stopping time.
    pub kernel_calls: f64,
    pub wall_time_secs: f64,
}

/// Stopping time and kernel calls of one trial at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crossing {
    /// Alarm sample index, or `None` if censored.
    pub alarm: Option<u64>,
    pub kernel_calls: u64,
}

/// Runs one trial and returns the first crossing of every threshold.
pub fn trial_crossings(
    config: &ExperimentConfig,
    detector: DetectorConfig,
    algorithm: Algorithm,
    thresholds: &[f64],
    change: ChangePoint,
    trial: u64,
) -> Result<Vec<Crossing>> {
    let p = &config.kernel_p;
    let init = p.stationary()?;
    let mut xs = ChainSampler::new(p, &config.kernel_q, change, &init, stream_rng(config.seed, 2 * trial))?;
    let mut ys = ChainSampler::new(p, p, ChangePoint::Never, &init, stream_rng(config.seed, 2 * trial + 1))?;
    let mut det = algorithm.build(detector.with_threshold(f64::MAX))?;
    let mut out = vec![
        Crossing {
            alarm: None,
            kernel_calls: 0,
        };
        thresholds.len()
    ];
    let mut next = 0;
    for _ in 0..config.max_samples {
        let x = xs.next().expect("sampler is infinite");
        let y = ys.next().expect("sampler is infinite");
        if let Event::BlockCompleted { statistic, .. } = det.push(x, y)? {
            while next < thresholds.len() && statistic > thresholds[next] {
                out[next] = Crossing {
                    alarm: Some(det.samples_seen()),
                    kernel_calls: det.kernel_calls(),
                };
                next += 1;
            }
            if next == thresholds.len() {
                return Ok(out);
            }
        }
    }
    for cell in &mut out[next..] {
        cell.kernel_calls = det.kernel_calls();
    }
    Ok(out)
}

fn run_trials(
    config: &ExperimentConfig,
    detector: DetectorConfig,
    algorithm: Algorithm,
    thresholds: &[f64],
    change: ChangePoint,
) -> Result<Vec<Vec<Crossing>>> {
    if config.trials == 0 {
        return Err(Error::NoTrials);
    }
    (0..config.trials as u64)
        .into_par_iter()
        .map(|trial| trial_crossings(config, detector, algorithm, thresholds, change, trial))
        .collect()
}

fn summarize(
    config: &ExperimentConfig,
    detector: DetectorConfig,
    algorithm: Algorithm,
    thresholds: &[f64],
    change: ChangePoint,
) -> Result<Vec<(f64, Estimate, f64, f64)>> {
    let start = Instant::now();
    let trials = run_trials(config, detector, algorithm, thresholds, change)?;
    let elapsed = start.elapsed().as_secs_f64();
    let tau = change.index().unwrap_or(0);
    thresholds
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let mut censored = 0;
            let values: Vec<f64> = trials
                .iter()
                .map(|cells| {
                    let stop = match cells[k].alarm {
                        Some(t) => t,
                        None => {
                            censored += 1;
                            config.max_samples
                        }
                    };
                    stop.saturating_sub(tau) as f64
                })
                .collect();
            let calls = trials.iter().map(|cells| cells[k].kernel_calls as f64).sum::<f64>() / trials.len() as f64;
            Ok((c, Estimate::from_samples(&values, censored)?, calls, elapsed))
        })
        .collect()
}

/// Mean alarm time with no change, per threshold. Censored trials count at
/// `max_samples`.
pub fn estimate_arl(config: &ExperimentConfig, algorithm: Algorithm) -> Result<Vec<RunResult>> {
    estimate_arl_with(config, config.detector, algorithm)
}

pub fn estimate_arl_with(
    config: &ExperimentConfig,
    detector: DetectorConfig,
    algorithm: Algorithm,
) -> Result<Vec<RunResult>> {
    let rows = summarize(
        config,
        detector,
        algorithm,
        config.thresholds_for(algorithm),
        ChangePoint::Never,
    )?;
    Ok(rows
        .into_iter()
        .map(|(threshold, est, kernel_calls, wall)| RunResult {
            algorithm,
            sigma: detector.sigma,
            threshold,
            arl: Some(est),
            add: None,
            kernel_calls,
            wall_time_secs: wall,
        })
        .collect())
}

/// Mean of `(T - tau)^+` with the change at `config.change_point`.
pub fn estimate_add(config: &ExperimentConfig, algorithm: Algorithm) -> Result<Vec<RunResult>> {
    estimate_add_with(config, config.detector, algorithm)
}

pub fn estimate_add_with(
    config: &ExperimentConfig,
    detector: DetectorConfig,
    algorithm: Algorithm,
) -> Result<Vec<RunResult>> {
    let change = match config.change_point {
        ChangePoint::Never => {
            return Err(Error::InvalidParameter(
                "delay estimation needs a finite change point".to_string(),
            ))
        }
        c => c,
    };
    let rows = summarize(config, detector, algorithm, config.thresholds_for(algorithm), change)?;
    Ok(rows
        .into_iter()
        .map(|(threshold, est, kernel_calls, wall)| RunResult {
            algorithm,
            sigma: detector.sigma,
            threshold,
            arl: None,
            add: Some(est),
            kernel_calls,
            wall_time_secs: wall,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub n: u64,
    pub algorithm: Algorithm,
    pub kernel_calls: u64,
    pub wall_time_secs: f64,
}

/// Kernel calls and elapsed time after `n` pre-change samples, for each `n`
/// in `n_grid` and each configured algorithm.
pub fn complexity_profile(config: &ExperimentConfig, n_grid: &[u64]) -> Result<Vec<ComplexityRow>> {
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "n_grid must be strictly increasing".to_string(),
        ));
    }
    let p = &config.kernel_p;
    let init = p.stationary()?;
    let mut rows = Vec::new();
    for &algorithm in &config.algorithms {
        let mut xs = ChainSampler::new(p, p, ChangePoint::Never, &init, stream_rng(config.seed, 0))?;
        let mut ys = ChainSampler::new(p, p, ChangePoint::Never, &init, stream_rng(config.seed, 1))?;
        let mut det = algorithm.build(config.detector.with_threshold(f64::MAX))?;
        let start = Instant::now();
        let mut seen = 0u64;
        for &n in n_grid {
            while seen < n {
                det.push(xs.next().expect("infinite"), ys.next().expect("infinite"))?;
                seen += 1;
            }
            rows.push(ComplexityRow {
                n,
                algorithm,
                kernel_calls: det.kernel_calls(),
                wall_time_secs: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// One point of the joint ADD-vs-ARL table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub sigma: f64,
    pub threshold: f64,
    pub arl: Estimate,
    pub add: Estimate,
}

/// ARL and ADD for every configured algorithm and sigma.
pub fn sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &sigma in &config.sweep_sigmas {
        let detector = config.detector.with_sigma(sigma);
        for &algorithm in &config.algorithms {
            let arl = estimate_arl_with(config, detector, algorithm)?;
            let add = estimate_add_with(config, detector, algorithm)?;
            for (a, d) in arl.into_iter().zip(add) {
                rows.push(SweepRow {
                    algorithm,
                    sigma,
                    threshold: a.threshold,
                    arl: a.arl.expect("arl row"),
                    add: d.add.expect("add row"),
                });
            }
        }
    }
    Ok(rows)
}

pub const SWEEP_CSV: &str = "add_vs_logarl.csv";
pub const COMPLEXITY_CSV: &str = "complexity.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const METADATA_JSON: &str = "metadata.json";

#[derive(Clone, Debug, Serialize)]
pub struct SweepMetadata {
    pub schema: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub trials: usize,
    pub max_samples: u64,
    /// ARL cells whose estimate is only a lower bound.
    pub censored_arl_cells: Vec<CensorFlag>,
    pub add_censor_rates: Vec<CensorFlag>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CensorFlag {
    pub algorithm: Algorithm,
    pub sigma: f64,
    pub threshold: f64,
    pub censor_rate: f64,
}

pub fn sweep_csv(config: &ExperimentConfig, rows: &[SweepRow]) -> String {
    let mut out = hash_comment(config);
    out.push_str("algorithm,sigma,c,arl,arl_se,add,add_se,censor_rate\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.algorithm, r.sigma, r.threshold, r.arl.mean, r.arl.se, r.add.mean, r.add.se, r.arl.censor_rate
        );
    }
    out
}

pub fn complexity_csv(config: &ExperimentConfig, rows: &[ComplexityRow]) -> String {
    let mut out = hash_comment(config);
    out.push_str("n,algorithm,kernel_calls\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n, r.algorithm, r.kernel_calls);
    }
    out
}

fn timing_csv(config: &ExperimentConfig, rows: &[ComplexityRow]) -> String {
    let mut out = hash_comment(config);
    out.push_str("n,algorithm,wall_time_s\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.n, r.algorithm, r.wall_time_secs);
    }
    out
}

fn hash_comment(config: &ExperimentConfig) -> String {
    format!("# config_sha256={} seed={}\n", config.hash(), config.seed)
}

/// Runs the full sweep plus the complexity profile and writes every
/// artifact into `out_dir`. Returns the written paths.
pub fn sweep_and_emit(config: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows = sweep(config)?;
    let complexity = complexity_profile(config, &config.complexity_grid)?;

    let mut written = Vec::new();
    let write = |written: &mut Vec<PathBuf>, name: &str, body: &str| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    write(&mut written, SWEEP_CSV, &sweep_csv(config, &rows))?;
    write(&mut written, COMPLEXITY_CSV, &complexity_csv(config, &complexity))?;
    write(&mut written, TIMING_CSV, &timing_csv(config, &complexity))?;
    for &sigma in &config.sweep_sigmas {
        let svg = plot::add_vs_logarl(config, &rows, sigma);
        write(&mut written, &format!("add_vs_logarl_sigma_{sigma:.2}.svg"), &svg)?;
    }
    write(&mut written, "complexity.svg", &plot::complexity(config, &complexity))?;

    let flags = |pick: fn(&SweepRow) -> &Estimate, only_flagged: bool| -> Vec<CensorFlag> {
        rows.iter()
            .filter(|r| !only_flagged || pick(r).lower_bound)
            .map(|r| CensorFlag {
                algorithm: r.algorithm,
                sigma: r.sigma,
                threshold: r.threshold,
                censor_rate: pick(r).censor_rate,
            })
            .collect()
    };
    let mut files: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    files.push(METADATA_JSON.to_string());
    let metadata = SweepMetadata {
        schema: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config.hash(),
        seed: config.seed,
        trials: config.trials,
        max_samples: config.max_samples,
        censored_arl_cells: flags(|r| &r.arl, true),
        add_censor_rates: flags(|r| &r.add, false),
        files,
    };
    let json = serde_json::to_string_pretty(&metadata)?;
    write(&mut written, METADATA_JSON, &json)?;
    Ok(written)
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (intercept, slope, r2)
}

/// Minimal SVG line plots.
mod plot {
    use std::fmt::Write as _;

    use super::{ComplexityRow, ExperimentConfig, SweepRow};
    use crate::detector::Algorithm;

    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

    struct Series {
        label: String,
        points: Vec<(f64, f64)>,
    }

    fn render(config: &ExperimentConfig, title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
        let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if all.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, "<!-- config_sha256={} seed={} -->", config.hash(), config.seed);
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>"#,
            W / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
            H - PAD,
            W - PAD,
            H - PAD,
            H - PAD
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>"#,
            W / 2.0,
            H - 15.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle" font-family="sans-serif" font-size="12">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        );
        for (label, v, x, y) in [("x0", x0, sx(x0), H - PAD + 16.0), ("x1", x1, sx(x1), H - PAD + 16.0)] {
            let _ = writeln!(
                svg,
                r#"<text id="{label}" x="{x:.1}" y="{y:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{v:.3}</text>"#
            );
        }
        for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{v:.1}</text>"#,
                PAD - 4.0
            );
        }
        for (i, s) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            );
            for &(x, y) in &s.points {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    sx(x),
                    sy(y)
                );
            }
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
                PAD + 10.0,
                PAD + 16.0 * i as f64,
                s.label
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    pub(super) fn add_vs_logarl(config: &ExperimentConfig, rows: &[SweepRow], sigma: f64) -> String {
        let series: Vec<Series> = [Algorithm::Oral, Algorithm::Ral]
            .into_iter()
            .map(|algorithm| Series {
                label: algorithm.to_string(),
                points: rows
                    .iter()
                    .filter(|r| r.algorithm == algorithm && r.sigma == sigma)
                    .map(|r| (r.arl.mean.ln(), r.add.mean))
                    .collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        render(
            config,
            &format!("ADD vs log ARL, sigma = {sigma}"),
            "log(ARL)",
            "ADD",
            &series,
        )
    }

    pub(super) fn complexity(config: &ExperimentConfig, rows: &[ComplexityRow]) -> String {
        let series: Vec<Series> = [Algorithm::Oral, Algorithm::Ral]
            .into_iter()
            .map(|algorithm| Series {
                label: algorithm.to_string(),
                points: rows
                    .iter()
                    .filter(|r| r.algorithm == algorithm)
                    .map(|r| (r.n as f64, r.kernel_calls as f64))
                    .collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        render(
            config,
            "Samples vs kernel evaluations",
            "samples",
            "kernel evaluations",
            &series,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            trials: 20,
            max_samples: 5_000,
            thresholds: vec![0.0, 0.5, 1.0],
            ral_thresholds: Some(vec![1.0, 2.0]),
            complexity_grid: vec![100, 200],
            ..ExperimentConfig::reference()
        }
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let json = r#"{
            "kernel_p": {"rows": [[0.2,0.7,0.1],[0.9,0.0,0.1],[0.2,0.8,0.0]]},
            "kernel_q": {"rows": [[0.5,0.5,0.0],[0.0,0.5,0.5],[0.2,0.3,0.5]]},
            "detector": {"m": 10, "sigma": 0.3, "threshold": 1.0},
            "thresholds": [1, 2, 4]
        }"#;
        let cfg = ExperimentConfig::from_json_str(json).unwrap();
        assert_eq!(cfg.schema, 1);
        assert_eq!(cfg.trials, 200);
        assert_eq!(cfg.max_samples, 100_000);
        assert_eq!(cfg.change_point, ChangePoint::At(1));
        assert_eq!(cfg.detector.kernel.bandwidth, 1.0);
        let back = ExperimentConfig::from_json_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small();
        cfg.thresholds = vec![1.0, 1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.trials = 0;
        assert!(matches!(cfg.validate(), Err(Error::NoTrials)));
        let mut cfg = small();
        cfg.schema = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_threshold_alarms_early() {
        let cfg = small();
        let arl = estimate_arl(&cfg, Algorithm::Oral).unwrap();
        let first = arl[0].arl.unwrap();
        assert!(first.mean < 100.0, "{first:?}");
        assert_eq!(first.censor_rate, 0.0);
    }

    #[test]
    fn arl_non_decreasing_in_threshold() {
        let cfg = small();
        let arl = estimate_arl(&cfg, Algorithm::Oral).unwrap();
        for w in arl.windows(2) {
            assert!(w[1].arl.unwrap().mean >= w[0].arl.unwrap().mean);
        }
    }

    #[test]
    fn trial_results_independent_of_schedule() {
        let cfg = small();
        let grid = cfg.thresholds.clone();
        let parallel = run_trials(&cfg, cfg.detector, Algorithm::Oral, &grid, ChangePoint::At(1)).unwrap();
        let serial: Vec<_> = (0..cfg.trials as u64)
            .rev()
            .map(|t| trial_crossings(&cfg, cfg.detector, Algorithm::Oral, &grid, ChangePoint::At(1), t).unwrap())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        assert_eq!(parallel, serial);
    }

    #[test]
    fn crossing_matches_dedicated_run() {
        use crate::detector::run_to_alarm;
        let cfg = small();
        let grid = [0.5, 1.0, 3.0];
        let cells = trial_crossings(&cfg, cfg.detector, Algorithm::Oral, &grid, ChangePoint::At(1), 4).unwrap();
        let init = cfg.kernel_p.stationary().unwrap();
        for (k, &c) in grid.iter().enumerate() {
            let xs = ChainSampler::new(
                &cfg.kernel_p,
                &cfg.kernel_q,
                ChangePoint::At(1),
                &init,
                stream_rng(cfg.seed, 8),
            )
            .unwrap();
            let ys = ChainSampler::new(
                &cfg.kernel_p,
                &cfg.kernel_p,
                ChangePoint::Never,
                &init,
                stream_rng(cfg.seed, 9),
            )
            .unwrap();
            let report =
                run_to_alarm(cfg.detector.with_threshold(c), Algorithm::Oral, xs, ys, cfg.max_samples).unwrap();
            assert_eq!(cells[k].alarm, Some(report.outcome.stopping_time()));
            assert_eq!(cells[k].kernel_calls, report.kernel_calls);
        }
    }

    #[test]
    fn add_needs_finite_change_point() {
        let mut cfg = small();
        cfg.change_point = ChangePoint::Never;
        assert!(estimate_add(&cfg, Algorithm::Oral).is_err());
    }

    #[test]
    fn degenerate_config_add_tracks_arl() {
        // with P = Q there is no change, so the delay from tau = 1 is the run length minus one
        let mut cfg = small();
        cfg.kernel_q = cfg.kernel_p.clone();
        let arl = estimate_arl(&cfg, Algorithm::Oral).unwrap();
        let add = estimate_add(&cfg, Algorithm::Oral).unwrap();
        for (a, d) in arl.iter().zip(&add) {
            assert!((a.arl.unwrap().mean - 1.0 - d.add.unwrap().mean).abs() < 1e-9);
        }
    }

    #[test]
    fn complexity_counts_match_closed_form() {
        let cfg = small();
        let m = cfg.detector.m as u64;
        let per = 3 * (m - 1) * (m - 1);
        let rows = complexity_profile(&cfg, &[m, 10 * m, 100 * m]).unwrap();
        for r in &rows {
            match r.algorithm {
                Algorithm::Oral => assert_eq!(r.kernel_calls, per * (r.n / m)),
                Algorithm::Ral => assert_eq!(r.kernel_calls, per * (r.n - m + 1)),
            }
        }
        // n = m: at most one window of work each
        assert!(rows.iter().filter(|r| r.n == m).all(|r| r.kernel_calls <= per));
        assert!(complexity_profile(&cfg, &[20, 10]).is_err());
    }

    #[test]
    fn estimate_standard_error() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert_eq!(e.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((e.se - sd / 2.0).abs() < 1e-15);
        assert_eq!(e.censor_rate, 0.25);
        assert!(e.lower_bound);
        assert!(Estimate::from_samples(&[], 0).is_err());
    }

    #[test]
    fn linear_fit_exact_line() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn crossings_monotone_in_threshold(trial in 0u64..1000, mut grid in prop::collection::vec(0.0f64..3.0, 1..6)) {
                grid.sort_by(f64::total_cmp);
                grid.dedup();
                let cfg = ExperimentConfig { max_samples: 3_000, ..small() };
                for algorithm in [Algorithm::Oral, Algorithm::Ral] {
                    let cells = trial_crossings(&cfg, cfg.detector, algorithm, &grid, ChangePoint::Never, trial).unwrap();
                    for w in cells.windows(2) {
                        let t0 = w[0].alarm.unwrap_or(u64::MAX);
                        let t1 = w[1].alarm.unwrap_or(u64::MAX);
                        prop_assert!(t0 <= t1);
                    }
                }
            }
        }
    }
}
