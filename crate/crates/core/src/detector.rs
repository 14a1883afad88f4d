// SPDX-License-Identifier: MIT OR Apache-2.0

//! Kernel-MMD CuSum detectors fed one `(x, y)` sample at a time.
//!
//! [`Oral`] scores non-overlapping blocks of `m` samples: each completed
//! block contributes `S_t = D(block) - sigma` to the CuSum statistic
//! `w <- max(0, w + S_t)`, and the buffers are emptied. [`Ral`] is the
//! sliding-window baseline that rescores the latest `m` samples after every
//! new sample.
//!
//! `x` is the monitored stream; `y` is a reference stream drawn from the
//! pre-change model and consumed in lockstep.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, StatePair};
use crate::mmd::block_mmd_counted;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Raw samples per block.
    pub m: usize,
    /// Drift offset subtracted from every block score.
    pub sigma: f64,
    /// Alarm threshold `c`.
    pub threshold: f64,
    #[serde(default)]
    pub kernel: KernelSpec,
}

impl DetectorConfig {
    pub fn new(m: usize, sigma: f64, threshold: f64, kernel: KernelSpec) -> Result<Self> {
        let config = DetectorConfig {
            m,
            sigma,
            threshold,
            kernel,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(Error::InvalidParameter(format!(
                "block size m must be >= 3, got {}",
                self.m
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        // c = 0 is allowed: it alarms on the first positive score
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be finite and >= 0, got {}",
                self.threshold
            )));
        }
        self.kernel.validate()
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

/// `max(0, w + s)`.
#[inline]
pub fn cusum_update(w: f64, s: f64) -> f64 {
    (w + s).max(0.0)
}

/// What a single push produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    None,
    /// A score was computed and the statistic updated without crossing `c`.
    BlockCompleted {
        block: u64,
        score: f64,
        statistic: f64,
    },
    /// The statistic exceeded `c`; `sample_index` is the raw-sample count.
    Alarm {
        sample_index: u64,
        block: u64,
        score: f64,
        statistic: f64,
    },
}

impl Event {
    pub fn is_alarm(&self) -> bool {
        matches!(self, Event::Alarm { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Non-overlapping blocks.
    Oral,
    /// Overlapping (sliding) blocks.
    Ral,
}

impl Algorithm {
    pub fn build(self, config: DetectorConfig) -> Result<Box<dyn SequentialDetector + Send>> {
        Ok(match self {
            Algorithm::Oral => Box::new(Oral::new(config)?),
            Algorithm::Ral => Box::new(Ral::new(config)?),
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Oral => "ORAL",
            Algorithm::Ral => "RAL",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oral" => Ok(Algorithm::Oral),
            "ral" => Ok(Algorithm::Ral),
            other => Err(Error::InvalidParameter(format!("unknown algorithm {other:?}"))),
        }
    }
}

pub trait SequentialDetector {
    fn push(&mut self, x: f64, y: f64) -> Result<Event>;
    /// Current CuSum statistic `w`.
    fn statistic(&self) -> f64;
    fn samples_seen(&self) -> u64;
    fn alarmed_at(&self) -> Option<u64>;
    /// Kernel evaluations performed so far.
    fn kernel_calls(&self) -> u64;
    fn algorithm(&self) -> Algorithm;
}

/// Resumable state of the block detector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub w: f64,
    pub buffer_x: Vec<f64>,
    pub buffer_y: Vec<f64>,
    /// Raw samples consumed.
    pub n: u64,
    /// Completed blocks.
    pub t: u64,
    pub alarmed_at: Option<u64>,
}

/// Non-overlapping-block kernel CuSum detector.
#[derive(Clone, Debug)]
pub struct Oral {
    config: DetectorConfig,
    state: DetectorState,
    x_pairs: Vec<StatePair>,
    y_pairs: Vec<StatePair>,
    calls: u64,
}

impl Oral {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        Self::resume(config, DetectorState::default())
    }

    /// Continues from a saved state.
    pub fn resume(config: DetectorConfig, mut state: DetectorState) -> Result<Self> {
        config.validate()?;
        if !(state.w >= 0.0 && state.w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "statistic must be >= 0, got {}",
                state.w
            )));
        }
        if state.buffer_x.len() != state.buffer_y.len() || state.buffer_x.len() >= config.m {
            return Err(Error::InvalidParameter(format!(
                "buffers must have equal length below m = {}, got {} and {}",
                config.m,
                state.buffer_x.len(),
                state.buffer_y.len()
            )));
        }
        state.buffer_x.reserve(config.m);
        state.buffer_y.reserve(config.m);
        Ok(Oral {
            config,
            state,
            x_pairs: Vec::with_capacity(config.m - 1),
            y_pairs: Vec::with_capacity(config.m - 1),
            calls: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }

    fn fill_pairs(raw: &[f64], pairs: &mut Vec<StatePair>) {
        pairs.clear();
        pairs.extend(raw.windows(2).map(|w| StatePair(w[0], w[1])));
    }
}

impl SequentialDetector for Oral {
    fn push(&mut self, x: f64, y: f64) -> Result<Event> {
        if let Some(at) = self.state.alarmed_at {
            return Err(Error::AlreadyAlarmed(at));
        }
        let st = &mut self.state;
        st.buffer_x.push(x);
        st.buffer_y.push(y);
        st.n += 1;
        if st.buffer_x.len() < self.config.m {
            return Ok(Event::None);
        }
        Self::fill_pairs(&st.buffer_x, &mut self.x_pairs);
        Self::fill_pairs(&st.buffer_y, &mut self.y_pairs);
        st.buffer_x.clear();
        st.buffer_y.clear();
        let d = block_mmd_counted(&self.config.kernel, &self.x_pairs, &self.y_pairs, &mut self.calls);
        let score = d - self.config.sigma;
        st.w = cusum_update(st.w, score);
        let block = st.t;
        st.t += 1;
        if st.w > self.config.threshold {
            st.alarmed_at = Some(st.n);
            Ok(Event::Alarm {
                sample_index: st.n,
                block,
                score,
                statistic: st.w,
            })
        } else {
            Ok(Event::BlockCompleted {
                block,
                score,
                statistic: st.w,
            })
        }
    }

    fn statistic(&self) -> f64 {
        self.state.w
    }

    fn samples_seen(&self) -> u64 {
        self.state.n
    }

    fn alarmed_at(&self) -> Option<u64> {
        self.state.alarmed_at
    }

    fn kernel_calls(&self) -> u64 {
        self.calls
    }

    fn algorithm(&self) -> Algorithm {
        Algorithm::Oral
    }
}

/// Sliding-window baseline: after an `m`-sample warm-up every new sample
/// rescores the latest `m` samples of each stream.
#[derive(Clone, Debug)]
pub struct Ral {
    config: DetectorConfig,
    w: f64,
    n: u64,
    scored: u64,
    alarmed_at: Option<u64>,
    last: Option<(f64, f64)>,
    x_pairs: VecDeque<StatePair>,
    y_pairs: VecDeque<StatePair>,
    calls: u64,
}

impl Ral {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Ral {
            config,
            w: 0.0,
            n: 0,
            scored: 0,
            alarmed_at: None,
            last: None,
            x_pairs: VecDeque::with_capacity(config.m),
            y_pairs: VecDeque::with_capacity(config.m),
            calls: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }
}

impl SequentialDetector for Ral {
    fn push(&mut self, x: f64, y: f64) -> Result<Event> {
        if let Some(at) = self.alarmed_at {
            return Err(Error::AlreadyAlarmed(at));
        }
        self.n += 1;
        let window = self.config.m - 1;
        if let Some((px, py)) = self.last.replace((x, y)) {
            if self.x_pairs.len() == window {
                self.x_pairs.pop_front();
                self.y_pairs.pop_front();
            }
            self.x_pairs.push_back(StatePair(px, x));
            self.y_pairs.push_back(StatePair(py, y));
        }
        if self.x_pairs.len() < window {
            return Ok(Event::None);
        }
        let d = block_mmd_counted(
            &self.config.kernel,
            self.x_pairs.make_contiguous(),
            self.y_pairs.make_contiguous(),
            &mut self.calls,
        );
        let score = d - self.config.sigma;
        self.w = cusum_update(self.w, score);
        let block = self.scored;
        self.scored += 1;
        if self.w > self.config.threshold {
            self.alarmed_at = Some(self.n);
            Ok(Event::Alarm {
                sample_index: self.n,
                block,
                score,
                statistic: self.w,
            })
        } else {
            Ok(Event::BlockCompleted {
                block,
                score,
                statistic: self.w,
            })
        }
    }

    fn statistic(&self) -> f64 {
        self.w
    }

    fn samples_seen(&self) -> u64 {
        self.n
    }

    fn alarmed_at(&self) -> Option<u64> {
        self.alarmed_at
    }

    fn kernel_calls(&self) -> u64 {
        self.calls
    }

    fn algorithm(&self) -> Algorithm {
        Algorithm::Ral
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RunOutcome {
    Alarm { sample_index: u64 },
    Censored { max_samples: u64 },
}

impl RunOutcome {
    /// Alarm index, or the cap for censored runs.
    pub fn stopping_time(&self) -> u64 {
        match *self {
            RunOutcome::Alarm { sample_index } => sample_index,
            RunOutcome::Censored { max_samples } => max_samples,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, RunOutcome::Censored { .. })
    }
}

/// Feeds `detector` until it alarms or `max_samples` pairs were consumed.
pub fn drive<D, X, Y>(detector: &mut D, mut xs: X, mut ys: Y, max_samples: u64) -> Result<RunOutcome>
where
    D: SequentialDetector + ?Sized,
    X: Iterator<Item = f64>,
    Y: Iterator<Item = f64>,
{
    let start = detector.samples_seen();
    for consumed in 0..max_samples {
        let x = xs.next().ok_or(Error::StreamExhausted {
            stream: "x",
            consumed,
            needed: max_samples,
        })?;
        let y = ys.next().ok_or(Error::StreamExhausted {
            stream: "y",
            consumed,
            needed: max_samples,
        })?;
        if let Event::Alarm { sample_index, .. } = detector.push(x, y)? {
            return Ok(RunOutcome::Alarm { sample_index });
        }
    }
    debug_assert_eq!(detector.samples_seen() - start, max_samples);
    Ok(RunOutcome::Censored { max_samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub kernel_calls: u64,
}

/// Runs a fresh detector of kind `algorithm` to alarm or censoring.
pub fn run_to_alarm<X, Y>(
    config: DetectorConfig,
    algorithm: Algorithm,
    xs: X,
    ys: Y,
    max_samples: u64,
) -> Result<RunReport>
where
    X: Iterator<Item = f64>,
    Y: Iterator<Item = f64>,
{
    let mut detector = algorithm.build(config)?;
    let outcome = drive(detector.as_mut(), xs, ys, max_samples)?;
    Ok(RunReport {
        outcome,
        kernel_calls: detector.kernel_calls(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::reference::{chain_p, chain_q};
    use crate::markov::{stream_rng, ChainSampler, ChangePoint};
    use proptest::prelude::*;

    fn config(m: usize, sigma: f64, c: f64) -> DetectorConfig {
        DetectorConfig::new(m, sigma, c, KernelSpec::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(2, 0.3, 1.0, KernelSpec::default()).is_err());
        assert!(DetectorConfig::new(10, 0.0, 1.0, KernelSpec::default()).is_err());
        assert!(DetectorConfig::new(10, 0.3, -1.0, KernelSpec::default()).is_err());
        assert!(DetectorConfig::new(10, 0.3, 0.0, KernelSpec::default()).is_ok());
    }

    #[test]
    fn buffers_fill_before_first_block() {
        let mut d = Oral::new(config(5, 0.3, 1.0)).unwrap();
        for i in 0..4 {
            assert_eq!(d.push(i as f64, 0.0).unwrap(), Event::None);
            assert_eq!(d.state().buffer_x.len(), i + 1);
            assert_eq!(d.state().buffer_y.len(), i + 1);
        }
        assert!(matches!(
            d.push(0.0, 0.0).unwrap(),
            Event::BlockCompleted { block: 0, .. }
        ));
        assert!(d.state().buffer_x.is_empty());
        assert_eq!(d.state().t, 1);
    }

    #[test]
    fn identical_blocks_score_minus_sigma() {
        let mut d = Oral::new(config(4, 0.3, 1.0)).unwrap();
        let mut last = Event::None;
        for v in [0.0, 1.0, 2.0, 1.0] {
            last = d.push(v, v).unwrap();
        }
        match last {
            Event::BlockCompleted { score, statistic, .. } => {
                assert!((score + 0.3).abs() < 1e-15);
                assert_eq!(statistic, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn threshold_crossing_alarms_at_block_boundary() {
        // the block [0,0,0] vs [1,1,1] scores D = sqrt(2 - 2 e^-2) ~ 1.315
        let d_block = (2.0 - 2.0 * (-2.0f64).exp()).sqrt();
        let sigma = d_block - 0.2;
        let cfg = config(3, sigma, 1.0);
        let state = DetectorState {
            w: 0.9,
            n: 30,
            t: 10,
            ..Default::default()
        };
        let mut d = Oral::resume(cfg, state).unwrap();
        d.push(0.0, 1.0).unwrap();
        d.push(0.0, 1.0).unwrap();
        match d.push(0.0, 1.0).unwrap() {
            Event::Alarm {
                sample_index,
                statistic,
                score,
                block,
            } => {
                assert_eq!(sample_index, 33);
                assert_eq!(block, 10);
                assert!((score - 0.2).abs() < 1e-12);
                assert!((statistic - 1.1).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(d.alarmed_at(), Some(33));
        assert!(matches!(d.push(0.0, 0.0), Err(Error::AlreadyAlarmed(33))));
        assert_eq!(d.alarmed_at(), Some(33));
    }

    #[test]
    fn resume_rejects_broken_state() {
        let cfg = config(3, 0.3, 1.0);
        let neg = DetectorState {
            w: -1.0,
            ..Default::default()
        };
        assert!(Oral::resume(cfg, neg).is_err());
        let uneven = DetectorState {
            buffer_x: vec![1.0],
            ..Default::default()
        };
        assert!(Oral::resume(cfg, uneven).is_err());
        let full = DetectorState {
            buffer_x: vec![1.0; 3],
            buffer_y: vec![1.0; 3],
            ..Default::default()
        };
        assert!(Oral::resume(cfg, full).is_err());
    }

    #[test]
    fn zero_threshold_alarms_on_first_positive_score() {
        let cfg = config(4, 0.1, 0.0);
        let xs = [0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 2.0];
        let ys = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let report = run_to_alarm(cfg, Algorithm::Oral, xs.into_iter(), ys.into_iter(), 8).unwrap();
        assert_eq!(report.outcome, RunOutcome::Alarm { sample_index: 8 });
    }

    #[test]
    fn stream_exhaustion_is_an_error() {
        let cfg = config(4, 0.3, 100.0);
        let err = run_to_alarm(cfg, Algorithm::Oral, [0.0; 5].into_iter(), [0.0; 10].into_iter(), 10);
        assert!(matches!(
            err,
            Err(Error::StreamExhausted {
                stream: "x",
                consumed: 5,
                ..
            })
        ));
    }

    #[test]
    fn ral_identical_windows_never_alarm() {
        let cfg = config(5, 0.2, 0.01);
        let mut d = Ral::new(cfg).unwrap();
        let path = [0.0, 1.0, 2.0, 0.0, 1.0, 1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 2.0];
        for (i, &v) in path.iter().cycle().take(500).enumerate() {
            let e = d.push(v, v).unwrap();
            if i + 1 < 5 {
                assert_eq!(e, Event::None);
            } else {
                match e {
                    Event::BlockCompleted { score, statistic, .. } => {
                        assert!((score + 0.2).abs() < 1e-12);
                        assert_eq!(statistic, 0.0);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }

    #[test]
    fn ral_window_matches_explicit_block() {
        use crate::mmd::{block_mmd, BlockPair};
        let cfg = config(4, 0.1, 1e9);
        let xs = [0.0, 2.0, 1.0, 1.0, 0.0, 2.0, 2.0];
        let ys = [1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 1.0];
        let mut d = Ral::new(cfg).unwrap();
        for n in 0..xs.len() {
            let e = d.push(xs[n], ys[n]).unwrap();
            if n + 1 >= 4 {
                let block = BlockPair::from_samples(&xs[n + 1 - 4..=n], &ys[n + 1 - 4..=n]).unwrap();
                let expected = block_mmd(&cfg.kernel, &block) - cfg.sigma;
                match e {
                    Event::BlockCompleted { score, .. } => assert!((score - expected).abs() < 1e-14),
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }

    #[test]
    fn kernel_call_budgets() {
        let m = 10usize;
        let cfg = config(m, 0.3, 1e12);
        let p = chain_p();
        let init = p.stationary().unwrap();
        for n in [m as u64, 37, 100, 1000] {
            let xs = ChainSampler::new(&p, &p, ChangePoint::Never, &init, stream_rng(1, 0)).unwrap();
            let ys = ChainSampler::new(&p, &p, ChangePoint::Never, &init, stream_rng(1, 1)).unwrap();
            let oral = run_to_alarm(cfg, Algorithm::Oral, xs, ys, n).unwrap();
            let per_block = 3 * ((m - 1) * (m - 1)) as u64;
            assert_eq!(oral.kernel_calls, per_block * (n / m as u64));
            assert!(oral.kernel_calls <= per_block * n.div_ceil(m as u64));

            let xs = ChainSampler::new(&p, &p, ChangePoint::Never, &init, stream_rng(1, 0)).unwrap();
            let ys = ChainSampler::new(&p, &p, ChangePoint::Never, &init, stream_rng(1, 1)).unwrap();
            let ral = run_to_alarm(cfg, Algorithm::Ral, xs, ys, n).unwrap();
            assert_eq!(ral.kernel_calls, per_block * (n - m as u64 + 1));
            if n > 2 * m as u64 {
                assert!(ral.kernel_calls >= (n - 2 * m as u64) * ((m - 1) * (m - 1)) as u64);
            }
        }
    }

    #[test]
    fn determinism_and_monotone_in_threshold() {
        let p = chain_p();
        let q = chain_q();
        let init = p.stationary().unwrap();
        let run = |c: f64, algorithm: Algorithm| {
            let xs = ChainSampler::new(&p, &q, ChangePoint::At(200), &init, stream_rng(77, 0)).unwrap();
            let ys = ChainSampler::new(&p, &p, ChangePoint::Never, &init, stream_rng(77, 1)).unwrap();
            run_to_alarm(config(10, 0.3, c), algorithm, xs, ys, 100_000)
                .unwrap()
                .outcome
                .stopping_time()
        };
        for algorithm in [Algorithm::Oral, Algorithm::Ral] {
            assert_eq!(run(2.0, algorithm), run(2.0, algorithm));
            let mut prev = 0;
            for c in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let t = run(c, algorithm);
                assert!(t >= prev, "{algorithm}: c={c} gave {t} < {prev}");
                prev = t;
            }
        }
        assert_eq!(run(3.0, Algorithm::Oral) % 10, 0);
    }

    /// Oracle: `max_{0<=i<=t} sum_{j=i}^t S_j`, floored at 0 (empty sum).
    fn brute_cusum(scores: &[f64]) -> f64 {
        let t = scores.len();
        (0..t).map(|i| scores[i..].iter().sum::<f64>()).fold(0.0, f64::max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn recursion_matches_batch_definition(scores in prop::collection::vec(-2.0f64..2.0, 1..50)) {
            let mut w = 0.0;
            for (t, &s) in scores.iter().enumerate() {
                w = cusum_update(w, s);
                let batch = brute_cusum(&scores[..=t]);
                prop_assert!((w - batch).abs() < 1e-9, "t={} w={} batch={}", t, w, batch);
                prop_assert!(w >= 0.0);
            }
        }
    }

    #[test]
    fn algorithm_parsing() {
        assert_eq!("ral".parse::<Algorithm>().unwrap(), Algorithm::Ral);
        assert_eq!("ORAL".parse::<Algorithm>().unwrap(), Algorithm::Oral);
        assert!("cusum".parse::<Algorithm>().is_err());
    }
}
