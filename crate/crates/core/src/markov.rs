// SPDX-License-Identifier: MIT OR Apache-2.0

//! Finite-state Markov chains: validation, sampling, stationary laws,
//! uniform-ergodicity certificates and the second-order pair measure.
//!
//! Every population quantity used by the oracles (stationary law, pair
//! measure, total-variation envelopes) is computed exactly by matrix
//! algebra. The sampler is the only randomized piece.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernel::StatePair;

/// Tolerance on each row sum.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Smallest admissible contraction rate; rank-one chains collapse to this.
pub const LAMBDA_FLOOR: f64 = 1e-6;
/// Total-variation distances below this are treated as floating-point
/// noise when fitting and checking `TV <= R lambda^t`.
pub const TV_NOISE: f64 = 1e-12;
/// Relative slack when checking a profile against an envelope.
pub const ENVELOPE_REL_TOL: f64 = 1e-9;

/// Row-stochastic transition matrix over a finite set of numeric states.
#[derive(Clone, PartialEq)]
pub struct TransitionKernel {
    rows: DMatrix<f64>,
    states: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct KernelJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<Vec<f64>>,
    rows: Vec<Vec<f64>>,
}

impl fmt::Debug for TransitionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransitionKernel")
            .field("states", &self.states)
            .field("rows", &self.rows_vec())
            .finish()
    }
}

impl TransitionKernel {
    /// Builds a kernel with states `0, 1, ..., n-1`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let states = (0..rows.len()).map(|i| i as f64).collect();
        Self::new(rows, states)
    }

    pub fn new(rows: Vec<Vec<f64>>, states: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::InvalidKernel(format!("need at least 2 states, got {n}")));
        }
        if states.len() != n {
            return Err(Error::InvalidKernel(format!(
                "{} state values for {n} rows",
                states.len()
            )));
        }
        if let Some(s) = states.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidKernel(format!("non-finite state value {s}")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidKernel(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidKernel(format!("row {i} has entry {p} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidKernel(format!("row {i} sums to {sum}, not 1")));
            }
        }
        let cumulative = rows
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let matrix = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Ok(TransitionKernel {
            rows: matrix,
            states,
            cumulative,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: KernelJson = serde_json::from_str(s)?;
        Self::from_json(raw)
    }

    fn from_json(raw: KernelJson) -> Result<Self> {
        match raw.states {
            Some(states) => Self::new(raw.rows, states),
            None => Self::from_rows(raw.rows),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("kernel serializes")
    }

    fn to_json(&self) -> KernelJson {
        KernelJson {
            states: Some(self.states.clone()),
            rows: self.rows_vec(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.rows[(from, to)]
    }

    pub fn rows_vec(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        (0..n).map(|i| (0..n).map(|j| self.rows[(i, j)]).collect()).collect()
    }

    pub fn same_state_space(&self, other: &TransitionKernel) -> bool {
        self.states == other.states
    }

    pub(crate) fn check_same_state_space(&self, other: &TransitionKernel) -> Result<()> {
        if self.same_state_space(other) {
            Ok(())
        } else {
            Err(Error::StateSpaceMismatch(format!(
                "{:?} vs {:?}",
                self.states, other.states
            )))
        }
    }

    /// Index of the state whose value is `value`, if any.
    pub fn state_index(&self, value: f64) -> Option<usize> {
        self.states.iter().position(|&s| s == value)
    }

    #[inline]
    fn step<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let cum = &self.cumulative[from];
        cum.iter().position(|&c| u < c).unwrap_or_else(|| {
            // u landed in the rounding gap above the last partial sum
            (0..cum.len())
                .rev()
                .find(|&j| self.rows[(from, j)] > 0.0)
                .expect("row has positive mass")
        })
    }

    /// Primitive (irreducible and aperiodic) iff some power, and then every
    /// power from `(n-1)^2 + 1` on, is entrywise positive.
    pub fn is_primitive(&self) -> bool {
        let n = self.n_states();
        let wielandt = (n - 1) * (n - 1) + 1;
        let mut reach: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| self.rows[(i, j)] > 0.0).collect())
            .collect();
        let mut power = 1usize;
        while power < wielandt {
            let mut next = vec![vec![false; n]; n];
            for (row, out) in reach.iter().zip(next.iter_mut()) {
                for (k, _) in row.iter().enumerate().filter(|(_, &r)| r) {
                    for (dst, &src) in out.iter_mut().zip(&reach[k]) {
                        *dst |= src;
                    }
                }
            }
            reach = next;
            power *= 2;
        }
        reach.iter().all(|row| row.iter().all(|&b| b))
    }

    /// The unique invariant distribution `pi = pi P`.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        if !self.is_primitive() {
            return Err(Error::NoUniqueStationary("chain is reducible or periodic".to_string()));
        }
        let n = self.n_states();
        // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
        let mut a = self.rows.transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = nalgebra::DVector::zeros(n);
        b[n - 1] = 1.0;
        let lu = a.clone().lu();
        let mut pi = lu
            .solve(&b)
            .ok_or_else(|| Error::NoUniqueStationary("singular stationary system".to_string()))?;
        // one round of iterative refinement
        let residual = &b - &a * &pi;
        if let Some(correction) = lu.solve(&residual) {
            pi += correction;
        }
        let mut pi: Vec<f64> = pi.iter().map(|&p| p.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        Ok(pi)
    }

    /// `max_j |(pi P)_j - pi_j|`.
    pub fn stationary_residual(&self, pi: &[f64]) -> f64 {
        let n = self.n_states();
        (0..n)
            .map(|j| {
                let v: f64 = (0..n).map(|i| pi[i] * self.rows[(i, j)]).sum();
                (v - pi[j]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Second-largest eigenvalue modulus.
    pub fn slem(&self) -> f64 {
        let eig = self.rows.complex_eigenvalues();
        let mut moduli: Vec<(f64, f64)> = eig.iter().map(|z| ((z.re - 1.0).hypot(z.im), z.norm())).collect();
        // drop the Perron eigenvalue (the one closest to 1)
        moduli.sort_by(|a, b| a.0.total_cmp(&b.0));
        moduli[1..].iter().map(|&(_, m)| m).fold(0.0, f64::max)
    }

    /// Certified `(R, lambda)` with `TV(row(P^t, z), pi) <= R lambda^t` for
    /// every state `z` and every `1 <= t <= horizon`.
    pub fn ergodicity_constants(&self, horizon: usize) -> Result<ErgodicityParams> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".to_string()));
        }
        let pi = self.stationary()?;
        let slem = self.slem();
        if slem >= 1.0 - 1e-12 {
            return Err(Error::NotErgodic(slem));
        }
        let lambda = slem.max(LAMBDA_FLOOR);
        let profile = max_tv_profile(&self.rows, &pi, horizon);
        let r = fit_envelope(&profile, lambda);
        Ok(ErgodicityParams { r, lambda })
    }

    /// Exact pair measure `F(a, b) = pi(a) P(a, b)`.
    pub fn pair_measure(&self) -> Result<PairMeasure> {
        let pi = self.stationary()?;
        let n = self.n_states();
        let weights = DMatrix::from_fn(n, n, |a, b| pi[a] * self.rows[(a, b)]);
        Ok(PairMeasure {
            states: self.states.clone(),
            weights,
        })
    }

    /// Transition matrix of the pair chain `(Z_i, Z_{i+1})` on `n^2` states;
    /// pair `(a, b)` has index `a * n + b`.
    pub fn pair_chain_matrix(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut m = DMatrix::zeros(n * n, n * n);
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    m[(a * n + b, b * n + c)] = self.rows[(b, c)];
                }
            }
        }
        m
    }
}

impl Serialize for TransitionKernel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TransitionKernel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = KernelJson::deserialize(deserializer)?;
        TransitionKernel::from_json(raw).map_err(serde::de::Error::custom)
    }
}

/// For each `t = 1..=horizon`, the largest total-variation distance between
/// a row of `matrix^t` and `stationary`.
pub fn max_tv_profile(matrix: &DMatrix<f64>, stationary: &[f64], horizon: usize) -> Vec<f64> {
    let n = matrix.nrows();
    let mut power = matrix.clone();
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        if t > 1 {
            power = &power * matrix;
        }
        let worst = (0..n)
            .map(|z| 0.5 * (0..n).map(|j| (power[(z, j)] - stationary[j]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        out.push(worst);
    }
    out
}

fn fit_envelope(profile: &[f64], lambda: f64) -> f64 {
    let mut r: f64 = 1.0;
    for (i, &tv) in profile.iter().enumerate() {
        if tv <= TV_NOISE {
            continue;
        }
        let scale = lambda.powi(i as i32 + 1);
        r = r.max(tv / scale);
    }
    r
}

/// Uniform-ergodicity constants: `sup_A |P(Z_{t+i} in A | Z_i = z) - pi(A)| <= R lambda^t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityParams {
    pub r: f64,
    pub lambda: f64,
}

impl ErgodicityParams {
    pub fn new(r: f64, lambda: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("R must be finite and >= 0, got {r}")));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::NotErgodic(lambda));
        }
        Ok(ErgodicityParams { r, lambda })
    }

    /// Constants inherited by the pair chain: one step is spent moving the
    /// conditioning from `Z_i` to `Z_{i+1}`, so `R' = R / lambda`.
    pub fn second_order(&self) -> ErgodicityParams {
        ErgodicityParams {
            r: self.r / self.lambda,
            lambda: self.lambda,
        }
    }

    pub fn envelope(&self, t: usize) -> f64 {
        self.r * self.lambda.powi(t as i32)
    }

    /// Whether `profile[t-1] <= R lambda^t` for every listed horizon.
    pub fn certifies(&self, profile: &[f64]) -> bool {
        profile
            .iter()
            .enumerate()
            .all(|(i, &tv)| tv <= self.envelope(i + 1) * (1.0 + ENVELOPE_REL_TOL) + TV_NOISE)
    }
}

/// Stationary law of the pair chain over `X x X`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMeasure {
    pub states: Vec<f64>,
    /// `weights[(a, b)]` is the probability of the pair `(states[a], states[b])`.
    pub weights: DMatrix<f64>,
}

impl PairMeasure {
    pub fn row_marginal(&self) -> Vec<f64> {
        self.weights.row_iter().map(|r| r.sum()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.sum()
    }

    /// Atoms with positive weight.
    pub fn atoms(&self) -> Vec<(StatePair, f64)> {
        let n = self.states.len();
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let w = self.weights[(a, b)];
                if w > 0.0 {
                    out.push((StatePair(self.states[a], self.states[b]), w));
                }
            }
        }
        out
    }

    /// Flattened weights in pair-chain index order `a * n + b`.
    pub fn flat(&self) -> Vec<f64> {
        let n = self.states.len();
        (0..n * n).map(|k| self.weights[(k / n, k % n)]).collect()
    }
}

/// When the transition kernel switches from pre- to post-change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChangePoint {
    /// Samples `1..tau-1` follow the pre-change kernel, samples `>= tau`
    /// the post-change one.
    At(u64),
    #[default]
    Never,
}

impl ChangePoint {
    pub fn is_post_change(&self, sample_index: u64) -> bool {
        match *self {
            ChangePoint::At(tau) => sample_index >= tau,
            ChangePoint::Never => false,
        }
    }

    pub fn index(&self) -> Option<u64> {
        match *self {
            ChangePoint::At(tau) => Some(tau),
            ChangePoint::Never => None,
        }
    }
}

impl Serialize for ChangePoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ChangePoint::At(tau) => serializer.serialize_u64(*tau),
            ChangePoint::Never => serializer.serialize_str("never"),
        }
    }
}

impl<'de> Deserialize<'de> for ChangePoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u64),
            Name(String),
            Null(()),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Index(tau) => Ok(ChangePoint::At(tau)),
            Raw::Name(s) => match s.as_str() {
                "never" | "infinity" | "inf" => Ok(ChangePoint::Never),
                "worst-case-start" => Ok(ChangePoint::At(1)),
                other => Err(serde::de::Error::custom(format!(
                    "unknown change point {other:?}; expected an integer, \"never\" or \"worst-case-start\""
                ))),
            },
            Raw::Null(()) => Ok(ChangePoint::Never),
        }
    }
}

/// Seeded generator for stream `stream` of experiment `seed`.
///
/// ChaCha8 with the 64-bit stream id as the split rule: distinct streams of
/// one seed are independent, and each is a pure function of `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Infinite sample path from a chain whose kernel may switch once.
pub struct ChainSampler<'a, R> {
    pre: &'a TransitionKernel,
    post: &'a TransitionKernel,
    change: ChangePoint,
    initial: Vec<f64>,
    rng: R,
    current: Option<usize>,
    emitted: u64,
}

impl<'a, R: Rng> ChainSampler<'a, R> {
    pub fn new(
        pre: &'a TransitionKernel,
        post: &'a TransitionKernel,
        change: ChangePoint,
        initial: &[f64],
        rng: R,
    ) -> Result<Self> {
        pre.check_same_state_space(post)?;
        if initial.len() != pre.n_states() {
            return Err(Error::StateSpaceMismatch(format!(
                "initial distribution has {} entries for {} states",
                initial.len(),
                pre.n_states()
            )));
        }
        let total: f64 = initial.iter().sum();
        if initial.iter().any(|p| *p < 0.0 || !p.is_finite()) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "initial distribution must be non-negative and sum to 1, got {initial:?}"
            )));
        }
        let initial = initial
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(ChainSampler {
            pre,
            post,
            change,
            initial,
            rng,
            current: None,
            emitted: 0,
        })
    }

    /// Next state index (rather than value).
    pub fn next_index(&mut self) -> usize {
        self.emitted += 1;
        let next = match self.current {
            None => {
                let u: f64 = self.rng.random();
                self.initial
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(self.initial.len() - 1)
            }
            Some(from) => {
                let kernel = if self.change.is_post_change(self.emitted) {
                    self.post
                } else {
                    self.pre
                };
                kernel.step(from, &mut self.rng)
            }
        };
        self.current = Some(next);
        next
    }
}

impl<R: Rng> Iterator for ChainSampler<'_, R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let i = self.next_index();
        Some(self.pre.states[i])
    }
}

/// Point mass on state index `state`.
pub fn point_mass(n_states: usize, state: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_states];
    v[state] = 1.0;
    v
}

/// Path of `length` state values; deterministic given `seed`.
pub fn simulate(
    pre: &TransitionKernel,
    post: &TransitionKernel,
    change: ChangePoint,
    length: usize,
    seed: u64,
    initial: &[f64],
) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::InvalidParameter("path length must be positive".to_string()));
    }
    let sampler = ChainSampler::new(pre, post, change, initial, stream_rng(seed, 0))?;
    Ok(sampler.take(length).collect())
}

/// `(x_i, x_{i+1})` for consecutive samples.
pub fn second_order(path: &[f64]) -> Result<Vec<StatePair>> {
    if path.len() < 2 {
        return Err(Error::PathTooShort(path.len()));
    }
    Ok(path.windows(2).map(|w| StatePair(w[0], w[1])).collect())
}

/// Single-column CSV with a header row.
pub fn write_path_csv(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>| -> std::io::Result<()> {
        writeln!(out, "{header}")?;
        for v in values {
            writeln!(out, "{v}")?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Chains from the numerical experiment.
pub mod reference {
    use super::TransitionKernel;

    /// Pre-change chain.
    pub fn chain_p() -> TransitionKernel {
        TransitionKernel::from_rows(vec![vec![0.2, 0.7, 0.1], vec![0.9, 0.0, 0.1], vec![0.2, 0.8, 0.0]])
            .expect("valid kernel")
    }

    /// Post-change chain.
    pub fn chain_q() -> TransitionKernel {
        TransitionKernel::from_rows(vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.2, 0.3, 0.5]])
            .expect("valid kernel")
    }

    /// 3-state circulant with first row `(a, b, c)`; doubly stochastic, so
    /// its stationary law is uniform whatever the weights.
    pub fn circulant(a: f64, b: f64, c: f64) -> TransitionKernel {
        TransitionKernel::from_rows(vec![vec![a, b, c], vec![c, a, b], vec![b, c, a]]).expect("valid kernel")
    }
}
