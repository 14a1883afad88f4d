// SPDX-License-Identifier: MIT OR Apache-2.0

//! Maximum mean discrepancy between pair measures.
//!
//! [`block_mmd`] is the biased (diagonal-inclusive) block estimator used by
//! the detectors. [`population_mmd`], [`empirical_to_population_mmd`] and
//! [`rho_exact`] evaluate the corresponding population quantities exactly on
//! finite chains.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::{gram_sum_counted, KernelSpec, StatePair};
use crate::markov::{second_order, ErgodicityParams, PairMeasure, TransitionKernel};

/// One block of `m` raw samples from each stream, reduced to `m - 1` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPair {
    x_pairs: Vec<StatePair>,
    y_pairs: Vec<StatePair>,
}

impl BlockPair {
    pub fn new(x_pairs: Vec<StatePair>, y_pairs: Vec<StatePair>) -> Result<Self> {
        if x_pairs.len() != y_pairs.len() {
            return Err(Error::InvalidParameter(format!(
                "block sides differ: {} vs {} pairs",
                x_pairs.len(),
                y_pairs.len()
            )));
        }
        if x_pairs.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "block needs m >= 3 (at least 2 pairs), got {} pairs",
                x_pairs.len()
            )));
        }
        Ok(BlockPair { x_pairs, y_pairs })
    }

    /// Builds the block from `m` raw samples of each stream.
    pub fn from_samples(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(second_order(x)?, second_order(y)?)
    }

    /// Raw block size `m`.
    pub fn m(&self) -> usize {
        self.x_pairs.len() + 1
    }

    pub fn x_pairs(&self) -> &[StatePair] {
        &self.x_pairs
    }

    pub fn y_pairs(&self) -> &[StatePair] {
        &self.y_pairs
    }
}

pub fn block_mmd(spec: &KernelSpec, block: &BlockPair) -> f64 {
    let mut calls = 0;
    block_mmd_counted(spec, &block.x_pairs, &block.y_pairs, &mut calls)
}

/// `(1/(m-1)) * sqrt(sum k(x,x') + sum k(y,y') - 2 sum k(x,y))` over all
/// index pairs including the diagonal. Adds `3 (m-1)^2` to `calls`.
pub fn block_mmd_counted(spec: &KernelSpec, x: &[StatePair], y: &[StatePair], calls: &mut u64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let xx = gram_sum_counted(spec, x, x, calls);
    let yy = gram_sum_counted(spec, y, y, calls);
    let xy = gram_sum_counted(spec, x, y, calls);
    clamped_sqrt(xx + yy - 2.0 * xy) / x.len() as f64
}

/// Square root of a radicand that is non-negative in exact arithmetic.
#[inline]
pub fn clamped_sqrt(radicand: f64) -> f64 {
    radicand.max(0.0).sqrt()
}

fn check_measures(f: &PairMeasure, g: &PairMeasure) -> Result<()> {
    if f.states != g.states {
        return Err(Error::StateSpaceMismatch(format!("{:?} vs {:?}", f.states, g.states)));
    }
    Ok(())
}

fn weighted_cross(spec: &KernelSpec, a: &[(StatePair, f64)], b: &[(StatePair, f64)]) -> f64 {
    a.iter()
        .map(|&(x, wx)| wx * b.iter().map(|&(y, wy)| wy * spec.eval_pair(x, y)).sum::<f64>())
        .sum()
}

/// Exact `D(F, G)` for finitely supported pair measures.
pub fn population_mmd(spec: &KernelSpec, f: &PairMeasure, g: &PairMeasure) -> Result<f64> {
    check_measures(f, g)?;
    let fa = f.atoms();
    let ga = g.atoms();
    let ff = weighted_cross(spec, &fa, &fa);
    let gg = weighted_cross(spec, &ga, &ga);
    let fg = weighted_cross(spec, &fa, &ga);
    Ok(clamped_sqrt(ff + gg - 2.0 * fg))
}

/// Exact `D` between the empirical measure of `pairs` and `f`.
pub fn empirical_to_population_mmd(spec: &KernelSpec, pairs: &[StatePair], f: &PairMeasure) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair sequence"));
    }
    let n = pairs.len() as f64;
    let mut calls = 0;
    let ee = gram_sum_counted(spec, pairs, pairs, &mut calls) / (n * n);
    let atoms = f.atoms();
    let ef: f64 = pairs
        .iter()
        .map(|&x| atoms.iter().map(|&(y, w)| w * spec.eval_pair(x, y)).sum::<f64>())
        .sum::<f64>()
        / n;
    let ff = weighted_cross(spec, &atoms, &atoms);
    Ok(clamped_sqrt(ee + ff - 2.0 * ef))
}

/// Exact MMD between two first-order laws on `states`, with the scalar kernel.
pub fn marginal_mmd(spec: &KernelSpec, states: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != states.len() || q.len() != states.len() {
        return Err(Error::StateSpaceMismatch(format!(
            "{} states, laws of length {} and {}",
            states.len(),
            p.len(),
            q.len()
        )));
    }
    let n = states.len();
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let d = (p[a] - q[a]) * (p[b] - q[b]);
            total += d * spec.eval_scalar(states[a], states[b]);
        }
    }
    Ok(clamped_sqrt(total))
}

/// Exact dependence coefficient
/// `rho_{i,j}(z0) = |E[<k(Z~_i,.) - mu_F, k(Z~_j,.) - mu_F> | Z_0 = z0]|`
/// where `Z~_i = (Z_i, Z_{i+1})` and `F` is the stationary pair measure.
///
/// The inner product is expanded into its four expectation terms, each
/// evaluated by summing against matrix powers of the kernel.
pub fn rho_exact(spec: &KernelSpec, kernel: &TransitionKernel, i: usize, j: usize, z0: usize) -> Result<f64> {
    let n = kernel.n_states();
    if i == 0 || j <= i {
        return Err(Error::InvalidParameter(format!("need 0 < i < j, got i={i}, j={j}")));
    }
    if z0 >= n {
        return Err(Error::InvalidParameter(format!(
            "start state {z0} out of range for {n} states"
        )));
    }
    let p = kernel.matrix();
    let states = kernel.states();
    let f = kernel.pair_measure()?;
    let pair = |a: usize, b: usize| StatePair(states[a], states[b]);

    let pow = |t: usize| -> DMatrix<f64> {
        let mut out = DMatrix::identity(n, n);
        for _ in 0..t {
            out = &out * p;
        }
        out
    };
    let to_i = pow(i);
    let between = pow(j - i - 1);
    let to_j = pow(j);

    // g(a, b) = E_{Z~ ~ F} k((a, b), Z~)
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let mut s = 0.0;
            for c in 0..n {
                for d in 0..n {
                    s += f.weights[(c, d)] * spec.eval_pair(pair(a, b), pair(c, d));
                }
            }
            g[(a, b)] = s;
        }
    }

    let mut joint = 0.0;
    let mut mean_i = 0.0;
    let mut mean_j = 0.0;
    let mut mean_ff = 0.0;
    for a in 0..n {
        for b in 0..n {
            let w_i = to_i[(z0, a)] * p[(a, b)];
            let w_j = to_j[(z0, a)] * p[(a, b)];
            mean_i += w_i * g[(a, b)];
            mean_j += w_j * g[(a, b)];
            mean_ff += f.weights[(a, b)] * g[(a, b)];
            if w_i == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for c in 0..n {
                let reach = between[(b, c)];
                if reach == 0.0 {
                    continue;
                }
                for d in 0..n {
                    inner += reach * p[(c, d)] * spec.eval_pair(pair(a, b), pair(c, d));
                }
            }
            joint += w_i * inner;
        }
    }
    Ok((joint - mean_i - mean_j + mean_ff).abs())
}

/// Bias constant `a = sqrt((2 - 2 lambda + 4 R) / ((m - 1)(1 - lambda)))`
/// bounding the conditional mean block MMD to the stationary pair measure.
pub fn a_constant(params: &ErgodicityParams, m: usize) -> Result<f64> {
    if !(params.lambda < 1.0) {
        return Err(Error::NotErgodic(params.lambda));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!("block size must be >= 2, got {m}")));
    }
    let lambda = params.lambda;
    Ok(((2.0 - 2.0 * lambda + 4.0 * params.r) / ((m - 1) as f64 * (1.0 - lambda))).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::reference::{chain_p, chain_q, circulant};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit() -> KernelSpec {
        KernelSpec::gaussian(1.0).unwrap()
    }

    /// Oracle: every one of the `(2(m-1))^2` kernel terms spelled out via
    /// the signed empirical measure.
    fn brute_block_mmd(spec: &KernelSpec, x: &[StatePair], y: &[StatePair]) -> f64 {
        let n = x.len() as f64;
        let atoms: Vec<(StatePair, f64)> = x
            .iter()
            .map(|&p| (p, 1.0 / n))
            .chain(y.iter().map(|&p| (p, -1.0 / n)))
            .collect();
        let mut total = 0.0;
        for &(a, wa) in &atoms {
            for &(b, wb) in &atoms {
                total += wa * wb * spec.eval_pair(a, b);
            }
        }
        total.max(0.0).sqrt()
    }

    #[test]
    fn identical_blocks_are_zero() {
        let x = [0.0, 1.0, 2.0, 1.0, 0.0];
        let block = BlockPair::from_samples(&x, &x).unwrap();
        assert_eq!(block.m(), 5);
        assert_eq!(block_mmd(&unit(), &block), 0.0);
    }

    #[test]
    fn hand_expanded_block() {
        let block = BlockPair::new(vec![StatePair(0.0, 0.0); 2], vec![StatePair(1.0, 1.0); 2]).unwrap();
        let got = block_mmd(&unit(), &block);
        let e2 = (-2.0f64).exp();
        let expected = 0.5 * (4.0 + 4.0 - 8.0 * e2).sqrt();
        assert_relative_eq!(got, expected, epsilon = 1e-14);
        assert_relative_eq!(
            got,
            brute_block_mmd(&unit(), block.x_pairs(), block.y_pairs()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn block_rejects_bad_shapes() {
        assert!(BlockPair::new(vec![StatePair(0.0, 0.0); 2], vec![StatePair(0.0, 0.0); 3]).is_err());
        assert!(BlockPair::new(vec![StatePair(0.0, 0.0)], vec![StatePair(0.0, 0.0)]).is_err());
        assert!(BlockPair::from_samples(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn counted_block_uses_three_gram_sums() {
        let x = vec![StatePair(0.0, 1.0); 9];
        let mut calls = 0;
        block_mmd_counted(&unit(), &x, &x, &mut calls);
        assert_eq!(calls, 3 * 81);
    }

    fn discrete_pairs(max_len: usize) -> impl Strategy<Value = Vec<StatePair>> {
        prop::collection::vec((0u8..3, 0u8..3), 2..max_len)
            .prop_map(|v| v.into_iter().map(|(a, b)| StatePair(a as f64, b as f64)).collect())
    }

    proptest! {
        #[test]
        fn block_mmd_axioms(x in discrete_pairs(12), seed in 0u64..1000, beta in 0.1f64..4.0) {
            use rand::{seq::SliceRandom, SeedableRng};
            let spec = KernelSpec::gaussian(beta).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // a permutation has the same empirical measure
            let mut perm = x.clone();
            perm.shuffle(&mut rng);
            let same = BlockPair::new(x.clone(), perm.clone()).unwrap();
            prop_assert!(block_mmd(&spec, &same) < 1e-6);

            // a different multiset gives a strictly positive distance
            let mut other = x.clone();
            other[0] = StatePair((x[0].0 + 1.0) % 3.0, x[0].1);
            let diff = BlockPair::new(x.clone(), other.clone()).unwrap();
            let d = block_mmd(&spec, &diff);
            prop_assert!(d > 1e-6);
            prop_assert!(d <= 2f64.sqrt());

            let swapped = BlockPair::new(other.clone(), x.clone()).unwrap();
            prop_assert!((d - block_mmd(&spec, &swapped)).abs() < 1e-12);
            prop_assert!((d - brute_block_mmd(&spec, &x, &other)).abs() < 1e-12);
        }
    }

    #[test]
    fn population_mmd_zero_on_self_for_random_chains() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..6);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    let mut row: Vec<f64> = raw.iter().map(|v| v / s).collect();
                    let head: f64 = row[..n - 1].iter().sum();
                    row[n - 1] = 1.0 - head;
                    row
                })
                .collect();
            let k = TransitionKernel::from_rows(rows).unwrap();
            let f = k.pair_measure().unwrap();
            let d = population_mmd(&unit(), &f, &f).unwrap();
            assert!(d < 1e-7, "{d}");
            // radicand itself is within rounding of zero
            let radicand = d * d;
            assert!(radicand < 1e-14);
        }
    }

    #[test]
    fn population_mmd_reference_chains_positive() {
        let f = chain_p().pair_measure().unwrap();
        let g = chain_q().pair_measure().unwrap();
        let d = population_mmd(&unit(), &f, &g).unwrap();
        // independent route: quadratic form of the signed measure difference
        let n = 3;
        let mut q = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for e in 0..n {
                        let w = (f.weights[(a, b)] - g.weights[(a, b)]) * (f.weights[(c, e)] - g.weights[(c, e)]);
                        q += w * unit().eval_pair(StatePair(a as f64, b as f64), StatePair(c as f64, e as f64));
                    }
                }
            }
        }
        assert_relative_eq!(d, q.sqrt(), epsilon = 1e-12);
        assert!(d > 0.3);
    }

    #[test]
    fn same_stationary_law_still_separated_by_pairs() {
        let p = circulant(0.1, 0.8, 0.1);
        let q = circulant(0.8, 0.1, 0.1);
        let spec = unit();
        let pi_p = p.stationary().unwrap();
        let pi_q = q.stationary().unwrap();
        assert!(marginal_mmd(&spec, p.states(), &pi_p, &pi_q).unwrap() < 1e-7);
        let d = population_mmd(&spec, &p.pair_measure().unwrap(), &q.pair_measure().unwrap()).unwrap();
        assert!(d > 0.01, "{d}");
    }

    #[test]
    fn population_mmd_rejects_mismatch() {
        let f = chain_p().pair_measure().unwrap();
        let two = TransitionKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(population_mmd(&unit(), &f, &two.pair_measure().unwrap()).is_err());
    }

    #[test]
    fn empirical_matches_block_formula_on_exact_measure() {
        // an empirical measure whose atoms are exactly F gives distance 0
        let k = TransitionKernel::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let f = k.pair_measure().unwrap();
        let pairs = [
            StatePair(0.0, 0.0),
            StatePair(0.0, 1.0),
            StatePair(1.0, 0.0),
            StatePair(1.0, 1.0),
        ];
        assert!(empirical_to_population_mmd(&unit(), &pairs, &f).unwrap() < 1e-7);
        assert!(empirical_to_population_mmd(&unit(), &pairs[..1], &f).unwrap() > 0.1);
        assert!(empirical_to_population_mmd(&unit(), &[], &f).is_err());
    }

    #[test]
    fn rho_vanishes_for_iid_chain() {
        let k = TransitionKernel::from_rows(vec![vec![0.2, 0.3, 0.5]; 3]).unwrap();
        for z0 in 0..3 {
            for i in 1..5 {
                for j in i + 2..8 {
                    assert!(rho_exact(&unit(), &k, i, j, z0).unwrap() < 1e-12);
                }
            }
        }
    }

    /// Oracle: brute-force enumeration of all paths z0 -> z_1 .. z_{j+1}.
    fn rho_by_paths(spec: &KernelSpec, k: &TransitionKernel, i: usize, j: usize, z0: usize) -> f64 {
        let n = k.n_states();
        let f = k.pair_measure().unwrap();
        let atoms = f.atoms();
        let mu = |x: StatePair| atoms.iter().map(|&(y, w)| w * spec.eval_pair(x, y)).sum::<f64>();
        let mu_mu: f64 = atoms.iter().map(|&(x, w)| w * mu(x)).sum();
        let mut total = 0.0;
        let mut stack = vec![(vec![z0], 1.0)];
        while let Some((path, w)) = stack.pop() {
            if path.len() == j + 2 {
                let zi = StatePair(path[i] as f64, path[i + 1] as f64);
                let zj = StatePair(path[j] as f64, path[j + 1] as f64);
                total += w * (spec.eval_pair(zi, zj) - mu(zi) - mu(zj) + mu_mu);
                continue;
            }
            let last = *path.last().unwrap();
            for next in 0..n {
                let p = k.prob(last, next);
                if p > 0.0 {
                    let mut extended = path.clone();
                    extended.push(next);
                    stack.push((extended, w * p));
                }
            }
        }
        total.abs()
    }

    #[test]
    fn rho_matches_path_enumeration() {
        let spec = unit();
        for k in [chain_p(), chain_q()] {
            for z0 in 0..3 {
                for (i, j) in [(1, 2), (1, 3), (2, 5), (3, 4)] {
                    let exact = rho_exact(&spec, &k, i, j, z0).unwrap();
                    let oracle = rho_by_paths(&spec, &k, i, j, z0);
                    assert!((exact - oracle).abs() < 1e-12, "{exact} vs {oracle}");
                    assert!(exact <= 4.0);
                }
            }
        }
    }

    #[test]
    fn rho_respects_dependence_bound() {
        let k = chain_p();
        let params = k.ergodicity_constants(50).unwrap();
        let rho = rho_exact(&unit(), &k, 1, 3, 0).unwrap();
        assert!(rho <= 2.0 * params.r * params.lambda.powi(1));
        assert!(rho_exact(&unit(), &k, 3, 3, 0).is_err());
        assert!(rho_exact(&unit(), &k, 0, 3, 0).is_err());
        assert!(rho_exact(&unit(), &k, 1, 3, 7).is_err());
    }

    #[test]
    fn a_constant_values() {
        let p = ErgodicityParams::new(1.0, 0.5).unwrap();
        assert_relative_eq!(a_constant(&p, 10).unwrap(), (5.0f64 / 4.5).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(
            a_constant(&p, 37).unwrap(),
            a_constant(&p, 10).unwrap() / 2.0,
            epsilon = 1e-15
        );
        let tiny = ErgodicityParams { r: 1.0, lambda: 1e-15 };
        assert_relative_eq!(a_constant(&tiny, 10).unwrap(), (6.0f64 / 9.0).sqrt(), epsilon = 1e-12);
        let bad = ErgodicityParams { r: 1.0, lambda: 1.0 };
        assert!(a_constant(&bad, 10).is_err());
        assert!(a_constant(&p, 1).is_err());
    }
}
