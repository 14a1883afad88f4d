// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures shared by the criterion benches.

use qcd_core::markov::reference::{chain_p, chain_q};
use qcd_core::markov::{stream_rng, ChainSampler};
use qcd_core::{ChangePoint, Result};

/// Monitored and reference streams of length `n` from the three-state example,
/// with the change at `tau`.
pub fn reference_streams(n: usize, tau: ChangePoint, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = chain_p();
    let q = chain_q();
    let init = p.stationary()?;
    let xs = ChainSampler::new(&p, &q, tau, &init, stream_rng(seed, 0))?
        .take(n)
        .collect();
    let ys = ChainSampler::new(&p, &p, ChangePoint::Never, &init, stream_rng(seed, 1))?
        .take(n)
        .collect();
    Ok((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_have_requested_length_and_states() {
        let (xs, ys) = reference_streams(500, ChangePoint::At(100), 1).unwrap();
        assert_eq!((xs.len(), ys.len()), (500, 500));
        assert!(xs.iter().chain(&ys).all(|v| [0.0, 1.0, 2.0].contains(v)));
        assert_eq!(reference_streams(500, ChangePoint::At(100), 1).unwrap(), (xs, ys));
    }
}
