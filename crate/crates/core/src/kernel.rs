// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bounded positive-definite kernels on scalar states and on second-order
//! state pairs.
//!
//! Every kernel here satisfies `0 <= k(x, y) <= 1` and `k(x, x) = 1`, which
//! is what the block MMD bounds rely on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A second-order sample `(x_i, x_{i+1})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePair(pub f64, pub f64);

impl From<(f64, f64)> for StatePair {
    fn from((a, b): (f64, f64)) -> Self {
        StatePair(a, b)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(-beta * ||x - y||^2)`.
    #[default]
    Gaussian,
}

/// Kernel family plus bandwidth.
///
/// For the Gaussian family the bandwidth `beta` is the inverse squared
/// length-scale: `k(x, y) = exp(-beta (x - y)^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default)]
    pub family: KernelFamily,
    pub bandwidth: f64,
}

pub const DEFAULT_BANDWIDTH: f64 = 1.0;

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidth: DEFAULT_BANDWIDTH,
        }
    }
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Gaussian,
            bandwidth,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be finite and > 0, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn eval_scalar(&self, x: f64, y: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d = x - y;
                (-self.bandwidth * d * d).exp()
            }
        }
    }

    /// Product-space kernel on `X x X`.
    #[inline]
    pub fn eval_pair(&self, x: StatePair, y: StatePair) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d0 = x.0 - y.0;
                let d1 = x.1 - y.1;
                (-self.bandwidth * (d0 * d0 + d1 * d1)).exp()
            }
        }
    }
}

/// `sum_i sum_j k(a_i, b_j)`.
pub fn gram_sum(spec: &KernelSpec, a: &[StatePair], b: &[StatePair]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("gram_sum input"));
    }
    let mut calls = 0;
    Ok(gram_sum_counted(spec, a, b, &mut calls))
}

/// Like [`gram_sum`] but adds the number of kernel evaluations to `calls`.
/// Empty inputs give 0.
pub fn gram_sum_counted(spec: &KernelSpec, a: &[StatePair], b: &[StatePair], calls: &mut u64) -> f64 {
    let mut total = 0.0;
    for &x in a {
        for &y in b {
            total += spec.eval_pair(x, y);
        }
    }
    *calls += (a.len() * b.len()) as u64;
    total
}
