// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-form performance certificates for the block detector.
//!
//! * [`wadd_upper_bound`]: worst-case detection delay, linear in `m c`.
//! * [`concentration_constants`] and [`solve_q`]: the concentration constant
//!   `Gamma` and the exponent `q` with `phi(q) <= 1`.
//! * [`arl_lower_bound`]: `ARL >= m exp(q c)`.
//! * [`calibrate`]: all of the above for a concrete pair of finite chains,
//!   with the ergodicity constants certified by exact matrix powers.

use serde::Serialize;

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::markov::{ErgodicityParams, TransitionKernel};
use crate::mmd::{a_constant, population_mmd};

/// Horizon over which `calibrate` certifies `TV <= R lambda^t`.
pub const CERTIFICATE_HORIZON: usize = 200;
/// Relative tolerance of the bisection in [`solve_q`].
pub const Q_REL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WaddBound {
    pub xi: f64,
    pub n_c: f64,
    pub delta: f64,
    /// Upper bound on the worst-case detection delay, in raw samples.
    pub value: f64,
}

/// Worst-case average detection delay bound. With `d = D - sigma`,
/// `a = a_P + a_Q` and `s = sqrt(d a)`:
///
/// ```text
/// WADD <= 2 s m c / (d - a)^2 + (d + a) m c / (d - a)^2 + 2m + (a + s) m / (d - a)
/// ```
///
/// The bound is vacuous, and reported as infeasible, unless `d > a`.
pub fn wadd_upper_bound(d_pq: f64, sigma: f64, a_p: f64, a_q: f64, m: usize, c: f64) -> Result<WaddBound> {
    if !(sigma > 0.0) || m == 0 || !(c >= 0.0) || !(a_p >= 0.0) || !(a_q >= 0.0) || !(d_pq >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "wadd bound needs sigma > 0, m > 0, c >= 0, a >= 0, D >= 0; got sigma={sigma}, m={m}, c={c}, a_P={a_p}, a_Q={a_q}, D={d_pq}"
        )));
    }
    let d = d_pq - sigma;
    if d <= 0.0 {
        return Err(Error::Infeasible {
            reason: format!("D(F_P, F_Q) = {d_pq} does not exceed sigma = {sigma}"),
            remedy: "choose sigma below D(F_P, F_Q)".to_string(),
        });
    }
    let a = a_p + a_q;
    let gap = d - a;
    if gap <= 0.0 {
        return Err(Error::Infeasible {
            reason: format!("D - sigma = {d} does not exceed a_P + a_Q = {a}"),
            remedy: "increase m or lower sigma".to_string(),
        });
    }
    let s = (d * a).sqrt();
    let m_f = m as f64;
    let xi = (a + s) / gap;
    let n_c = ((xi + 1.0) * c / d).ceil();
    let delta = if a == 0.0 { 0.0 } else { a / d * (1.0 + 1.0 / xi) };
    let value = 2.0 * s * m_f * c / (gap * gap) + (d + a) * m_f * c / (gap * gap) + 2.0 * m_f + xi * m_f;
    Ok(WaddBound { xi, n_c, delta, value })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConcentrationConstants {
    pub zeta: u32,
    pub eta: f64,
    pub chi: f64,
    pub u: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    pub gamma: f64,
}

/// Concentration constants for a uniformly ergodic chain with `(R, lambda)`
/// and block size `m`.
///
/// The exponent of the last term of `M` is taken as `(zeta - 1) / zeta`.
pub fn concentration_constants(r: f64, lambda: f64, m: usize) -> Result<ConcentrationConstants> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::NotErgodic(lambda));
    }
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("R must be finite and >= 1, got {r}")));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!("block size must be >= 2, got {m}")));
    }
    let two_r = 2.0 * r;
    let mut zeta: u32 = 1;
    while two_r * lambda.powi(zeta as i32) >= 1.0 {
        zeta = zeta
            .checked_add(1)
            .filter(|z| *z < 10_000_000)
            .ok_or_else(|| Error::InvalidParameter(format!("zeta does not exist for R={r}, lambda={lambda}")))?;
    }
    let zf = zeta as f64;
    let eta = two_r * lambda.powi(zeta as i32);
    let eta_root = eta.powf(1.0 / zf);
    let chi = eta.powf(-(zf - 1.0) / zf) / (1.0 - eta_root / 2.0);
    let u = 1.0 / (1.0 + eta_root / 2.0);
    let big_m = (two_r - 1.0) / (1.0 - two_r.powf(-1.0 / zf)) * chi
        + (1.0 - 1.0 / eta) / (1.0 - eta.powf(-1.0 / zf))
        + 2.0 / (1.0 + eta_root) * eta.powf(-(zf - 1.0) / zf);
    let contraction = 1.0 - lambda.max(u.powf(-0.25));
    let inner = 5.0 / u.ln() + 8.0 * big_m * r * chi;
    if !(inner > 0.0) {
        return Err(Error::Infeasible {
            reason: format!("concentration constant is not positive (5/ln u + 8 M R chi = {inner})"),
            remedy: "chain mixes too slowly for the concentration bound".to_string(),
        });
    }
    let m_f = m as f64;
    let gamma = contraction * contraction / (32.0 * r * chi) / inner / (4.0 * m_f * m_f);
    if !(gamma > 0.0) {
        return Err(Error::Infeasible {
            reason: format!("Gamma = {gamma} is not positive"),
            remedy: "chain mixes too slowly for the concentration bound".to_string(),
        });
    }
    Ok(ConcentrationConstants {
        zeta,
        eta,
        chi,
        u,
        big_m,
        gamma,
    })
}

/// `phi(q) = sqrt(pi / Gamma) q exp(-q h + q^2 / (4 Gamma))`.
pub fn phi(q: f64, gamma: f64, h: f64) -> f64 {
    log_phi(q, gamma, h).exp()
}

fn log_phi(q: f64, gamma: f64, h: f64) -> f64 {
    0.5 * (std::f64::consts::PI / gamma).ln() + q.ln() - q * h + q * q / (4.0 * gamma)
}

/// Largest `q` in `(0, 2 Gamma h]` with `phi(q) <= 1`.
///
/// Past `2 Gamma h` the exponent grows without bound, so the search stays
/// below it. A coarse scan brackets the last crossing before bisection,
/// since `phi` can have up to three monotone pieces on the interval.
pub fn solve_q(gamma: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Infeasible {
            reason: format!("h = sigma - 2 a_P = {h} is not positive"),
            remedy: "increase m or raise sigma".to_string(),
        });
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("Gamma must be > 0, got {gamma}")));
    }
    let hi = 2.0 * gamma * h;
    let ok = |q: f64| log_phi(q, gamma, h) <= 0.0;
    if ok(hi) {
        return Ok(hi);
    }
    const SCAN: usize = 4096;
    let mut upper = hi;
    let mut lower = None;
    for k in (1..SCAN).rev() {
        let q = hi * k as f64 / SCAN as f64;
        if ok(q) {
            lower = Some(q);
            break;
        }
        upper = q;
    }
    let mut lower = match lower {
        Some(q) => q,
        None => {
            // feasible set sits below the first grid point; phi(0+) = 0
            let mut q = hi / SCAN as f64;
            while !ok(q) {
                upper = q;
                q /= 2.0;
                if q < f64::MIN_POSITIVE {
                    return Err(Error::Infeasible {
                        reason: "no q > 0 with phi(q) <= 1".to_string(),
                        remedy: "increase m or raise sigma".to_string(),
                    });
                }
            }
            q
        }
    };
    while upper - lower > Q_REL_TOL * lower {
        let mid = 0.5 * (lower + upper);
        if ok(mid) {
            lower = mid;
        } else {
            upper = mid;
        }
    }
    Ok(lower)
}

/// `ARL >= m exp(q c)`, in raw samples.
pub fn arl_lower_bound(m: usize, q: f64, c: f64) -> f64 {
    m as f64 * (q * c).exp()
}

/// One reason a certificate could not be produced, with the lever that fixes it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Infeasibility {
    pub bound: &'static str,
    pub reason: String,
    pub remedy: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainCertificate {
    /// First-order `(R, lambda)`, certified up to [`CERTIFICATE_HORIZON`].
    pub first_order: ErgodicityParams,
    /// Constants inherited by the pair chain.
    pub pair: ErgodicityParams,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub m: usize,
    pub sigma: f64,
    pub threshold: f64,
    pub bandwidth: f64,
    pub chain_p: ChainCertificate,
    pub chain_q: ChainCertificate,
    pub d_pq: f64,
    pub a_p: f64,
    pub a_q: f64,
    pub wadd: Option<WaddBound>,
    pub concentration: Option<ConcentrationConstants>,
    /// `sigma - 2 a_P`.
    pub h: f64,
    pub q: Option<f64>,
    pub phi_q: Option<f64>,
    pub arl_lower: Option<f64>,
    pub infeasible: Vec<Infeasibility>,
}

impl BoundsReport {
    pub fn is_feasible(&self) -> bool {
        self.infeasible.is_empty()
    }
}

fn certify(kernel: &TransitionKernel) -> Result<ChainCertificate> {
    let first_order = kernel.ergodicity_constants(CERTIFICATE_HORIZON)?;
    Ok(ChainCertificate {
        first_order,
        pair: first_order.second_order(),
        horizon: CERTIFICATE_HORIZON,
    })
}

/// Smallest block size at which `a(m) < target`, using `a ∝ 1/sqrt(m-1)`.
fn block_size_for(a_now: f64, m_now: usize, target: f64) -> Option<usize> {
    if target <= 0.0 {
        return None;
    }
    let ratio = a_now / target;
    let needed = ((m_now - 1) as f64 * ratio * ratio).floor() as usize + 2;
    Some(needed.max(m_now))
}

/// Full certificate for detecting a switch from `kernel_p` to `kernel_q`.
///
/// Ergodicity constants of the pair chains feed `a_P`, `a_Q` and `Gamma`.
pub fn calibrate(
    config: &DetectorConfig,
    kernel_p: &TransitionKernel,
    kernel_q: &TransitionKernel,
) -> Result<BoundsReport> {
    config.validate()?;
    kernel_p.check_same_state_space(kernel_q)?;
    let spec = &config.kernel;
    let m = config.m;
    let sigma = config.sigma;
    let chain_p = certify(kernel_p)?;
    let chain_q = certify(kernel_q)?;
    let d_pq = population_mmd(spec, &kernel_p.pair_measure()?, &kernel_q.pair_measure()?)?;
    let a_p = a_constant(&chain_p.pair, m)?;
    let a_q = a_constant(&chain_q.pair, m)?;
    let mut infeasible = Vec::new();

    let wadd = match wadd_upper_bound(d_pq, sigma, a_p, a_q, m, config.threshold) {
        Ok(bound) => Some(bound),
        Err(Error::Infeasible { reason, .. }) => {
            let d = d_pq - sigma;
            let remedy = if d <= 0.0 {
                format!("choose sigma below D(F_P, F_Q) = {d_pq:.6}")
            } else {
                match block_size_for(a_p + a_q, m, d) {
                    Some(m_needed) => format!("increase m to at least {m_needed} or lower sigma"),
                    None => "lower sigma".to_string(),
                }
            };
            infeasible.push(Infeasibility {
                bound: "wadd",
                reason,
                remedy,
            });
            None
        }
        Err(e) => return Err(e),
    };

    let h = sigma - 2.0 * a_p;
    let concentration = match concentration_constants(chain_p.pair.r, chain_p.pair.lambda, m) {
        Ok(c) => Some(c),
        Err(Error::Infeasible { reason, remedy }) => {
            infeasible.push(Infeasibility {
                bound: "arl",
                reason,
                remedy,
            });
            None
        }
        Err(e) => return Err(e),
    };
    let mut q = None;
    if let Some(constants) = &concentration {
        if h > 0.0 {
            q = Some(solve_q(constants.gamma, h)?);
        } else {
            let remedy = match block_size_for(2.0 * a_p, m, sigma) {
                Some(m_needed) => format!(
                    "increase m to at least {m_needed} or raise sigma above {:.6}",
                    2.0 * a_p
                ),
                None => "raise sigma".to_string(),
            };
            infeasible.push(Infeasibility {
                bound: "arl",
                reason: format!("h = sigma - 2 a_P = {h:.6} is not positive"),
                remedy,
            });
        }
    }
    let phi_q = match (q, &concentration) {
        (Some(q), Some(c)) => Some(phi(q, c.gamma, h)),
        _ => None,
    };
    let arl_lower = q.map(|q| arl_lower_bound(m, q, config.threshold));

    Ok(BoundsReport {
        m,
        sigma,
        threshold: config.threshold,
        bandwidth: spec.bandwidth,
        chain_p,
        chain_q,
        d_pq,
        a_p,
        a_q,
        wadd,
        concentration,
        h,
        q,
        phi_q,
        arl_lower,
        infeasible,
    })
}
