// SPDX-License-Identifier: Apache-2.0
//! Closed-form hijacking-cost and fairness calculators, plus a Monte-Carlo
//! check of the hijacking bound at small scale.
//!
//! An adversary "hijacks" a poll when it holds more than `rho` of its ring,
//! and succeeds overall when more than `theta` of `M` polls are hijacked.
//! The hijacking cost `gamma` is the user fraction it needs for that to
//! happen with probability above `epsilon`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("parameter out of domain: {0}")]
    Domain(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HijackParams<T> {
    /// Ring fraction that hijacks one poll.
    pub rho: T,
    /// Fraction of polls the adversary wants to hijack.
    pub theta: T,
    pub epsilon: T,
    /// Polls per period.
    pub polls: T,
    /// Users.
    pub users: T,
    pub n_req: T,
    /// Fraction of honest selected voters who do not vote.
    #[serde(default)]
    pub apathy: T,
}

impl<T: Real> HijackParams<T> {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let (zero, one) = (T::zero(), T::one());
        let open = |v: T| v > zero && v < one;
        if !open(self.rho) || !open(self.theta) || !open(self.epsilon) {
            return Err(AnalysisError::Domain("rho, theta and epsilon must lie in (0, 1)"));
        }
        if !(self.polls > zero && self.users > zero && self.n_req > zero) {
            return Err(AnalysisError::Domain("polls, users and n_req must be positive"));
        }
        if self.n_req > self.users {
            return Err(AnalysisError::Domain("n_req exceeds the number of users"));
        }
        if !(self.apathy >= zero && self.apathy < one) {
            return Err(AnalysisError::Domain("apathy must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Relative deviation at which a Chernoff tail with mean `alpha` falls to
/// `beta`: the positive root of `exp(-x^2 alpha / ((1+x)(2+x))) = beta`.
pub fn g<T: Real>(alpha: T, beta: T) -> Result<T, AnalysisError> {
    let (zero, one) = (T::zero(), T::one());
    if !(alpha > zero) || !(beta > zero && beta < one) {
        return Err(AnalysisError::Domain("g needs alpha > 0 and 0 < beta < 1"));
    }
    let lb = beta.ln();
    let two = T::lit(2.0);
    let denom = two * alpha + two * lb;
    if denom == zero {
        return Err(AnalysisError::Domain("g denominator 2 alpha + 2 ln beta is zero"));
    }
    let disc = lb * lb - T::lit(8.0) * alpha * lb;
    let root = (-T::lit(3.0) * lb + disc.sqrt()) / denom;
    if !(root > zero) {
        return Err(AnalysisError::Domain("g has no positive root for these inputs"));
    }
    Ok(root)
}

/// Minimum adversarial user fraction `gamma`.
pub fn hijack_cost<T: Real>(p: &HijackParams<T>) -> Result<T, AnalysisError> {
    p.validate()?;
    let one = T::one();
    let inner = g(p.theta * p.polls, p.epsilon)?;
    let outer = g(p.rho * p.n_req, p.theta / (one + inner))?;
    Ok(p.rho / (one + outer))
}

/// Cost when a fraction `a` of honest voters abstains.
pub fn hijack_cost_apathy<T: Real>(gamma: T, a: T) -> Result<T, AnalysisError> {
    let (zero, one) = (T::zero(), T::one());
    if !(a >= zero && a < one) || !(gamma > zero && gamma < one) {
        return Err(AnalysisError::Domain("need 0 <= a < 1 and 0 < gamma < 1"));
    }
    Ok(gamma * (a - one) / (gamma * a - one))
}

/// Reviews each honest user writes per period: `M n_req (1 - gamma) / n`.
pub fn reviewer_bandwidth<T: Real>(p: &HijackParams<T>, gamma: T) -> T {
    p.polls * p.n_req * (T::one() - gamma) / p.users
}

/// Hijackers needed against a system where every user reviews `c` polls:
/// `ceil(rho / (1 - rho) * kappa)` with `kappa = n c / M`.
pub fn baseline_cost<T: Real>(p: &HijackParams<T>, c: T) -> u64 {
    let kappa = p.users * c / p.polls;
    (p.rho / (T::one() - p.rho) * kappa).ceil().to_u64().unwrap_or(u64::MAX)
}

/// One row of the cost comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub n_req: f64,
    pub rho: f64,
    pub gamma: f64,
    /// Adversarial users needed (`gamma * n`, or `gamma' * n` under apathy).
    pub users_needed: f64,
    pub bandwidth_c: f64,
    pub baseline_users: u64,
}

pub fn cost_row(p: &HijackParams<f64>) -> Result<CostRow, AnalysisError> {
    let gamma = hijack_cost(p)?;
    let c = reviewer_bandwidth(p, gamma);
    let effective = if p.apathy > 0.0 { hijack_cost_apathy(gamma, p.apathy)? } else { gamma };
    Ok(CostRow {
        n_req: p.n_req,
        rho: p.rho,
        gamma: effective,
        users_needed: effective * p.users,
        bandwidth_c: c,
        baseline_users: baseline_cost(p, c),
    })
}

/// The six reference configurations: `n_req` in {50, 100, 200} for
/// `rho` = 0.5 and 0.3, with `theta` = 0.01, `M = n = 10^6`, `epsilon = 2^-30`.
pub fn reference_params() -> Vec<HijackParams<f64>> {
    let mut out = Vec::new();
    for rho in [0.5, 0.3] {
        for n_req in [50.0, 100.0, 200.0] {
            out.push(HijackParams {
                rho,
                theta: 0.01,
                epsilon: 2f64.powi(-30),
                polls: 1e6,
                users: 1e6,
                n_req,
                apathy: 0.0,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutcome {
    pub adversary_fraction: f64,
    /// Fraction of polls hijacked, per trial.
    pub hijacked_fraction: Vec<f64>,
    /// Share of trials where more than `theta` of polls were hijacked.
    pub failure_share: f64,
}

/// Simulate `trials` periods of `M` polls, each with a ring of `n_req`
/// distinct users drawn from `n`, an adversary owning `adversary_fraction`
/// of users. Desk scale only: `M <= 10^4`, `n <= 10^5`.
pub fn monte_carlo_hijack(
    p: &HijackParams<f64>,
    adversary_fraction: f64,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloOutcome, AnalysisError> {
    p.validate()?;
    if !(0.0..=1.0).contains(&adversary_fraction) {
        return Err(AnalysisError::Domain("adversary fraction must lie in [0, 1]"));
    }
    let users = p.users as u64;
    let polls = p.polls as u64;
    let ring = p.n_req as u64;
    let bad_users = (adversary_fraction * p.users).floor() as u64;
    let threshold = p.rho * p.n_req;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut fractions = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut hijacked = 0u64;
        for _ in 0..polls {
            // Sequential draw without replacement.
            let (mut bad_left, mut total_left, mut bad_in_ring) = (bad_users, users, 0u64);
            for _ in 0..ring {
                if rng.gen_range(0..total_left) < bad_left {
                    bad_in_ring += 1;
                    bad_left -= 1;
                }
                total_left -= 1;
            }
            if bad_in_ring as f64 > threshold {
                hijacked += 1;
            }
        }
        fractions.push(hijacked as f64 / polls as f64);
    }
    let failures = fractions.iter().filter(|&&f| f > p.theta).count();
    Ok(MonteCarloOutcome {
        adversary_fraction,
        failure_share: failures as f64 / trials.max(1) as f64,
        hijacked_fraction: fractions,
    })
}
