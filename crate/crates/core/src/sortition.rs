// SPDX-License-Identifier: Apache-2.0
//! Randomised voter selection: the block-seed chain, per-poll scores, top-k
//! ring selection over a topic audience, epoch thresholds that enlarge rings
//! under apathy, and the waiting period before a seed may be used.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{hash32, ring_hash, HashDomain};
use crate::num::{Real, ThresholdScalar};

pub type Seed = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SortitionError {
    #[error("audience is empty")]
    EmptyAudience,
    #[error("audience lists a public key twice")]
    DuplicateAudienceMember,
    #[error("parameters out of range: {0}")]
    Domain(&'static str),
    #[error("no seed recorded for block {0}")]
    UnknownBlock(u64),
}

/// Seed of the next block from the previous seed and the proposer's key.
pub fn next_seed(prev: &Seed, proposer_key: &[u8]) -> Seed {
    hash32(
        HashDomain::VRF,
        &[b"seed", &(proposer_key.len() as u32).to_le_bytes(), proposer_key, prev],
    )
}

/// Block number to seed. Block 0 holds the genesis seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedChain {
    seeds: Vec<Seed>,
}

impl SeedChain {
    pub fn new(genesis: Seed) -> Self {
        SeedChain { seeds: vec![genesis] }
    }

    /// Extend by one block; returns the new block number.
    pub fn advance(&mut self, proposer_key: &[u8]) -> u64 {
        let next = next_seed(self.seeds.last().unwrap(), proposer_key);
        self.seeds.push(next);
        self.seeds.len() as u64 - 1
    }

    pub fn get(&self, block: u64) -> Result<&Seed, SortitionError> {
        self.seeds.get(block as usize).ok_or(SortitionError::UnknownBlock(block))
    }

    pub fn latest_block(&self) -> u64 {
        self.seeds.len() as u64 - 1
    }
}

/// Smallest `k` with `(1-h) * ((1-h)(1+h)/h)^(k-1) < eps`.
pub fn compute_bwait<T: Real>(honest: T, eps: T) -> Result<u64, SortitionError> {
    let one = T::one();
    if !(honest > T::zero() && honest < one) || !(eps > T::zero() && eps < one) {
        return Err(SortitionError::Domain("need 0 < h < 1 and 0 < eps < 1"));
    }
    let ratio = (one - honest) * (one + honest) / honest;
    let mut term = one - honest;
    let mut k = 1u64;
    while term >= eps {
        if ratio >= one {
            return Err(SortitionError::Domain("series does not decay for this honest fraction"));
        }
        term = term * ratio;
        k += 1;
    }
    Ok(k)
}

/// Score of one audience member for one poll.
pub fn vrf_score(seed: &Seed, pid: &[u8], pk: &[u8; 32]) -> [u8; 32] {
    hash32(HashDomain::VRF, &[seed, pid, pk])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AudienceMember {
    pub user_id: u64,
    pub pk: [u8; 32],
}

#[derive(Clone, Copy, Debug)]
pub struct DrawInputs<'a> {
    pub pid: &'a [u8],
    pub block_committed: u64,
    /// Seed of block `block_committed + B_wait`.
    pub seed: Seed,
    pub audience: &'a [AudienceMember],
    pub n_req: u64,
}

/// Result of one poll's voter selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoterDraw {
    pub pid: Vec<u8>,
    pub block_committed: u64,
    pub audience: Vec<AudienceMember>,
    pub scores: BTreeMap<[u8; 32], [u8; 32]>,
    /// Selected keys in canonical (sorted) order.
    pub ring: Vec<[u8; 32]>,
}

impl VoterDraw {
    pub fn ring_encoding(&self) -> Vec<u8> {
        self.ring.concat()
    }

    pub fn ring_hash(&self) -> [u8; 32] {
        ring_hash(&self.ring_encoding())
    }

    pub fn contains(&self, pk: &[u8; 32]) -> bool {
        self.ring.binary_search(pk).is_ok()
    }
}

/// `min(ceil(W * n_req), audience)`.
pub fn ring_size<T: ThresholdScalar>(n_req: u64, w: T, audience: usize) -> usize {
    (w.ceil_times(n_req) as usize).min(audience)
}

/// Keys of the `k` best-scoring members, in canonical order. Higher score
/// wins; equal scores go to the smaller key.
pub fn top_k(seed: &Seed, pid: &[u8], audience: &[AudienceMember], k: usize) -> Vec<[u8; 32]> {
    let mut scored: Vec<([u8; 32], [u8; 32])> =
        audience.iter().map(|m| (vrf_score(seed, pid, &m.pk), m.pk)).collect();
    let better = |a: &([u8; 32], [u8; 32]), b: &([u8; 32], [u8; 32])| b.0.cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        if k > 0 {
            scored.select_nth_unstable_by(k - 1, better);
        }
        scored.truncate(k);
    }
    let mut ring: Vec<[u8; 32]> = scored.into_iter().map(|(_, pk)| pk).collect();
    ring.sort_unstable();
    ring
}

pub fn select_ring<T: ThresholdScalar>(inputs: &DrawInputs<'_>, w: T) -> Result<VoterDraw, SortitionError> {
    if inputs.audience.is_empty() {
        return Err(SortitionError::EmptyAudience);
    }
    let distinct: BTreeSet<_> = inputs.audience.iter().map(|m| m.pk).collect();
    if distinct.len() != inputs.audience.len() {
        return Err(SortitionError::DuplicateAudienceMember);
    }
    let k = ring_size(inputs.n_req, w, inputs.audience.len());
    let scores = inputs
        .audience
        .iter()
        .map(|m| (m.pk, vrf_score(&inputs.seed, inputs.pid, &m.pk)))
        .collect();
    Ok(VoterDraw {
        pid: inputs.pid.to_vec(),
        block_committed: inputs.block_committed,
        audience: inputs.audience.to_vec(),
        scores,
        ring: top_k(&inputs.seed, inputs.pid, inputs.audience, k),
    })
}

/// Direction of the epoch threshold update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `W' = lambda W v_seen / v_exp`.
    AsPrinted,
    /// `W' = lambda W v_exp / v_seen`: low turnout enlarges rings.
    #[default]
    Reciprocal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochThreshold<T> {
    pub epoch: u64,
    pub w: T,
    pub v_exp: u64,
    pub v_seen: u64,
    pub lambda: T,
}

impl<T: ThresholdScalar> EpochThreshold<T> {
    pub fn new(w: T, lambda: T) -> Self {
        EpochThreshold { epoch: 0, w, v_exp: 0, v_seen: 0, lambda }
    }

    /// Count a poll whose window lies inside the current epoch.
    pub fn record_poll(&mut self, n_req: u64, n_seen: u64) {
        self.v_exp += n_req;
        self.v_seen += n_seen;
    }

    /// Close the epoch: new multiplier, counters reset.
    pub fn advance(&self, rule: ThresholdRule) -> Self {
        let w = match rule {
            ThresholdRule::AsPrinted => scaled(self.w, self.lambda, self.v_seen, self.v_exp),
            ThresholdRule::Reciprocal => scaled(self.w, self.lambda, self.v_exp, self.v_seen),
        };
        EpochThreshold { epoch: self.epoch + 1, w, v_exp: 0, v_seen: 0, lambda: self.lambda }
    }
}

/// `lambda * w * num / den`, or `w` unchanged when the ratio is undefined or
/// would make `w` non-positive.
fn scaled<T: ThresholdScalar>(w: T, lambda: T, num: u64, den: u64) -> T {
    if den == 0 || num == 0 {
        return w;
    }
    lambda * w * T::from_count(num) / T::from_count(den)
}

/// The update as printed: `W' = lambda W v_seen / v_exp`.
pub fn update_threshold<T: ThresholdScalar>(t: &EpochThreshold<T>) -> EpochThreshold<T> {
    t.advance(ThresholdRule::AsPrinted)
}

/// Update with every poll's turnout rescaled to a common size `n_prime`, so
/// large polls do not dominate. `polls` holds `(n_req, n_seen)` pairs.
pub fn normalized_update<T: ThresholdScalar>(
    w: T,
    lambda: T,
    n_prime: u64,
    polls: &[(u64, u64)],
    rule: ThresholdRule,
) -> T {
    let np = T::from_count(n_prime);
    let v_exp = np * T::from_count(polls.len() as u64);
    let v_seen = polls
        .iter()
        .filter(|(n_req, _)| *n_req > 0)
        .fold(T::zero(), |acc, &(n_req, seen)| acc + np / T::from_count(n_req) * T::from_count(seen));
    if v_exp == T::zero() || v_seen == T::zero() {
        return w;
    }
    match rule {
        ThresholdRule::AsPrinted => lambda * w * v_seen / v_exp,
        ThresholdRule::Reciprocal => lambda * w * v_exp / v_seen,
    }
}

/// Relative deviation bound for a group holding fraction `x` of the
/// audience in a ring of size `n`: `sqrt(3 / (x n) * ln(2 / eps))`.
pub fn fairness_delta<T: Real>(x: T, n: T, eps: T) -> T {
    (T::lit(3.0) / (x * n) * (T::lit(2.0) / eps).ln()).sqrt()
}
