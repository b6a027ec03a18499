// SPDX-License-Identifier: Apache-2.0
//! Simulation configuration, read from JSON.

use pollring::sortition::{compute_bwait, ThresholdRule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("config JSON: {0}")]
    Json(String),
}

/// Misbehaviour switched on for a malicious node. The honest profile has
/// every flag off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorProfile {
    /// Omit polls from poll lists and eligibility answers.
    pub drop_polls: bool,
    /// Answer ring queries with a plausible but wrong ring.
    pub wrong_ring_hash: bool,
    /// Flip signature verdicts.
    pub wrong_verification_claims: bool,
    /// Never answer queries and never publish a tx pool.
    pub unresponsive: bool,
    /// Publish empty tx pools.
    pub drop_transactions: bool,
    /// Put transactions from other shards into the pool.
    pub violate_fmap: bool,
}

impl BehaviorProfile {
    pub const HONEST: BehaviorProfile = BehaviorProfile {
        drop_polls: false,
        wrong_ring_hash: false,
        wrong_verification_claims: false,
        unresponsive: false,
        drop_transactions: false,
        violate_fmap: false,
    };

    pub fn is_honest(&self) -> bool {
        *self == Self::HONEST
    }
}

/// How pending transactions are mapped to the block's pool shards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FMap {
    /// `Hash(i‖tx) mod shards`.
    #[serde(rename = "DET_TX_HASHMAP")]
    DetTx,
    /// Votes by `Hash(i‖PID) mod shards`, other transactions by tx id.
    #[default]
    #[serde(rename = "DET_GROUP_HASHMAP")]
    DetGroup,
}

/// Which mapped transactions a politician puts in its pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FSelect {
    #[serde(rename = "RANDOM_TX")]
    RandomTx,
    #[default]
    #[serde(rename = "RANDOM_GROUP")]
    RandomGroup,
    #[serde(rename = "OLDEST")]
    Oldest,
    #[serde(rename = "DEADLINE")]
    Deadline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TxPoolPolicy {
    pub f_map: FMap,
    pub f_select: FSelect,
    pub shards: u32,
    /// Transactions per pool.
    pub capacity: usize,
    /// Blocks a vote group may be held back to gather more votes, capped at
    /// `deadline - 2`. Zero disables holding.
    pub group_wait: u64,
}

impl Default for TxPoolPolicy {
    fn default() -> Self {
        TxPoolPolicy { f_map: FMap::DetGroup, f_select: FSelect::RandomGroup, shards: 45, capacity: 256, group_wait: 2 }
    }
}

/// Logical-clock constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timing {
    /// Base duration of a block round.
    pub block_ms: f64,
    /// One-way message latency.
    pub latency_ms: f64,
    /// Politician cost of one VRF hash.
    pub t_hash_us: f64,
    /// Politician cost of one signature verification.
    pub t_verif_ms: f64,
    pub n_thread: u32,
    /// Citizen costs for local recomputation.
    pub citizen_t_hash_us: f64,
    pub citizen_t_verif_ms: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Timing {
            block_ms: 1000.0,
            latency_ms: 50.0,
            t_hash_us: 1.0,
            t_verif_ms: 7.75,
            n_thread: 8,
            citizen_t_hash_us: 5.0,
            citizen_t_verif_ms: 26.0,
        }
    }
}

impl Timing {
    /// Wait for silent politicians during ring offload.
    pub fn t_h_ms(&self, audience: usize, k: usize) -> f64 {
        audience as f64 * k as f64 * self.t_hash_us / 1000.0 / self.n_thread.max(1) as f64
    }

    /// Wait for silent politicians during vote verification offload.
    pub fn t_r_ms(&self, k: usize) -> f64 {
        k as f64 * self.t_verif_ms / self.n_thread.max(1) as f64
    }
}

/// User and poll traffic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    /// First block with poll submissions; 0 means `b_wait + 2`.
    pub poll_start: u64,
    /// Last block with poll submissions; 0 means `poll_start`.
    pub poll_end: u64,
    pub polls_per_block: f64,
    pub n_req: u32,
    pub b_vw: u32,
    /// Probability a ring member does not vote.
    pub apathy: f64,
    /// Votes are submitted up to this many blocks after the window opens.
    pub max_vote_delay: u64,
    /// Per ring member: also submit a second, different vote.
    pub duplicate_rate: f64,
    /// Per ring member: submit another vote after the window closed.
    pub late_rate: f64,
    /// Per poll: one vote submitted before the ring exists.
    pub early_rate: f64,
    /// Per ring member: submit a vote signed over a wrong ring.
    pub forged_rate: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Workload {
            poll_start: 0,
            poll_end: 0,
            polls_per_block: 1.0,
            n_req: 100,
            b_vw: 10,
            apathy: 0.0,
            max_vote_delay: 3,
            duplicate_rate: 0.0,
            late_rate: 0.0,
            early_rate: 0.0,
            forged_rate: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Adversary {
    pub politician_fraction: f64,
    pub politician_behavior: BehaviorProfile,
    /// Malicious citizens propose empty blocks.
    pub citizen_fraction: f64,
    /// Redraw safe samples until each holds an honest politician.
    pub ensure_good_samples: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub politicians: usize,
    /// Active committee citizens per block.
    pub citizens: usize,
    pub users: usize,
    pub topics: u32,
    pub blocks: u64,
    pub b_wait: u64,
    pub epoch_length: u64,
    pub lambda: f64,
    pub initial_w: f64,
    pub rule: ThresholdRule,
    pub safe_sample: usize,
    pub pool: TxPoolPolicy,
    pub timing: Timing,
    pub workload: Workload,
    pub adversary: Adversary,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            politicians: 200,
            citizens: 2000,
            users: 1000,
            topics: 1,
            blocks: 35,
            b_wait: 4,
            epoch_length: 10,
            lambda: 1.0,
            initial_w: 1.0,
            rule: ThresholdRule::default(),
            safe_sample: 25,
            pool: TxPoolPolicy::default(),
            timing: Timing::default(),
            workload: Workload::default(),
            adversary: Adversary::default(),
        }
    }
}

fn fraction(name: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn poll_window(&self) -> (u64, u64) {
        let start = if self.workload.poll_start == 0 { self.b_wait + 2 } else { self.workload.poll_start };
        (start, self.workload.poll_end.max(start))
    }

    /// Rejects configs the simulator cannot run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.politicians == 0 || self.citizens == 0 || self.users < 2 {
            return bad("need at least one politician, one citizen and two users".into());
        }
        if self.topics == 0 {
            return bad("need at least one topic".into());
        }
        if self.safe_sample == 0 || self.safe_sample > self.politicians {
            return bad(format!("safe_sample must lie in 1..={}", self.politicians));
        }
        if self.pool.shards == 0 || self.pool.capacity == 0 {
            return bad("pool shards and capacity must be positive".into());
        }
        if self.b_wait == 0 || self.epoch_length == 0 {
            return bad("b_wait and epoch_length must be positive".into());
        }
        if self.workload.n_req == 0 || self.workload.b_vw == 0 {
            return bad("n_req and b_vw must be positive".into());
        }
        if !(self.lambda > 0.0 && self.initial_w > 0.0) {
            return bad("lambda and initial_w must be positive".into());
        }
        if !(self.workload.polls_per_block >= 0.0 && self.workload.polls_per_block.is_finite()) {
            return bad("polls_per_block must be a finite non-negative rate".into());
        }
        if self.timing.n_thread == 0 {
            return bad("n_thread must be positive".into());
        }
        let w = &self.workload;
        for (n, v) in [
            ("apathy", w.apathy),
            ("duplicate_rate", w.duplicate_rate),
            ("late_rate", w.late_rate),
            ("early_rate", w.early_rate),
            ("forged_rate", w.forged_rate),
            ("politician_fraction", self.adversary.politician_fraction),
            ("citizen_fraction", self.adversary.citizen_fraction),
        ] {
            fraction(n, v)?;
        }
        if self.adversary.ensure_good_samples
            && self.adversary.politician_fraction >= 1.0
            && !self.adversary.politician_behavior.is_honest()
        {
            return bad("ensure_good_samples needs at least one honest politician".into());
        }
        Ok(())
    }

    /// Ways the config leaves the threat model. Simulations still run.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let adv = &self.adversary;
        if !adv.politician_behavior.is_honest() && adv.politician_fraction > 0.8 {
            out.push(format!("politician_fraction {} leaves fewer than 20% honest politicians", adv.politician_fraction));
        }
        if adv.citizen_fraction > 0.25 {
            out.push(format!("citizen_fraction {} exceeds the 25% bound on malicious citizens", adv.citizen_fraction));
        }
        if let Ok(need) = compute_bwait(1.0 - adv.citizen_fraction.min(0.25), 2f64.powi(-30)) {
            if self.b_wait < need {
                out.push(format!("b_wait {} is below the {need} blocks that make ring seeds unpredictable", self.b_wait));
            }
        }
        if self.workload.n_req as usize >= self.users / self.topics as usize {
            out.push("n_req is not below the per-topic audience; polls will be rejected".into());
        }
        out
    }
}
