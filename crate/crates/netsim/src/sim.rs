// SPDX-License-Identifier: Apache-2.0
//! The block loop: users submit, politicians pool and answer, citizens
//! offload, the committee commits.

use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::{SigningKey, VerifyingKey};
use pollring::group::{hash32, ring_hash, HashDomain};
use pollring::ledger::{
    gs_verify, GsKey, Ledger, LedgerConfig, Message, PollId, Reject, RingSource, RingTask, SigCheck, StateSnapshot, Topic,
    Transaction, VoteValue,
};
use pollring::sortition::{top_k, vrf_score};
use pollring::urs::{self, Ring, UrsKeyPair, UrsParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{BehaviorProfile, ConfigError, SimConfig};
use crate::discovery::discover_polls;
use crate::evidence::{audit, AuditContext, Blacklist, BlacklistEntry, Claim, Evidence, GsWitness, Statement};
use crate::offload::{
    draw_safe_sample, offload_ring, offload_vote_verify, Accusation, RingAnswer, RingMemo, RingQuery, VoteItem,
};
use crate::pool::{misplaced, pool_assign, PendingTx, PoolSlot};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ledger refused a screened block at height {block}: {reason}")]
    Ledger { block: u64, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Citizen,
    Politician,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub hashes: u64,
    pub verifications: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u32,
    pub role: Role,
    #[serde(with = "hex::serde")]
    pub public_key: [u8; 32],
    pub behavior: BehaviorProfile,
    /// Citizens only: proposes empty blocks.
    #[serde(default)]
    pub malicious: bool,
    pub counters: NodeCounters,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockLog {
    pub number: u64,
    pub proposer: u32,
    pub proposer_honest: bool,
    pub pools: usize,
    pub txs_proposed: usize,
    pub txs_committed: usize,
    pub votes_committed: usize,
    pub rejected: BTreeMap<String, u64>,
    pub rings_drawn: usize,
    pub ring_fast_paths: usize,
    pub vote_fast_paths: usize,
    pub conflicts: usize,
    pub timeouts: usize,
    pub bad_samples: usize,
    pub time_ms: f64,
    pub blacklisted: Vec<u32>,
    pub state_root: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectTally {
    pub submitted: u64,
    pub as_expected: u64,
    pub unresolved: u64,
    /// Outcomes other than the expected one.
    pub other: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub blocks: u64,
    pub time_ms: f64,
    pub votes_submitted: u64,
    pub votes_committed: u64,
    pub votes_per_block: f64,
    pub votes_per_second: f64,
    pub txs_committed: u64,
    pub rejected: BTreeMap<String, u64>,
    pub mean_batch_size: f64,
    pub discovery_bytes: u64,
    pub discovery_challenges: u64,
    pub pending_at_end: u64,
    /// Keyed by what the submitter intended: admin, valid, duplicate_pair,
    /// late, early, forged.
    pub expectations: BTreeMap<String, ExpectTally>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Safety {
    /// Citizens with an honest politician in their sample that ended with a
    /// result different from local recomputation.
    pub good_citizen_mismatches: u64,
    /// Committee decisions different from local recomputation.
    pub committee_divergences: u64,
    pub discovery_mismatches: u64,
    /// Offloads where no sampled politician answered.
    pub protocol_failures: u64,
    pub bad_samples: u64,
    pub evidence_failures: u64,
    pub invariant: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PollTally {
    #[serde(with = "hex::serde")]
    pub pid: PollId,
    pub topic: Topic,
    pub b_p: u64,
    pub n_req: u32,
    pub ring_size: usize,
    pub window: (u64, u64),
    pub votes: u32,
    pub mean_rating: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub warnings: Vec<String>,
    pub nodes: Vec<NodeSpec>,
    pub blocks: Vec<BlockLog>,
    pub totals: Totals,
    pub safety: Safety,
    pub blacklist: Vec<BlacklistEntry>,
    pub polls: Vec<PollTally>,
    pub final_root: String,
}

impl SimReport {
    /// Safety properties that failed.
    pub fn violations(&self) -> Vec<String> {
        let s = &self.safety;
        let mut out = Vec::new();
        for (n, v) in [
            ("good citizen results differ from recomputation", s.good_citizen_mismatches),
            ("committee decisions differ from recomputation", s.committee_divergences),
            ("discovery results differ from the drawn rings", s.discovery_mismatches),
            ("blacklist evidence failed the audit", s.evidence_failures),
        ] {
            if v > 0 {
                out.push(format!("{n}: {v}"));
            }
        }
        if let Some(e) = &s.invariant {
            out.push(format!("ledger invariant: {e}"));
        }
        let bad = self.audit_blacklist();
        if !bad.is_empty() {
            out.push(format!("blacklist entries without valid evidence: {bad:?}"));
        }
        out
    }

    /// Re-audits every blacklist entry using only the report: block roots
    /// and politician keys. Returns the politicians whose evidence fails.
    pub fn audit_blacklist(&self) -> Vec<u32> {
        let roots: BTreeMap<u64, Vec<u8>> =
            self.blocks.iter().filter_map(|b| Some((b.number, hex::decode(&b.state_root).ok()?))).collect();
        let keys: Vec<VerifyingKey> = self
            .nodes
            .iter()
            .filter(|n| n.role == Role::Politician)
            .map(|n| VerifyingKey::from_bytes(&n.public_key).expect("politician key"))
            .collect();
        let params = UrsParams::default();
        let ctx = AuditContext {
            roots: &roots,
            politician_keys: &keys,
            urs: &params,
            b_wait: self.config.b_wait,
            f_map: self.config.pool.f_map,
            shards: self.config.pool.shards,
        };
        self.blacklist
            .iter()
            .filter(|e| e.evidence.statement().statement.politician != e.politician || !audit(&e.evidence, &ctx))
            .map(|e| e.politician)
            .collect()
    }
}

fn stream(seed: &[u8; 32], label: &[u8], parts: &[&[u8]]) -> ChaCha20Rng {
    let mut all: Vec<&[u8]> = vec![b"sim", seed, label];
    all.extend_from_slice(parts);
    ChaCha20Rng::from_seed(hash32(HashDomain::VRF, &all))
}

/// The first `round(fraction * n)` ids in a seed-determined order. Larger
/// fractions give supersets, so runs at different levels are nested.
fn pick_fraction(seed: &[u8; 32], label: &[u8], n: usize, fraction: f64) -> BTreeSet<u32> {
    let mut ids: Vec<([u8; 32], u32)> =
        (0..n as u32).map(|i| (hash32(HashDomain::VRF, &[b"rank", seed, label, &i.to_le_bytes()]), i)).collect();
    ids.sort_unstable();
    let k = (fraction * n as f64).round() as usize;
    ids.into_iter().take(k).map(|(_, i)| i).collect()
}

fn key_from(seed: &[u8; 32], label: &[u8], i: u64) -> SigningKey {
    SigningKey::from_bytes(&hash32(HashDomain::VRF, &[b"key", seed, label, &i.to_le_bytes()]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Expect {
    Admin,
    Valid,
    Pair(u64),
    Late,
    Early,
    Forged,
}

impl Expect {
    fn label(self) -> &'static str {
        match self {
            Expect::Admin => "admin",
            Expect::Valid => "valid",
            Expect::Pair(_) => "duplicate_pair",
            Expect::Late => "late",
            Expect::Early => "early",
            Expect::Forged => "forged",
        }
    }

    fn wanted(self) -> Option<Reject> {
        match self {
            Expect::Admin | Expect::Valid | Expect::Pair(_) => None,
            Expect::Late => Some(Reject::WindowClosed),
            Expect::Early => Some(Reject::WindowNotOpen),
            Expect::Forged => Some(Reject::UrsVerifyFailed),
        }
    }
}

struct Tracked {
    expect: Expect,
    outcome: Option<Result<u64, Reject>>,
}

struct User {
    keys: UrsKeyPair,
    citizen: SigningKey,
    topic: Topic,
}

struct Politician {
    key: SigningKey,
    behavior: BehaviorProfile,
    counters: NodeCounters,
}

struct CitizenNode {
    key: SigningKey,
    malicious: bool,
    counters: NodeCounters,
}

/// Accusation with what is needed to turn it into evidence once the block
/// is committed.
enum Pending {
    Offload(Accusation),
    Ready(Evidence),
}

struct Sim<'c> {
    cfg: &'c SimConfig,
    seed: [u8; 32],
    params: UrsParams,
    ledger: Ledger,
    users: Vec<User>,
    user_by_pk: BTreeMap<[u8; 32], usize>,
    creators: Vec<SigningKey>,
    politicians: Vec<Politician>,
    citizens: Vec<CitizenNode>,
    blacklist: Blacklist,
    roots: BTreeMap<u64, Vec<u8>>,
    scheduled: BTreeMap<u64, Vec<(Transaction, Expect, Option<u64>)>>,
    pending: Vec<PendingTx>,
    seq: u64,
    tracked: BTreeMap<[u8; 32], Tracked>,
    next_pair: u64,
    ratings: BTreeMap<PollId, (u64, u64)>,
    totals: Totals,
    safety: Safety,
    logs: Vec<BlockLog>,
    batch_groups: u64,
    batch_votes: u64,
}

/// Runs the configured scenario to completion. Deterministic in the config.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimReport, SimError> {
    run_simulation_with_state(cfg).map(|(r, _)| r)
}

/// [`run_simulation`] plus the final global state.
pub fn run_simulation_with_state(cfg: &SimConfig) -> Result<(SimReport, StateSnapshot), SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg);
    for b in 1..=cfg.blocks {
        sim.step(b)?;
    }
    let snapshot = sim.ledger.snapshot();
    Ok((sim.finish(), snapshot))
}

impl<'c> Sim<'c> {
    fn new(cfg: &'c SimConfig) -> Self {
        let seed = hash32(HashDomain::VRF, &[b"sim-seed", &cfg.seed.to_le_bytes()]);
        let params = UrsParams::default();
        let users: Vec<User> = (0..cfg.users as u64)
            .map(|i| User {
                keys: urs::keygen(&params, &mut stream(&seed, b"user", &[&i.to_le_bytes()])),
                citizen: key_from(&seed, b"user-citizen", i),
                topic: (i % cfg.topics as u64) as Topic + 1,
            })
            .collect();
        let user_by_pk = users.iter().enumerate().map(|(i, u)| (u.keys.pk.to_bytes(), i)).collect();
        let creators: Vec<SigningKey> = (0..4).map(|i| key_from(&seed, b"creator", i)).collect();
        let bad_p = pick_fraction(&seed, b"politician", cfg.politicians, cfg.adversary.politician_fraction);
        let politicians = (0..cfg.politicians as u32)
            .map(|i| Politician {
                key: key_from(&seed, b"politician", i as u64),
                behavior: if bad_p.contains(&i) { cfg.adversary.politician_behavior } else { BehaviorProfile::HONEST },
                counters: NodeCounters::default(),
            })
            .collect();
        let bad_c = pick_fraction(&seed, b"citizen", cfg.citizens, cfg.adversary.citizen_fraction);
        let citizens = (0..cfg.citizens as u32)
            .map(|i| CitizenNode {
                key: key_from(&seed, b"citizen", i as u64),
                malicious: bad_c.contains(&i),
                counters: NodeCounters::default(),
            })
            .collect();
        let mut lc = LedgerConfig::permissionless(
            1..=cfg.topics,
            users.iter().map(|u| u.citizen.verifying_key().to_bytes()).chain(creators.iter().map(|c| c.verifying_key().to_bytes())),
        );
        lc.b_wait = cfg.b_wait;
        lc.epoch_length = cfg.epoch_length;
        lc.lambda = cfg.lambda;
        lc.initial_w = cfg.initial_w;
        lc.rule = cfg.rule;
        lc.genesis_seed = hash32(HashDomain::VRF, &[b"genesis", &seed]);
        lc.urs = params.clone();
        let mut sim = Sim {
            cfg,
            seed,
            params,
            ledger: Ledger::new(lc),
            users,
            user_by_pk,
            creators,
            politicians,
            citizens,
            blacklist: Blacklist::default(),
            roots: BTreeMap::new(),
            scheduled: BTreeMap::new(),
            pending: Vec::new(),
            seq: 0,
            tracked: BTreeMap::new(),
            next_pair: 0,
            ratings: BTreeMap::new(),
            totals: Totals::default(),
            safety: Safety::default(),
            logs: Vec::new(),
            batch_groups: 0,
            batch_votes: 0,
        };
        sim.schedule_admin();
        sim
    }

    fn schedule(&mut self, block: u64, tx: Transaction, expect: Expect, deadline: Option<u64>) {
        self.scheduled.entry(block).or_default().push((tx, expect, deadline));
    }

    fn schedule_admin(&mut self) {
        let regs: Vec<Transaction> = self
            .users
            .iter()
            .map(|u| Transaction::signed_by(Message::RegisterVoter { pk: u.keys.pk.to_bytes(), topic: u.topic }, &u.citizen))
            .collect();
        for tx in regs {
            self.schedule(1, tx, Expect::Admin, None);
        }
        let (start, end) = self.cfg.poll_window();
        let rate = self.cfg.workload.polls_per_block;
        let mut idx = 0u64;
        for b in start..=end.min(self.cfg.blocks) {
            let n = ((b - start + 1) as f64 * rate).floor() as u64 - ((b - start) as f64 * rate).floor() as u64;
            for _ in 0..n {
                let h = hash32(HashDomain::VRF, &[b"pid", &self.seed, &idx.to_le_bytes()]);
                let pid: PollId = h[..8].try_into().unwrap();
                let topic = (idx % self.cfg.topics as u64) as Topic + 1;
                let msg = Message::create_poll(pid, topic, self.cfg.workload.n_req, self.cfg.workload.b_vw, &format!("poll {idx}"));
                let tx = Transaction::signed_by(msg, &self.creators[(idx % 4) as usize]);
                self.schedule(b, tx, Expect::Admin, None);
                idx += 1;
            }
        }
    }

    fn eligible_politicians(&self) -> Vec<u32> {
        (0..self.politicians.len() as u32).filter(|p| !self.blacklist.contains(*p)).collect()
    }

    fn witness(&mut self, key: GsKey) -> Option<GsWitness> {
        let (value, proof) = self.ledger.gs_read(&key);
        Some(GsWitness { root_block: self.ledger.height(), key: key.to_bytes(), value: value?, proof })
    }

    fn sign_statement(&self, politician: u32, block: u64, claim: Claim) -> crate::evidence::SignedStatement {
        Statement { politician, block, claim }.sign(&self.politicians[politician as usize].key)
    }

    fn step(&mut self, b: u64) -> Result<(), SimError> {
        let mut log = BlockLog { number: b, ..BlockLog::default() };
        let mut caught: BTreeMap<u32, Pending> = BTreeMap::new();

        self.discovery(b, &mut caught);
        self.schedule_early_votes(b);
        for (tx, expect, deadline) in self.scheduled.remove(&b).unwrap_or_default() {
            let p = PendingTx::new(tx, b, self.seq, deadline);
            self.seq += 1;
            if matches!(expect, Expect::Valid | Expect::Pair(_)) {
                self.totals.votes_submitted += 1;
            }
            self.tracked.insert(p.id, Tracked { expect, outcome: None });
            self.pending.push(p);
        }

        let eligible = self.eligible_politicians();
        let mut prng = stream(&self.seed, b"proposer", &[&b.to_le_bytes()]);
        let proposer = prng.gen_range(0..self.citizens.len()) as u32;
        let proposer_honest = !self.citizens[proposer as usize].malicious;
        let proposer_key = self.citizens[proposer as usize].key.verifying_key().to_bytes();
        log.proposer = proposer;
        log.proposer_honest = proposer_honest;

        // Pools and block assembly.
        let mut txs: Vec<Transaction> = Vec::new();
        let mut used: Vec<usize> = Vec::new();
        if proposer_honest && !eligible.is_empty() {
            let mut order = eligible.clone();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut stream(&self.seed, b"slots", &[&b.to_le_bytes()]));
            let slots: Vec<PoolSlot> = (0..self.cfg.pool.shards)
                .map(|j| {
                    let p = order[j as usize % order.len()];
                    PoolSlot { slot: j, politician: p, behavior: self.politicians[p as usize].behavior }
                })
                .collect();
            let commits = pool_assign(&self.cfg.pool, &self.pending, b, &slots, &self.seed);
            log.pools = commits.len();
            let mut seen = BTreeSet::new();
            let mut bytes = 4usize;
            let max = self.ledger.config().max_block_bytes;
            for c in &commits {
                let bad = misplaced(&self.cfg.pool, &self.pending, b, c);
                if let Some(&i) = bad.first() {
                    let claim = Claim::Pool { slot: c.slot, txids: c.txs.iter().map(|&i| self.pending[i].id).collect() };
                    let statement = self.sign_statement(c.politician, b, claim);
                    let ev = Evidence::PoolMapping { statement, tx: self.pending[i].tx.to_bytes() };
                    caught.entry(c.politician).or_insert(Pending::Ready(ev));
                    continue;
                }
                for &i in &c.txs {
                    let len = 4 + self.pending[i].tx.encoded_len();
                    if bytes + len <= max && seen.insert(i) {
                        bytes += len;
                        used.push(i);
                    }
                }
            }
            txs = used.iter().map(|&i| self.pending[i].tx.clone()).collect();
        }
        log.txs_proposed = txs.len();

        // Ground truth the politicians compute.
        let tasks = self
            .ledger
            .ring_tasks(&proposer_key)
            .map_err(|e| SimError::Ledger { block: b, reason: e.to_string() })?;
        let truth_rings: Vec<Vec<[u8; 32]>> = tasks.iter().map(RingTask::draw).collect();
        let truth_verdicts = self.ledger.signature_verdicts(&txs);
        let items: Vec<VoteItem> = truth_verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_some())
            .map(|(i, _)| VoteItem {
                index: i,
                txid: self.pending[used[i]].id,
                ring_len: txs[i].poll_id().and_then(|p| self.ledger.poll(&p)).and_then(|r| r.ring_keys.as_ref()).map_or(0, Vec::len),
            })
            .collect();
        let truth_items: Vec<bool> = items.iter().map(|it| truth_verdicts[it.index].unwrap()).collect();
        let mut groups: BTreeMap<PollId, u64> = BTreeMap::new();
        for it in &items {
            *groups.entry(txs[it.index].poll_id().unwrap()).or_default() += 1;
        }
        self.batch_groups += groups.len() as u64;
        self.batch_votes += items.len() as u64;

        let honest_ring = RingAnswer::honest(&tasks, &truth_rings);
        let adv = self.cfg.adversary.politician_behavior;
        let corrupt_rings: Vec<Vec<[u8; 32]>> = tasks.iter().zip(&truth_rings).map(|(t, r)| corrupt_ring(t, r)).collect();
        let mut bad_ring = if adv.wrong_ring_hash { RingAnswer::honest(&tasks, &corrupt_rings) } else { honest_ring.clone() };
        if adv.drop_polls {
            for list in bad_ring.lists.values_mut() {
                list.remove(0);
            }
        }
        let bad_items: Vec<bool> = if adv.wrong_verification_claims {
            items.iter().zip(&truth_items).map(|(it, &v)| if it.txid[0] & 1 == 1 { !v } else { v }).collect()
        } else {
            truth_items.clone()
        };
        let b_p = b.saturating_sub(self.cfg.b_wait);
        let mut committed_lists = BTreeMap::new();
        for t in &tasks {
            if let std::collections::btree_map::Entry::Vacant(e) = committed_lists.entry(t.topic) {
                let v = self.ledger.store().get(&GsKey::BlockwisePolls(b_p, t.topic).to_bytes());
                e.insert(v.and_then(|v| v.try_into().ok()).unwrap_or([0; 32]));
            }
        }
        let query = RingQuery::new(b, b_p, &tasks, committed_lists);
        let audience_work: u64 = tasks.iter().map(|t| t.audience.len() as u64).sum();
        for (i, p) in self.politicians.iter_mut().enumerate() {
            if !self.blacklist.contains(i as u32) && !p.behavior.unresponsive {
                p.counters.hashes += audience_work;
                p.counters.verifications += items.len() as u64;
            }
        }

        // Citizens.
        let politicians = &self.politicians;
        let ring_answer = |p: u32| -> Option<&RingAnswer> {
            let beh = politicians[p as usize].behavior;
            if beh.unresponsive {
                None
            } else if beh.is_honest() {
                Some(&honest_ring)
            } else {
                Some(&bad_ring)
            }
        };
        let vote_answer = |p: u32| -> Option<&[bool]> {
            let beh = politicians[p as usize].behavior;
            if beh.unresponsive {
                None
            } else if beh.is_honest() {
                Some(&truth_items)
            } else {
                Some(&bad_items)
            }
        };
        let truth_hashes: Vec<[u8; 32]> = truth_rings.iter().map(|r| ring_hash(&r.concat())).collect();
        let mut memo = RingMemo::new();
        let mut ring_votes: Vec<BTreeMap<[u8; 32], u64>> = vec![BTreeMap::new(); tasks.len()];
        let mut verdict_votes: Vec<(u64, u64)> = vec![(0, 0); items.len()];
        let mut sent: BTreeMap<u32, u64> = BTreeMap::new();
        let mut worst = 0f64;
        let honest_pred = |p: u32| politicians[p as usize].behavior.is_honest();
        let require: Option<&dyn Fn(u32) -> bool> = if self.cfg.adversary.ensure_good_samples { Some(&honest_pred) } else { None };
        let mut accusations: Vec<Accusation> = Vec::new();
        let mut pick = stream(&self.seed, b"ring-source", &[&b.to_le_bytes()]);
        for c in 0..self.citizens.len() as u32 {
            let sample = draw_safe_sample(&eligible, self.cfg.safe_sample, &self.seed, b, c, require);
            let good = sample.iter().any(|&p| honest_pred(p));
            if !good {
                log.bad_samples += 1;
            }
            let ro = offload_ring(&query, &sample, &ring_answer, &self.cfg.timing, &mut memo);
            let vo = offload_vote_verify(
                &items,
                &sample,
                &vote_answer,
                &self.cfg.timing,
                &mut |j| truth_items[j],
                &mut pick,
            );
            for &p in &sample {
                if ring_answer(p).is_some() {
                    *sent.entry(p).or_default() += (tasks.len() * 40 + items.len().div_ceil(8)) as u64;
                }
            }
            match &ro.hashes {
                Ok(h) => {
                    if good && *h != truth_hashes {
                        self.safety.good_citizen_mismatches += 1;
                    }
                    for (j, hash) in h.iter().enumerate() {
                        *ring_votes[j].entry(*hash).or_default() += 1;
                    }
                }
                Err(_) => self.safety.protocol_failures += 1,
            }
            match &vo.verdicts {
                Ok(v) => {
                    if good && *v != truth_items {
                        self.safety.good_citizen_mismatches += 1;
                    }
                    for (j, &ok) in v.iter().enumerate() {
                        if ok {
                            verdict_votes[j].0 += 1;
                        } else {
                            verdict_votes[j].1 += 1;
                        }
                    }
                }
                Err(_) => self.safety.protocol_failures += 1,
            }
            if !tasks.is_empty() && ro.cost.fast_path {
                log.ring_fast_paths += 1;
            }
            if !items.is_empty() && vo.cost.fast_path {
                log.vote_fast_paths += 1;
            }
            log.conflicts += ro.cost.conflicts + vo.cost.conflicts;
            log.timeouts += ro.cost.timed_out as usize + vo.cost.timed_out as usize;
            worst = worst.max(ro.cost.time_ms + vo.cost.time_ms);
            let node = &mut self.citizens[c as usize].counters;
            node.hashes += ro.cost.vrf_evals;
            node.verifications += vo.cost.verifications;
            node.bytes_received += ro.cost.bytes_in + vo.cost.bytes_in;
            accusations.extend(ro.accused.into_iter().chain(vo.accused));
        }
        for (p, bytes) in sent {
            self.politicians[p as usize].counters.bytes_sent += bytes;
        }
        for a in accusations {
            caught.entry(a.politician()).or_insert(Pending::Offload(a));
        }
        self.safety.bad_samples += log.bad_samples as u64;

        // Committee decision.
        let mut rings: BTreeMap<PollId, Vec<[u8; 32]>> = BTreeMap::new();
        for (j, t) in tasks.iter().enumerate() {
            let decided = ring_votes[j].iter().max_by_key(|(h, n)| (**n, std::cmp::Reverse(**h))).map(|(h, _)| *h);
            let keys = match decided {
                Some(h) if h == truth_hashes[j] => truth_rings[j].clone(),
                Some(h) if h == ring_hash(&corrupt_rings[j].concat()) => corrupt_rings[j].clone(),
                _ => truth_rings[j].clone(),
            };
            if keys != truth_rings[j] {
                self.safety.committee_divergences += 1;
            }
            rings.insert(t.pid, keys);
        }
        let mut verdicts: Vec<Option<bool>> = vec![None; txs.len()];
        for (j, it) in items.iter().enumerate() {
            let (yes, no) = verdict_votes[j];
            let v = if yes == no { truth_items[j] } else { yes > no };
            if v != truth_items[j] {
                self.safety.committee_divergences += 1;
            }
            verdicts[it.index] = Some(v);
        }

        // Screen, commit.
        let screened = self.ledger.filter_valid_with(&txs, SigCheck::Delegated(&verdicts));
        let mut valid = Vec::new();
        let mut valid_verdicts = Vec::new();
        let mut gone: BTreeSet<usize> = BTreeSet::new();
        for (i, r) in screened.iter().enumerate() {
            let id = self.pending[used[i]].id;
            gone.insert(used[i]);
            match r {
                Ok(()) => {
                    valid.push(txs[i].clone());
                    valid_verdicts.push(verdicts[i]);
                }
                Err(reason) => {
                    *log.rejected.entry(reason.code()).or_default() += 1;
                    if let Some(t) = self.tracked.get_mut(&id) {
                        t.outcome = Some(Err(*reason));
                    }
                }
            }
        }
        let committed_ids: Vec<[u8; 32]> =
            screened.iter().enumerate().filter(|(_, r)| r.is_ok()).map(|(i, _)| self.pending[used[i]].id).collect();
        self.ledger
            .apply_block_full(valid.clone(), &proposer_key, SigCheck::Delegated(&valid_verdicts), RingSource::Delegated(&rings))
            .map_err(|e| SimError::Ledger { block: b, reason: e.to_string() })?;
        self.roots.insert(b, self.ledger.root().to_vec());
        for (tx, id) in valid.iter().zip(&committed_ids) {
            if let Some(t) = self.tracked.get_mut(id) {
                t.outcome = Some(Ok(b));
            }
            if let Message::CreateVote { pid, vote } = &tx.message {
                log.votes_committed += 1;
                let e = self.ratings.entry(*pid).or_default();
                e.0 += vote.rating as u64;
                e.1 += 1;
            }
        }
        log.txs_committed = valid.len();
        log.rings_drawn = tasks.len();
        let mut idx = 0;
        self.pending.retain(|_| {
            let keep = !gone.contains(&idx);
            idx += 1;
            keep
        });

        // Evidence for everyone caught this block.
        for (p, c) in caught {
            let ev = match c {
                Pending::Ready(ev) => Some(ev),
                Pending::Offload(a) => self.offload_evidence(b, a, &items, &txs),
            };
            let Some(ev) = ev else {
                self.safety.evidence_failures += 1;
                continue;
            };
            if self.audit(&ev) {
                if self.blacklist.insert(b, ev) {
                    log.blacklisted.push(p);
                }
            } else {
                self.safety.evidence_failures += 1;
            }
        }

        log.time_ms = self.cfg.timing.block_ms + worst;
        log.state_root = hex::encode(self.ledger.root());
        for (k, v) in &log.rejected {
            *self.totals.rejected.entry(k.clone()).or_default() += v;
        }
        self.totals.time_ms += log.time_ms;
        self.totals.votes_committed += log.votes_committed as u64;
        self.totals.txs_committed += log.txs_committed as u64;
        self.logs.push(log);
        Ok(())
    }

    fn audit(&self, ev: &Evidence) -> bool {
        let keys: Vec<VerifyingKey> = self.politicians.iter().map(|p| p.key.verifying_key()).collect();
        let ctx = AuditContext {
            roots: &self.roots,
            politician_keys: &keys,
            urs: &self.params,
            b_wait: self.cfg.b_wait,
            f_map: self.cfg.pool.f_map,
            shards: self.cfg.pool.shards,
        };
        audit(ev, &ctx)
    }

    fn offload_evidence(&mut self, b: u64, a: Accusation, items: &[VoteItem], txs: &[Transaction]) -> Option<Evidence> {
        match a {
            Accusation::PollList { politician, topic, b_p, pids } => {
                let committed = self.witness(GsKey::BlockwisePolls(b_p, topic))?;
                let statement = self.sign_statement(politician, b, Claim::PollList { topic, b_p, pids });
                Some(Evidence::PollList { statement, committed })
            }
            Accusation::RingHash { politician, pid, hash } => {
                let poll = self.witness(GsKey::Poll(pid))?;
                let statement = self.sign_statement(politician, b, Claim::RingHash { pid, hash });
                Some(Evidence::RingHash { statement, poll })
            }
            Accusation::Verdict { politician, vote, valid } => {
                let it = items[vote];
                let tx = &txs[it.index];
                let pid = tx.poll_id()?;
                let ring = self.ledger.poll(&pid)?.ring_keys.clone()?;
                let poll = self.witness(GsKey::Poll(pid))?;
                let statement = self.sign_statement(politician, b, Claim::Verdict { txid: it.txid, valid });
                Some(Evidence::Verdict { statement, tx: tx.to_bytes(), ring, poll })
            }
        }
    }

    /// Users whose ring became usable this block ask every politician for
    /// their open polls and schedule their votes.
    fn discovery(&mut self, b: u64, caught: &mut BTreeMap<u32, Pending>) {
        let Some(b_p) = b.checked_sub(1 + self.cfg.b_wait) else { return };
        let b_wait = self.cfg.b_wait;
        let fresh: Vec<PollId> = self
            .ledger
            .polls_committed_at(b_p)
            .iter()
            .copied()
            .filter(|p| self.ledger.poll(p).is_some_and(|r| r.ring_keys.is_some()))
            .collect();
        if fresh.is_empty() {
            return;
        }
        let open: Vec<(PollId, Vec<[u8; 32]>)> = self
            .ledger
            .polls()
            .filter(|r| {
                let (o, c) = r.window(b_wait);
                o <= b && b <= c
            })
            .filter_map(|r| Some((r.pid, r.ring_keys.clone()?)))
            .collect();
        let users: BTreeSet<[u8; 32]> = fresh
            .iter()
            .flat_map(|p| self.ledger.poll(p).unwrap().ring_keys.clone().unwrap())
            .collect();
        let eligible = self.eligible_politicians();
        let drop_bit = |pid: &PollId| hash32(HashDomain::VRF, &[b"drop", pid])[0] & 1 == 0;
        let mut witnesses: BTreeMap<PollId, Option<(GsWitness, Vec<[u8; 32]>)>> = BTreeMap::new();
        let mut learned = Vec::new();
        for u in users {
            let honest: Vec<PollId> = open.iter().filter(|(_, r)| r.binary_search(&u).is_ok()).map(|(p, _)| *p).collect();
            let dropped: Vec<PollId> = honest.iter().copied().filter(|p| !drop_bit(p)).collect();
            let answers: Vec<(u32, Option<&[PollId]>)> = eligible
                .iter()
                .map(|&p| {
                    let beh = self.politicians[p as usize].behavior;
                    let a: Option<&[PollId]> = if beh.unresponsive {
                        None
                    } else if beh.drop_polls {
                        Some(&dropped)
                    } else {
                        Some(&honest)
                    };
                    (p, a)
                })
                .collect();
            let ledger = &mut self.ledger;
            let mut check = |pid: &PollId| -> Option<bool> {
                let w = witnesses
                    .entry(*pid)
                    .or_insert_with(|| {
                        let rec = ledger.poll(pid)?;
                        let ring = rec.ring_keys.clone()?;
                        let key = GsKey::Poll(*pid);
                        let (value, proof) = ledger.gs_read(&key);
                        let w = GsWitness { root_block: ledger.height(), key: key.to_bytes(), value: value?, proof };
                        Some((w, ring))
                    })
                    .as_ref()?;
                let root = ledger.root();
                if !gs_verify(root, &w.0.key, Some(&w.0.value), &w.0.proof) {
                    return None;
                }
                let entry = pollring::ledger::PollEntry::from_bytes(&w.0.value).ok()?;
                if entry.ring_hash != Some(ring_hash(&w.1.concat())) {
                    return None;
                }
                let open = entry.b_n + b_wait < b && b <= entry.b_n + b_wait + entry.b_vw as u64;
                Some(open && w.1.binary_search(&u).is_ok())
            };
            let ring_bytes = |pid: &PollId| {
                open.iter().find(|(p, _)| p == pid).map_or(0, |(_, r)| 32 * r.len() as u64) + 32 * 40
            };
            let out = discover_polls(&answers, &mut check, &ring_bytes);
            self.totals.discovery_bytes += out.bytes_in;
            self.totals.discovery_challenges += out.challenged as u64;
            for (p, a) in &answers {
                if let Some(a) = a {
                    self.politicians[*p as usize].counters.bytes_sent += 8 * a.len() as u64;
                }
            }
            if out.pids != honest {
                self.safety.discovery_mismatches += 1;
            }
            for (p, pid) in out.accused {
                if caught.contains_key(&p) || self.blacklist.contains(p) {
                    continue;
                }
                let Some(Some((w, ring))) = witnesses.get(&pid).cloned() else { continue };
                let claim_pids = answers.iter().find(|a| a.0 == p).and_then(|a| a.1).unwrap_or(&[]).to_vec();
                let statement = self.sign_statement(p, b, Claim::Eligible { user: u, pids: claim_pids });
                caught.insert(p, Pending::Ready(Evidence::Eligibility { statement, pid, ring, poll: w }));
            }
            learned.extend(out.pids.into_iter().filter(|p| fresh.contains(p)).map(|p| (u, p)));
        }
        self.schedule_votes(b, &learned);
    }

    /// The votes user `u` submits on `pid`, whose window opens at `open`.
    /// Duplicate pairs carry a placeholder id.
    fn make_votes(&self, open: u64, u: [u8; 32], pid: PollId) -> Vec<(u64, Transaction, Expect, u64)> {
        let mut out = Vec::new();
        let Some(&ui) = self.user_by_pk.get(&u) else { return out };
        let rec = self.ledger.poll(&pid).unwrap();
        let close = rec.window(self.cfg.b_wait).1;
        let keys = rec.ring_keys.clone().unwrap();
        let ring = rec.ring().unwrap().clone();
        let w = self.cfg.workload;
        let mut rng = stream(&self.seed, b"vote", &[&u, &pid]);
        if rng.gen::<f64>() < w.apathy {
            return out;
        }
        let delay = rng.gen_range(0..=w.max_vote_delay.min(w.b_vw as u64 - 1));
        let at = open + delay;
        let sk = self.users[ui].keys.sk;
        let rating: u8 = rng.gen_range(1..=5);
        let sign = |text: &str, rating: u8, ring: &Ring, rng: &mut ChaCha20Rng| {
            Transaction::vote(&self.params, pid, VoteValue::new(rating, text), ring, &sk, rng).expect("ring member signs")
        };
        let first = sign(&format!("user {ui}"), rating, &ring, &mut rng);
        let dup = rng.gen::<f64>() < w.duplicate_rate;
        let late = rng.gen::<f64>() < w.late_rate;
        let forged = rng.gen::<f64>() < w.forged_rate;
        if dup {
            let again = sign("again", rating % 5 + 1, &ring, &mut rng);
            out.push((at, first, Expect::Pair(0), close));
            out.push((at, again, Expect::Pair(0), close));
        } else {
            out.push((at, first, Expect::Valid, close));
        }
        if late {
            let tx = sign("late", rating, &ring, &mut rng);
            out.push((close + 1 + rng.gen_range(0..2), tx, Expect::Late, close));
        }
        if forged {
            // Swap one other member for an outsider and sign over that ring.
            let outsider =
                self.ledger.audience(rec.topic, rec.b_p).into_iter().map(|m| m.pk).find(|k| keys.binary_search(k).is_err());
            let victim = keys.iter().copied().find(|k| *k != u);
            if let (Some(o), Some(v)) = (outsider, victim) {
                let mut fake: Vec<[u8; 32]> = keys.iter().copied().filter(|k| *k != v).chain([o]).collect();
                fake.sort_unstable();
                let tx = sign("forged", rating, &Ring::from_keys(&fake).unwrap(), &mut rng);
                out.push((at, tx, Expect::Forged, close));
            }
        }
        out
    }

    fn schedule_votes(&mut self, open: u64, learned: &[([u8; 32], PollId)]) {
        let made: Vec<Vec<(u64, Transaction, Expect, u64)>> =
            learned.par_iter().map(|(u, pid)| self.make_votes(open, *u, *pid)).collect();
        for votes in made {
            let pair = self.next_pair;
            let mut paired = false;
            for (at, tx, expect, close) in votes {
                let expect = if let Expect::Pair(_) = expect {
                    paired = true;
                    Expect::Pair(pair)
                } else {
                    expect
                };
                self.schedule(at, tx, expect, Some(close));
            }
            if paired {
                self.next_pair += 1;
            }
        }
    }

    /// Votes on polls committed in the previous block, before any ring
    /// exists, signed over a two-member ring.
    fn schedule_early_votes(&mut self, b: u64) {
        if self.cfg.workload.early_rate <= 0.0 || b < 2 {
            return;
        }
        let pids = self.ledger.polls_committed_at(b - 1).to_vec();
        for pid in pids {
            let mut rng = stream(&self.seed, b"early", &[&pid]);
            if rng.gen::<f64>() >= self.cfg.workload.early_rate {
                continue;
            }
            let rec = self.ledger.poll(&pid).unwrap();
            let close = rec.window(self.cfg.b_wait).1;
            let aud = self.ledger.audience(rec.topic, rec.b_p);
            if aud.len() < 2 {
                continue;
            }
            let i = rng.gen_range(0..aud.len());
            let j = (i + 1) % aud.len();
            let mut keys = vec![aud[i].pk, aud[j].pk];
            keys.sort_unstable();
            let ring = Ring::from_keys(&keys).unwrap();
            let sk = self.users[self.user_by_pk[&aud[i].pk]].keys.sk;
            let tx = Transaction::vote(&self.params, pid, VoteValue::new(3, "early"), &ring, &sk, &mut rng).unwrap();
            self.schedule(b, tx, Expect::Early, Some(close));
        }
    }

    fn finish(mut self) -> SimReport {
        if let Err(e) = self.ledger.check_invariants() {
            self.safety.invariant = Some(e);
        }
        let mut t = std::mem::take(&mut self.totals);
        t.blocks = self.cfg.blocks;
        t.pending_at_end = self.pending.len() as u64;
        t.votes_per_block = if t.blocks > 0 { t.votes_committed as f64 / t.blocks as f64 } else { 0.0 };
        t.votes_per_second = if t.time_ms > 0.0 { t.votes_committed as f64 / (t.time_ms / 1000.0) } else { 0.0 };
        t.mean_batch_size = if self.batch_groups > 0 { self.batch_votes as f64 / self.batch_groups as f64 } else { 0.0 };
        let mut pairs: BTreeMap<u64, Vec<Option<Result<u64, Reject>>>> = BTreeMap::new();
        for tr in self.tracked.values() {
            let tally = t.expectations.entry(tr.expect.label().to_string()).or_default();
            tally.submitted += 1;
            if let Expect::Pair(id) = tr.expect {
                pairs.entry(id).or_default().push(tr.outcome);
                continue;
            }
            match tr.outcome {
                None => tally.unresolved += 1,
                Some(Ok(_)) if tr.expect.wanted().is_none() => tally.as_expected += 1,
                Some(Err(r)) if tr.expect.wanted() == Some(r) => tally.as_expected += 1,
                Some(o) => *tally.other.entry(outcome_name(o)).or_default() += 1,
            }
        }
        if let Some(tally) = t.expectations.get_mut("duplicate_pair") {
            for outs in pairs.values() {
                let ok = outs.iter().filter(|o| matches!(o, Some(Ok(_)))).count();
                let dup = outs.iter().filter(|o| matches!(o, Some(Err(Reject::DuplicateTag)))).count();
                if outs.iter().any(Option::is_none) {
                    tally.unresolved += outs.len() as u64;
                } else if ok == 1 && dup == 1 {
                    tally.as_expected += 2;
                } else {
                    for o in outs.iter().flatten() {
                        *tally.other.entry(outcome_name(*o)).or_default() += 1;
                    }
                }
            }
        }
        let b_wait = self.cfg.b_wait;
        let polls = self
            .ledger
            .polls()
            .map(|r| {
                let (sum, n) = self.ratings.get(&r.pid).copied().unwrap_or((0, 0));
                PollTally {
                    pid: r.pid,
                    topic: r.topic,
                    b_p: r.b_p,
                    n_req: r.n_req,
                    ring_size: r.ring_keys.as_ref().map_or(0, Vec::len),
                    window: r.window(b_wait),
                    votes: self.ledger.poll_entry(&r.pid).map_or(0, |e| e.n_seen),
                    mean_rating: (n > 0).then(|| sum as f64 / n as f64),
                }
            })
            .collect();
        let mut nodes: Vec<NodeSpec> = self
            .politicians
            .iter()
            .enumerate()
            .map(|(i, p)| NodeSpec {
                id: i as u32,
                role: Role::Politician,
                public_key: p.key.verifying_key().to_bytes(),
                behavior: p.behavior,
                malicious: !p.behavior.is_honest(),
                counters: p.counters.clone(),
            })
            .collect();
        nodes.extend(self.citizens.iter().enumerate().map(|(i, c)| NodeSpec {
            id: i as u32,
            role: Role::Citizen,
            public_key: c.key.verifying_key().to_bytes(),
            behavior: BehaviorProfile::HONEST,
            malicious: c.malicious,
            counters: c.counters.clone(),
        }));
        SimReport {
            config: self.cfg.clone(),
            warnings: self.cfg.warnings(),
            nodes,
            blocks: self.logs,
            totals: t,
            safety: self.safety,
            blacklist: self.blacklist.entries().cloned().collect(),
            polls,
            final_root: hex::encode(self.ledger.root()),
        }
    }
}

fn outcome_name(o: Result<u64, Reject>) -> String {
    match o {
        Ok(_) => "committed".into(),
        Err(r) => r.code(),
    }
}

/// The ring with its lowest-scoring member swapped for the best-scoring
/// outsider, or with that member dropped when there is no outsider.
pub fn corrupt_ring(t: &RingTask, ring: &[[u8; 32]]) -> Vec<[u8; 32]> {
    let Some(worst) = ring.iter().min_by_key(|k| vrf_score(&t.seed, &t.pid, k)).copied() else {
        return Vec::new();
    };
    let outsider = top_k(&t.seed, &t.pid, &t.audience, ring.len() + 1).into_iter().find(|k| !ring.contains(k));
    let mut out: Vec<[u8; 32]> = ring.iter().copied().filter(|k| *k != worst).chain(outsider).collect();
    out.sort_unstable();
    out
}
