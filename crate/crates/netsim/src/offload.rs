// SPDX-License-Identifier: Apache-2.0
//! Citizen-side offload of ring computation and vote verification to a safe
//! sample of politicians, with conflict resolution and accusations.

use std::collections::{BTreeMap, BTreeSet};

use pollring::group::{hash32, ring_hash, HashDomain};
use pollring::ledger::{poll_list_hash, PollId, RingTask, Topic};
use pollring::sortition::{top_k, AudienceMember};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::config::Timing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum OffloadError {
    #[error("no politician in the safe sample answered")]
    AllSilent,
}

/// Per-block random sample of `m` distinct politicians out of `eligible`.
/// With `require` set, redraws until the predicate holds for some member
/// (at most 10_000 attempts).
pub fn draw_safe_sample(
    eligible: &[u32],
    m: usize,
    seed: &[u8; 32],
    block: u64,
    citizen: u32,
    require: Option<&dyn Fn(u32) -> bool>,
) -> Vec<u32> {
    let mut rng =
        ChaCha20Rng::from_seed(hash32(HashDomain::VRF, &[b"safe-sample", seed, &block.to_le_bytes(), &citizen.to_le_bytes()]));
    let m = m.min(eligible.len());
    let mut sample: Vec<u32> = eligible.choose_multiple(&mut rng, m).copied().collect();
    if let Some(ok) = require {
        let mut tries = 0;
        while !sample.iter().any(|&p| ok(p)) && tries < 10_000 {
            sample = eligible.choose_multiple(&mut rng, m).copied().collect();
            tries += 1;
        }
    }
    sample.sort_unstable();
    sample
}

/// A politician's answer to the ring query of one block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingAnswer {
    /// Poll ids committed `B_wait` blocks ago, per topic.
    pub lists: BTreeMap<Topic, Vec<PollId>>,
    pub hashes: BTreeMap<PollId, [u8; 32]>,
    /// Voter list served on request.
    pub rings: BTreeMap<PollId, Vec<[u8; 32]>>,
}

impl RingAnswer {
    /// What an honest politician answers.
    pub fn honest(tasks: &[RingTask], rings: &[Vec<[u8; 32]>]) -> Self {
        let mut lists: BTreeMap<Topic, Vec<PollId>> = BTreeMap::new();
        let mut hashes = BTreeMap::new();
        let mut out_rings = BTreeMap::new();
        for (t, r) in tasks.iter().zip(rings) {
            lists.entry(t.topic).or_default().push(t.pid);
            hashes.insert(t.pid, ring_hash(&r.concat()));
            out_rings.insert(t.pid, r.clone());
        }
        RingAnswer { lists, hashes, rings: out_rings }
    }
}

/// Citizen-side view of the block's ring work, from verified global state.
pub struct RingQuery<'a> {
    pub block: u64,
    pub b_p: u64,
    pub tasks: &'a [RingTask],
    /// Committed BlockwisePolls hash per topic.
    pub committed: BTreeMap<Topic, [u8; 32]>,
    audience: Vec<BTreeMap<[u8; 32], AudienceMember>>,
}

impl<'a> RingQuery<'a> {
    pub fn new(block: u64, b_p: u64, tasks: &'a [RingTask], committed: BTreeMap<Topic, [u8; 32]>) -> Self {
        let audience = tasks.iter().map(|t| t.audience.iter().map(|m| (m.pk, *m)).collect()).collect();
        RingQuery { block, b_p, tasks, committed, audience }
    }
}

/// A false statement the citizen caught.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Accusation {
    PollList { politician: u32, topic: Topic, b_p: u64, pids: Vec<PollId> },
    RingHash { politician: u32, pid: PollId, hash: [u8; 32] },
    Verdict { politician: u32, vote: usize, valid: bool },
}

impl Accusation {
    pub fn politician(&self) -> u32 {
        match self {
            Accusation::PollList { politician, .. }
            | Accusation::RingHash { politician, .. }
            | Accusation::Verdict { politician, .. } => *politician,
        }
    }
}

/// Work and traffic a citizen spent in one offload.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OffloadCost {
    pub bytes_in: u64,
    pub vrf_evals: u64,
    pub verifications: u64,
    pub time_ms: f64,
    pub fast_path: bool,
    pub timed_out: bool,
    pub conflicts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RingOutcome {
    /// Agreed ring hash per task, in task order.
    pub hashes: Result<Vec<[u8; 32]>, OffloadError>,
    pub accused: Vec<Accusation>,
    pub cost: OffloadCost,
    /// Politicians that answered per task with a hash (for accounting).
    pub responders: Vec<u32>,
}

/// Memo of union-based recomputations shared by citizens facing the same
/// conflict. Keyed by poll and the digest of the candidate union.
pub type RingMemo = BTreeMap<(PollId, [u8; 32]), Vec<[u8; 32]>>;

/// Ring offload.
///
/// 1. Ask every sampled politician for the poll list and ring hashes.
///    Lists that do not match the committed BlockwisePolls hash are
///    accused and dropped.
/// 2. All answers present and identical: done.
/// 3. Someone is silent: wait `T_h` and continue with the answers at hand.
/// 4. For every poll with differing hashes, fetch each responder's voter
///    list, recompute the top-`R` over their union restricted to the
///    audience, and accuse every responder whose hash differs.
pub fn offload_ring<'a>(
    q: &RingQuery<'_>,
    sample: &[u32],
    answer: &dyn Fn(u32) -> Option<&'a RingAnswer>,
    timing: &Timing,
    memo: &mut RingMemo,
) -> RingOutcome {
    let k = q.tasks.len();
    let mut cost = OffloadCost { fast_path: true, ..OffloadCost::default() };
    let mut accused = Vec::new();
    if k == 0 {
        return RingOutcome { hashes: Ok(Vec::new()), accused, cost, responders: Vec::new() };
    }
    cost.time_ms += 2.0 * timing.latency_ms;
    let mut silent = 0usize;
    let mut responders: Vec<(u32, &RingAnswer)> = Vec::new();
    for &p in sample {
        let Some(a) = answer(p) else {
            silent += 1;
            continue;
        };
        cost.bytes_in += (a.lists.values().map(Vec::len).sum::<usize>() * 8 + a.hashes.len() * 32) as u64;
        let mut lists_ok = true;
        for (&topic, committed) in &q.committed {
            let claimed = a.lists.get(&topic).cloned().unwrap_or_default();
            if poll_list_hash(&claimed) != *committed {
                accused.push(Accusation::PollList { politician: p, topic, b_p: q.b_p, pids: claimed });
                lists_ok = false;
            }
        }
        if lists_ok && q.tasks.iter().all(|t| a.hashes.contains_key(&t.pid)) {
            responders.push((p, a));
        }
    }
    if !accused.is_empty() {
        cost.fast_path = false;
    }
    if silent > 0 {
        let aud = q.tasks.iter().map(|t| t.audience.len()).max().unwrap_or(0);
        cost.time_ms += timing.t_h_ms(aud, k);
        cost.timed_out = true;
        cost.fast_path = false;
    }
    let ids: Vec<u32> = responders.iter().map(|r| r.0).collect();
    if responders.is_empty() {
        return RingOutcome { hashes: Err(OffloadError::AllSilent), accused, cost, responders: ids };
    }
    let mut hashes = Vec::with_capacity(k);
    let mut fetched = false;
    for (j, t) in q.tasks.iter().enumerate() {
        let first = responders[0].1.hashes[&t.pid];
        if responders.iter().all(|(_, a)| a.hashes[&t.pid] == first) {
            hashes.push(first);
            continue;
        }
        cost.fast_path = false;
        cost.conflicts += 1;
        if !fetched {
            cost.time_ms += 2.0 * timing.latency_ms;
            fetched = true;
        }
        let mut union: BTreeSet<[u8; 32]> = BTreeSet::new();
        for (_, a) in &responders {
            let list = a.rings.get(&t.pid).map(Vec::as_slice).unwrap_or(&[]);
            cost.bytes_in += 32 * list.len() as u64;
            union.extend(list.iter().copied());
        }
        let members: Vec<AudienceMember> = union.iter().filter_map(|pk| q.audience[j].get(pk).copied()).collect();
        cost.vrf_evals += members.len() as u64;
        cost.time_ms += members.len() as f64 * timing.citizen_t_hash_us / 1000.0;
        let digest = hash32(HashDomain::VRF, &[b"union", &union.iter().flatten().copied().collect::<Vec<u8>>()]);
        let ring = memo
            .entry((t.pid, digest))
            .or_insert_with(|| top_k(&t.seed, &t.pid, &members, t.ring_size()))
            .clone();
        let correct = ring_hash(&ring.concat());
        for (p, a) in &responders {
            let claimed = a.hashes[&t.pid];
            if claimed != correct {
                accused.push(Accusation::RingHash { politician: *p, pid: t.pid, hash: claimed });
            }
        }
        hashes.push(correct);
    }
    RingOutcome { hashes: Ok(hashes), accused, cost, responders: ids }
}

/// One vote of the block as the citizen sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoteItem {
    /// Position in the proposed block.
    pub index: usize,
    pub txid: [u8; 32],
    pub ring_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoteOutcome {
    pub verdicts: Result<Vec<bool>, OffloadError>,
    pub accused: Vec<Accusation>,
    pub cost: OffloadCost,
    /// Politician asked for the ring of each contested vote.
    pub ring_sources: BTreeMap<usize, u32>,
}

/// Vote-verification offload.
///
/// Ask the sample for the verdict vector. Identical complete answers are
/// accepted. Silence costs a wait of `T_r`. For each contested vote the
/// citizen fetches the ring and its Merkle path from one politician that
/// asserted the majority verdict, verifies locally through `local_verify`
/// (called with the vote's position in `votes`), and accuses every
/// politician that asserted otherwise.
pub fn offload_vote_verify<'a>(
    votes: &[VoteItem],
    sample: &[u32],
    answer: &dyn Fn(u32) -> Option<&'a [bool]>,
    timing: &Timing,
    local_verify: &mut dyn FnMut(usize) -> bool,
    pick: &mut impl Rng,
) -> VoteOutcome {
    let k = votes.len();
    let mut cost = OffloadCost { fast_path: true, ..OffloadCost::default() };
    let mut accused = Vec::new();
    let mut ring_sources = BTreeMap::new();
    if k == 0 {
        return VoteOutcome { verdicts: Ok(Vec::new()), accused, cost, ring_sources };
    }
    cost.time_ms += 2.0 * timing.latency_ms;
    let mut silent = 0;
    let mut responders: Vec<(u32, &[bool])> = Vec::new();
    for &p in sample {
        match answer(p) {
            Some(v) if v.len() == k => {
                cost.bytes_in += k.div_ceil(8) as u64;
                responders.push((p, v));
            }
            _ => silent += 1,
        }
    }
    if silent > 0 {
        cost.time_ms += timing.t_r_ms(k);
        cost.timed_out = true;
        cost.fast_path = false;
    }
    if responders.is_empty() {
        return VoteOutcome { verdicts: Err(OffloadError::AllSilent), accused, cost, ring_sources };
    }
    if responders.iter().all(|r| r.1 == responders[0].1) {
        return VoteOutcome { verdicts: Ok(responders[0].1.to_vec()), accused, cost, ring_sources };
    }
    let mut out = Vec::with_capacity(k);
    let mut fetched = false;
    for (j, item) in votes.iter().enumerate() {
        let yes: Vec<u32> = responders.iter().filter(|r| r.1[j]).map(|r| r.0).collect();
        if yes.is_empty() || yes.len() == responders.len() {
            out.push(!yes.is_empty());
            continue;
        }
        cost.fast_path = false;
        cost.conflicts += 1;
        if !fetched {
            cost.time_ms += 2.0 * timing.latency_ms;
            fetched = true;
        }
        let no: Vec<u32> = responders.iter().filter(|r| !r.1[j]).map(|r| r.0).collect();
        let majority = if yes.len() >= no.len() { &yes } else { &no };
        ring_sources.insert(j, *majority.choose(pick).unwrap());
        cost.bytes_in += 32 * item.ring_len as u64;
        let truth = local_verify(j);
        cost.verifications += 1;
        cost.time_ms += timing.citizen_t_verif_ms;
        for (p, v) in &responders {
            if v[j] != truth {
                accused.push(Accusation::Verdict { politician: *p, vote: j, valid: v[j] });
            }
        }
        out.push(truth);
    }
    VoteOutcome { verdicts: Ok(out), accused, cost, ring_sources }
}
