// SPDX-License-Identifier: Apache-2.0
//! Transaction-pool sharding: which politician may carry which pending
//! transaction in a block, and what it picks.

use std::collections::BTreeMap;

use pollring::group::{hash32, HashDomain};
use pollring::ledger::{Message, PollId, Transaction};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::{BehaviorProfile, FMap, FSelect, TxPoolPolicy};

/// A transaction waiting for inclusion.
#[derive(Clone, Debug)]
pub struct PendingTx {
    pub tx: Transaction,
    pub id: [u8; 32],
    /// Block in which it became visible to politicians.
    pub arrival: u64,
    pub seq: u64,
    /// Last block of the voting window, for votes.
    pub deadline: Option<u64>,
}

impl PendingTx {
    pub fn new(tx: Transaction, arrival: u64, seq: u64, deadline: Option<u64>) -> Self {
        PendingTx { id: tx.id(), tx, arrival, seq, deadline }
    }

    fn group(&self) -> Option<PollId> {
        match &self.tx.message {
            Message::CreateVote { pid, .. } => Some(*pid),
            _ => None,
        }
    }
}

fn shard_for_key(block: u64, key: &[u8], shards: u32) -> u32 {
    let h = hash32(HashDomain::TXGROUP, &[b"shard", &block.to_le_bytes(), key]);
    (u64::from_le_bytes(h[..8].try_into().unwrap()) % shards as u64) as u32
}

/// `Hash(i‖PID) mod shards` for votes under group mapping, otherwise
/// `Hash(i‖tx) mod shards`.
pub fn shard_of(f_map: FMap, block: u64, tx: &Transaction, shards: u32) -> u32 {
    match (f_map, &tx.message) {
        (FMap::DetGroup, Message::CreateVote { pid, .. }) => shard_for_key(block, pid, shards),
        _ => shard_for_key(block, &tx.id(), shards),
    }
}

fn shard_of_pending(f_map: FMap, block: u64, p: &PendingTx, shards: u32) -> u32 {
    match (f_map, p.group()) {
        (FMap::DetGroup, Some(pid)) => shard_for_key(block, &pid, shards),
        _ => shard_for_key(block, &p.id, shards),
    }
}

/// Holder of one shard in the current block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSlot {
    pub slot: u32,
    pub politician: u32,
    pub behavior: BehaviorProfile,
}

/// A published pool; `txs` index into the pending list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolCommit {
    pub slot: u32,
    pub politician: u32,
    pub txs: Vec<usize>,
}

/// Blocks a vote group is held back: `min(group_wait, blocks_left - 2)`.
fn hold_for(policy: &TxPoolPolicy, block: u64, deadline: u64) -> u64 {
    policy.group_wait.min(deadline.saturating_sub(block).saturating_sub(2))
}

/// Honest choice for shard `slot` out of the pending list.
fn select(policy: &TxPoolPolicy, pending: &[PendingTx], block: u64, slot: u32, mapped: &[usize], seed: &[u8; 32]) -> Vec<usize> {
    let mut cands: Vec<usize> = mapped.to_vec();
    if policy.f_map == FMap::DetGroup && policy.group_wait > 0 {
        let mut first: BTreeMap<PollId, u64> = BTreeMap::new();
        for &i in &cands {
            if let Some(g) = pending[i].group() {
                let e = first.entry(g).or_insert(u64::MAX);
                *e = (*e).min(pending[i].arrival);
            }
        }
        cands.retain(|&i| match (pending[i].group(), pending[i].deadline) {
            (Some(g), Some(d)) => block.saturating_sub(first[&g]) >= hold_for(policy, block, d),
            _ => true,
        });
    }
    let mut rng = ChaCha20Rng::from_seed(hash32(HashDomain::TXGROUP, &[b"select", seed, &block.to_le_bytes(), &slot.to_le_bytes()]));
    let order_key = |i: &usize| (pending[*i].arrival, pending[*i].seq);
    let cap = policy.capacity;
    match policy.f_select {
        FSelect::RandomTx => {
            cands.sort_by_key(order_key);
            cands.shuffle(&mut rng);
            cands.truncate(cap);
            cands
        }
        FSelect::Oldest => {
            cands.sort_by_key(order_key);
            cands.truncate(cap);
            cands
        }
        FSelect::Deadline => {
            cands.sort_by_key(|i| (pending[*i].deadline.unwrap_or(u64::MAX), order_key(i)));
            cands.truncate(cap);
            cands
        }
        FSelect::RandomGroup => {
            cands.sort_by_key(order_key);
            let mut groups: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
            for i in cands {
                let key = pending[i].group().map(|g| g.to_vec()).unwrap_or_else(|| pending[i].id.to_vec());
                groups.entry(key).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            let mut out = Vec::new();
            for g in groups {
                if out.len() >= cap {
                    break;
                }
                let room = cap - out.len();
                out.extend(g.into_iter().take(room));
            }
            out
        }
    }
}

/// Pools published by the shard holders of `block`. Silent and dropping
/// politicians publish nothing; `violate_fmap` holders add the oldest
/// transactions of other shards.
pub fn pool_assign(
    policy: &TxPoolPolicy,
    pending: &[PendingTx],
    block: u64,
    slots: &[PoolSlot],
    seed: &[u8; 32],
) -> Vec<PoolCommit> {
    let mut mapped: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, p) in pending.iter().enumerate() {
        mapped.entry(shard_of_pending(policy.f_map, block, p, policy.shards)).or_default().push(i);
    }
    let mut out = Vec::new();
    for s in slots {
        let b = s.behavior;
        if b.unresponsive || b.drop_transactions {
            continue;
        }
        let own = mapped.get(&s.slot).map(Vec::as_slice).unwrap_or(&[]);
        let mut txs = select(policy, pending, block, s.slot, own, seed);
        if b.violate_fmap {
            let mut foreign: Vec<usize> =
                (0..pending.len()).filter(|i| !own.contains(i)).collect();
            foreign.sort_by_key(|&i| (pending[i].arrival, pending[i].seq));
            txs.extend(foreign.into_iter().take((policy.capacity / 4).max(1)));
        }
        out.push(PoolCommit { slot: s.slot, politician: s.politician, txs });
    }
    out
}

/// Entries of `commit` that belong to another shard.
pub fn misplaced(policy: &TxPoolPolicy, pending: &[PendingTx], block: u64, commit: &PoolCommit) -> Vec<usize> {
    commit
        .txs
        .iter()
        .copied()
        .filter(|&i| shard_of_pending(policy.f_map, block, &pending[i], policy.shards) != commit.slot)
        .collect()
}
