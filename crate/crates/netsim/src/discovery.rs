// SPDX-License-Identifier: Apache-2.0
//! How a user learns which polls it may vote on.

use std::collections::BTreeSet;

use pollring::ledger::merkle::proof_size;
use pollring::ledger::PollId;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiscoveryOutcome {
    /// Polls the user is eligible for, sorted.
    pub pids: Vec<PollId>,
    /// `(politician, pid)`: the politician's answer is wrong about `pid`.
    pub accused: Vec<(u32, PollId)>,
    /// Polls that needed a ring and Merkle path.
    pub challenged: usize,
    pub bytes_in: u64,
}

/// Ask every politician; take the union of the answers. A poll some
/// politicians list and others omit is settled with its committed ring
/// hash and Merkle path through `check`, which returns whether the user
/// is in the ring of an open poll (`None` when the poll cannot be proven
/// at all, which counts as not eligible). Everyone on the wrong side is
/// accused. Silent politicians (`None` answers) are skipped.
pub fn discover_polls(
    answers: &[(u32, Option<&[PollId]>)],
    check: &mut dyn FnMut(&PollId) -> Option<bool>,
    challenge_bytes: &dyn Fn(&PollId) -> u64,
) -> DiscoveryOutcome {
    let mut out = DiscoveryOutcome::default();
    let heard: Vec<(u32, BTreeSet<PollId>)> = answers
        .iter()
        .filter_map(|(p, a)| a.map(|a| (*p, a.iter().copied().collect())))
        .collect();
    let union: BTreeSet<PollId> = heard.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    out.bytes_in = heard.iter().map(|(_, s)| 8 * s.len() as u64).sum();
    for pid in union {
        let listed = heard.iter().filter(|(_, s)| s.contains(&pid)).count();
        let eligible = if listed == heard.len() {
            true
        } else {
            out.challenged += 1;
            out.bytes_in += challenge_bytes(&pid);
            let ok = check(&pid).unwrap_or(false);
            for (p, s) in &heard {
                if s.contains(&pid) != ok {
                    out.accused.push((*p, pid));
                }
            }
            ok
        };
        if eligible {
            out.pids.push(pid);
        }
    }
    out
}

/// Inputs of the per-user daily discovery traffic estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryLoad {
    pub polls_per_day: u64,
    pub users: u64,
    pub ring: u64,
    pub politicians: u64,
    pub pid_bytes: u64,
    pub user_id_bytes: u64,
    pub digest_len: usize,
    /// Entries in the global state, for the Merkle path length.
    pub state_entries: u64,
    pub hash_bytes: u64,
}

impl Default for DiscoveryLoad {
    fn default() -> Self {
        DiscoveryLoad {
            polls_per_day: 45_000,
            users: 1_000_000,
            ring: 100,
            politicians: 200,
            pid_bytes: 8,
            user_id_bytes: 8,
            digest_len: 10,
            state_entries: 1 << 30,
            hash_bytes: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscoveryTraffic {
    /// Polls a user is drawn into per day, rounded up.
    pub polls_per_user: u64,
    pub poll_ids: u64,
    pub rings: u64,
    pub paths: u64,
    pub hashes: u64,
    pub total: u64,
}

/// Worst case: every eligible poll is challenged once, and every
/// politician lists every one of them.
pub fn discovery_traffic(l: &DiscoveryLoad) -> DiscoveryTraffic {
    let polls_per_user = (l.polls_per_day * l.ring).div_ceil(l.users);
    let poll_ids = polls_per_user * l.politicians * l.pid_bytes;
    let rings = polls_per_user * l.ring * l.user_id_bytes;
    let paths = polls_per_user * proof_size(l.state_entries, l.digest_len) as u64;
    let hashes = polls_per_user * l.hash_bytes;
    DiscoveryTraffic { polls_per_user, poll_ids, rings, paths, hashes, total: poll_ids + rings + paths + hashes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn union_and_challenge() {
        let a: Vec<PollId> = vec![[1; 8], [2; 8]];
        let b: Vec<PollId> = vec![[1; 8]];
        let answers = [(0, Some(&a[..])), (1, Some(&b[..])), (2, None), (3, Some(&a[..]))];
        let mut asked = Vec::new();
        let out = discover_polls(&answers, &mut |p| {
            asked.push(*p);
            Some(true)
        }, &|_| 100);
        assert_eq!(out.pids, a);
        assert_eq!(asked, vec![[2; 8]]);
        assert_eq!(out.accused, vec![(1, [2; 8])]);
        assert_eq!(out.challenged, 1);
        assert_eq!(out.bytes_in, 8 * 5 + 100);
    }

    #[test]
    fn fake_listing_is_accused() {
        let honest: Vec<PollId> = vec![[1; 8]];
        let liar: Vec<PollId> = vec![[1; 8], [9; 8]];
        let answers = [(0, Some(&honest[..])), (1, Some(&liar[..]))];
        let out = discover_polls(&answers, &mut |p| (*p == [1; 8]).then_some(true), &|_| 0);
        assert_eq!(out.pids, honest);
        assert_eq!(out.accused, vec![(1, [9; 8])]);
    }

    #[test]
    fn daily_traffic_arithmetic() {
        let t = discovery_traffic(&DiscoveryLoad::default());
        // 45k polls * 100 / 1M users = 4.5, rounded up to 5 polls per user.
        assert_eq!(t.polls_per_user, 5);
        assert_eq!(t.poll_ids, 5 * 200 * 8);
        assert_eq!(t.rings, 5 * 100 * 8);
        // 30 levels of 10-byte digests.
        assert_eq!(t.paths, 5 * 300);
        assert_eq!(t.hashes, 160);
        assert_eq!(t.total, 13_660);
    }
}
