// SPDX-License-Identifier: Apache-2.0
//! Signed politician statements, contradiction evidence and the auditor that
//! checks evidence against committed block roots alone.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use pollring::group::ring_hash;
use pollring::ledger::{gs_verify, poll_list_hash, GsKey, Message, MerkleProof, PollEntry, PollId, Topic, Transaction};
use pollring::urs::{self, Ring, UrsParams};
use serde::{Deserialize, Serialize};

use crate::config::FMap;
use crate::pool::shard_of;

pub(crate) mod hexkeys {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[[u8; 32]], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for k in v {
            seq.serialize_element(&hex::encode(k))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 32]>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| {
                let mut k = [0u8; 32];
                hex::decode_to_slice(s, &mut k).map_err(serde::de::Error::custom)?;
                Ok(k)
            })
            .collect()
    }
}

pub(crate) mod hexpids {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[[u8; 8]], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for k in v {
            seq.serialize_element(&hex::encode(k))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 8]>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| {
                let mut k = [0u8; 8];
                hex::decode_to_slice(s, &mut k).map_err(serde::de::Error::custom)?;
                Ok(k)
            })
            .collect()
    }
}

/// What a politician asserted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Claim {
    /// The polls committed at `b_p` under `topic`.
    PollList {
        topic: Topic,
        b_p: u64,
        #[serde(with = "hexpids")]
        pids: Vec<PollId>,
    },
    /// The ring drawn for `pid` in the statement's block hashes to `hash`.
    RingHash {
        #[serde(with = "hex::serde")]
        pid: PollId,
        #[serde(with = "hex::serde")]
        hash: [u8; 32],
    },
    /// The ring signature of vote `txid` verifies (or not).
    Verdict {
        #[serde(with = "hex::serde")]
        txid: [u8; 32],
        valid: bool,
    },
    /// The polls whose window is open in the statement's block and whose
    /// ring contains `user`.
    Eligible {
        #[serde(with = "hex::serde")]
        user: [u8; 32],
        #[serde(with = "hexpids")]
        pids: Vec<PollId>,
    },
    /// The pool published for shard `slot`.
    Pool {
        slot: u32,
        #[serde(with = "hexkeys")]
        txids: Vec<[u8; 32]>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub politician: u32,
    pub block: u64,
    pub claim: Claim,
}

impl Statement {
    fn signing_bytes(&self) -> Vec<u8> {
        let mut out = b"pollring-statement".to_vec();
        out.extend_from_slice(&serde_json::to_vec(self).expect("statement serialises"));
        out
    }

    pub fn sign(self, key: &SigningKey) -> SignedStatement {
        let sig = key.sign(&self.signing_bytes()).to_bytes();
        SignedStatement { statement: self, sig }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedStatement {
    pub statement: Statement,
    #[serde(with = "hex::serde")]
    pub sig: [u8; 64],
}

impl SignedStatement {
    pub fn verify(&self, key: &VerifyingKey) -> bool {
        key.verify(&self.statement.signing_bytes(), &Signature::from_bytes(&self.sig)).is_ok()
    }
}

/// A committed global-state value with its inclusion proof against the
/// root of block `root_block`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GsWitness {
    pub root_block: u64,
    #[serde(with = "hex::serde")]
    pub key: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub value: Vec<u8>,
    pub proof: MerkleProof,
}

impl GsWitness {
    fn check(&self, ctx: &AuditContext<'_>, expected_key: &GsKey) -> bool {
        self.key == expected_key.to_bytes()
            && ctx
                .roots
                .get(&self.root_block)
                .is_some_and(|root| gs_verify(root, &self.key, Some(&self.value), &self.proof))
    }

    fn poll_entry(&self) -> Option<PollEntry> {
        PollEntry::from_bytes(&self.value).ok()
    }
}

/// A signed statement plus what is needed to show it false.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// The committed BlockwisePolls hash differs from the claimed list's.
    PollList { statement: SignedStatement, committed: GsWitness },
    /// The committed ring hash differs from the claimed one.
    RingHash { statement: SignedStatement, poll: GsWitness },
    /// Verifying the vote against the committed ring contradicts the claim.
    Verdict {
        statement: SignedStatement,
        #[serde(with = "hex::serde")]
        tx: Vec<u8>,
        #[serde(with = "hexkeys")]
        ring: Vec<[u8; 32]>,
        poll: GsWitness,
    },
    /// The committed ring of `pid` contradicts the eligibility answer.
    Eligibility {
        statement: SignedStatement,
        #[serde(with = "hex::serde")]
        pid: PollId,
        #[serde(with = "hexkeys")]
        ring: Vec<[u8; 32]>,
        poll: GsWitness,
    },
    /// A pooled transaction maps to another shard.
    PoolMapping {
        statement: SignedStatement,
        #[serde(with = "hex::serde")]
        tx: Vec<u8>,
    },
}

impl Evidence {
    pub fn statement(&self) -> &SignedStatement {
        match self {
            Evidence::PollList { statement, .. }
            | Evidence::RingHash { statement, .. }
            | Evidence::Verdict { statement, .. }
            | Evidence::Eligibility { statement, .. }
            | Evidence::PoolMapping { statement, .. } => statement,
        }
    }
}

/// Public data the auditor trusts: committed roots and politician keys.
pub struct AuditContext<'a> {
    pub roots: &'a BTreeMap<u64, Vec<u8>>,
    pub politician_keys: &'a [VerifyingKey],
    pub urs: &'a UrsParams,
    pub b_wait: u64,
    pub f_map: FMap,
    pub shards: u32,
}

/// True iff the evidence proves its signer made a false statement.
pub fn audit(e: &Evidence, ctx: &AuditContext<'_>) -> bool {
    let st = e.statement();
    let Some(key) = ctx.politician_keys.get(st.statement.politician as usize) else {
        return false;
    };
    if !st.verify(key) {
        return false;
    }
    let block = st.statement.block;
    match (e, &st.statement.claim) {
        (Evidence::PollList { committed, .. }, Claim::PollList { topic, b_p, pids }) => {
            committed.check(ctx, &GsKey::BlockwisePolls(*b_p, *topic)) && committed.value != poll_list_hash(pids)
        }
        (Evidence::RingHash { poll, .. }, Claim::RingHash { pid, hash }) => {
            poll.check(ctx, &GsKey::Poll(*pid))
                && poll
                    .poll_entry()
                    .is_some_and(|p| p.b_n + ctx.b_wait == block && p.ring_hash.is_some_and(|h| h != *hash))
        }
        (Evidence::Verdict { tx, ring, poll, .. }, Claim::Verdict { txid, valid }) => {
            let Ok(tx) = Transaction::from_bytes(tx) else { return false };
            let (Message::CreateVote { pid, vote }, pollring::ledger::Authenticator::Ring(sig)) = (&tx.message, &tx.auth)
            else {
                return false;
            };
            if tx.id() != *txid || !poll.check(ctx, &GsKey::Poll(*pid)) {
                return false;
            }
            let Some(entry) = poll.poll_entry() else { return false };
            let Ok(ring) = Ring::from_keys(ring) else { return false };
            entry.ring_hash == Some(ring.hash())
                && urs::verify(ctx.urs, pid, &vote.to_bytes(), &ring, sig).is_ok() != *valid
        }
        (Evidence::Eligibility { pid, ring, poll, .. }, Claim::Eligible { user, pids }) => {
            if !poll.check(ctx, &GsKey::Poll(*pid)) {
                return false;
            }
            let Some(entry) = poll.poll_entry() else { return false };
            let open = entry.b_n + ctx.b_wait < block && block <= entry.b_n + ctx.b_wait + entry.b_vw as u64;
            entry.ring_hash == Some(ring_hash(&ring.concat()))
                && open
                && ring.contains(user) != pids.contains(pid)
        }
        (Evidence::PoolMapping { tx, .. }, Claim::Pool { slot, txids }) => {
            let Ok(tx) = Transaction::from_bytes(tx) else { return false };
            txids.contains(&tx.id()) && shard_of(ctx.f_map, block, &tx, ctx.shards) != *slot
        }
        _ => false,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlacklistEntry {
    pub politician: u32,
    /// Block in which the politician was caught.
    pub block: u64,
    pub evidence: Evidence,
}

/// Politicians excluded for good, each with its proof.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blacklist {
    entries: BTreeMap<u32, BlacklistEntry>,
}

impl Blacklist {
    /// Adds the politician named in the evidence. Keeps the first evidence
    /// if already listed; returns whether the politician is new.
    pub fn insert(&mut self, block: u64, evidence: Evidence) -> bool {
        let p = evidence.statement().statement.politician;
        if self.entries.contains_key(&p) {
            return false;
        }
        self.entries.insert(p, BlacklistEntry { politician: p, block, evidence });
        true
    }

    pub fn contains(&self, p: u32) -> bool {
        self.entries.contains_key(&p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BlacklistEntry> {
        self.entries.values()
    }
}
