// SPDX-License-Identifier: Apache-2.0
//! Global-state entries: key namespacing and value layouts.
//!
//! | entry          | key                         | value                                         |
//! |----------------|-----------------------------|-----------------------------------------------|
//! | Poll           | `P` pid                     | B_n(8) topic(4) n_req(4) n_seen(4) B_vw(4) H(R)(32) |
//! | PollData       | `I` pid                     | content(256)                                  |
//! | Vote           | `V` pid k(4)                | rating(1) text(256)                           |
//! | VoteTag        | `T` pid nu(32)              | `0x01`                                        |
//! | Thresholds     | `W` topic                   | W as f64 in the first 8 of 32 bytes           |
//! | ScalingFactor  | `U` topic                   | v_exp(4) v_seen(4)                            |
//! | BlockwisePolls | `B` B_i(8) topic(4)         | hash of the sorted new poll ids               |
//!
//! An all-zero H(R) means the ring has not been drawn yet.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::merkle::{hexser, AuthStore};
use super::tx::{text_of, PollId, Topic, VoteValue, CONTENT_LEN};
use crate::group::{hash32, HashDomain};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("unrecognised key: {0}")]
    BadKey(String),
    #[error("value of {kind} entry has {got} bytes, expected {expected}")]
    BadValue { kind: &'static str, expected: usize, got: usize },
    #[error("snapshot root does not match its entries")]
    RootMismatch,
    #[error("snapshot: {0}")]
    Snapshot(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GsKey {
    Poll(PollId),
    PollData(PollId),
    Vote(PollId, u32),
    VoteTag(PollId, [u8; 32]),
    Thresholds(Topic),
    ScalingFactor(Topic),
    BlockwisePolls(u64, Topic),
}

impl GsKey {
    pub fn kind_name(&self) -> &'static str {
        match self {
            GsKey::Poll(_) => "Poll",
            GsKey::PollData(_) => "PollData",
            GsKey::Vote(..) => "Vote",
            GsKey::VoteTag(..) => "VoteTag",
            GsKey::Thresholds(_) => "Thresholds",
            GsKey::ScalingFactor(_) => "ScalingFactor",
            GsKey::BlockwisePolls(..) => "BlockwisePolls",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41);
        match self {
            GsKey::Poll(p) => {
                out.push(b'P');
                out.extend_from_slice(p);
            }
            GsKey::PollData(p) => {
                out.push(b'I');
                out.extend_from_slice(p);
            }
            GsKey::Vote(p, k) => {
                out.push(b'V');
                out.extend_from_slice(p);
                out.extend_from_slice(&k.to_le_bytes());
            }
            GsKey::VoteTag(p, nu) => {
                out.push(b'T');
                out.extend_from_slice(p);
                out.extend_from_slice(nu);
            }
            GsKey::Thresholds(t) => {
                out.push(b'W');
                out.extend_from_slice(&t.to_le_bytes());
            }
            GsKey::ScalingFactor(t) => {
                out.push(b'U');
                out.extend_from_slice(&t.to_le_bytes());
            }
            GsKey::BlockwisePolls(b, t) => {
                out.push(b'B');
                out.extend_from_slice(&b.to_le_bytes());
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, StateError> {
        let bad = || StateError::BadKey(hex::encode(b));
        let pid = || -> Result<PollId, StateError> { b.get(1..9).and_then(|s| s.try_into().ok()).ok_or_else(bad) };
        let u32_at = |at: usize| -> Result<u32, StateError> {
            b.get(at..at + 4).map(|s| u32::from_le_bytes(s.try_into().unwrap())).ok_or_else(bad)
        };
        let expect = |len: usize| if b.len() == len { Ok(()) } else { Err(bad()) };
        let key = match b.first().ok_or_else(bad)? {
            b'P' => {
                expect(9)?;
                GsKey::Poll(pid()?)
            }
            b'I' => {
                expect(9)?;
                GsKey::PollData(pid()?)
            }
            b'V' => {
                expect(13)?;
                GsKey::Vote(pid()?, u32_at(9)?)
            }
            b'T' => {
                expect(41)?;
                GsKey::VoteTag(pid()?, b[9..41].try_into().unwrap())
            }
            b'W' => {
                expect(5)?;
                GsKey::Thresholds(u32_at(1)?)
            }
            b'U' => {
                expect(5)?;
                GsKey::ScalingFactor(u32_at(1)?)
            }
            b'B' => {
                expect(13)?;
                GsKey::BlockwisePolls(u64::from_le_bytes(b[1..9].try_into().unwrap()), u32_at(9)?)
            }
            _ => return Err(bad()),
        };
        Ok(key)
    }
}

/// Text form used on the command line: `P:<pid hex>`, `I:<pid hex>`,
/// `V:<pid hex>:<k>`, `T:<pid hex>:<nu hex>`, `W:<topic>`, `U:<topic>`,
/// `B:<block>:<topic>`.
impl fmt::Display for GsKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GsKey::Poll(p) => write!(f, "P:{}", hex::encode(p)),
            GsKey::PollData(p) => write!(f, "I:{}", hex::encode(p)),
            GsKey::Vote(p, k) => write!(f, "V:{}:{k}", hex::encode(p)),
            GsKey::VoteTag(p, nu) => write!(f, "T:{}:{}", hex::encode(p), hex::encode(nu)),
            GsKey::Thresholds(t) => write!(f, "W:{t}"),
            GsKey::ScalingFactor(t) => write!(f, "U:{t}"),
            GsKey::BlockwisePolls(b, t) => write!(f, "B:{b}:{t}"),
        }
    }
}

impl FromStr for GsKey {
    type Err = StateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StateError::BadKey(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let pid = |h: &str| -> Result<PollId, StateError> {
            hex::decode(h).ok().and_then(|v| v.try_into().ok()).ok_or_else(bad)
        };
        let num = |h: &str| h.parse::<u64>().map_err(|_| bad());
        let topic = |h: &str| h.parse::<u32>().map_err(|_| bad());
        Ok(match parts.as_slice() {
            ["P", p] => GsKey::Poll(pid(p)?),
            ["I", p] => GsKey::PollData(pid(p)?),
            ["V", p, k] => GsKey::Vote(pid(p)?, k.parse().map_err(|_| bad())?),
            ["T", p, nu] => {
                let nu: [u8; 32] = hex::decode(nu).ok().and_then(|v| v.try_into().ok()).ok_or_else(bad)?;
                GsKey::VoteTag(pid(p)?, nu)
            }
            ["W", t] => GsKey::Thresholds(topic(t)?),
            ["U", t] => GsKey::ScalingFactor(topic(t)?),
            ["B", b, t] => GsKey::BlockwisePolls(num(b)?, topic(t)?),
            _ => return Err(bad()),
        })
    }
}

pub const POLL_VALUE_LEN: usize = 8 + 4 + 4 + 4 + 4 + 32;
pub const THRESHOLD_VALUE_LEN: usize = 32;
pub const SCALING_VALUE_LEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PollEntry {
    pub b_n: u64,
    pub topic: Topic,
    pub n_req: u32,
    pub n_seen: u32,
    pub b_vw: u32,
    pub ring_hash: Option<[u8; 32]>,
}

impl PollEntry {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(POLL_VALUE_LEN);
        out.extend_from_slice(&self.b_n.to_le_bytes());
        out.extend_from_slice(&self.topic.to_le_bytes());
        out.extend_from_slice(&self.n_req.to_le_bytes());
        out.extend_from_slice(&self.n_seen.to_le_bytes());
        out.extend_from_slice(&self.b_vw.to_le_bytes());
        out.extend_from_slice(&self.ring_hash.unwrap_or([0; 32]));
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, StateError> {
        if b.len() != POLL_VALUE_LEN {
            return Err(StateError::BadValue { kind: "Poll", expected: POLL_VALUE_LEN, got: b.len() });
        }
        let u32_at = |at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
        let h: [u8; 32] = b[24..56].try_into().unwrap();
        Ok(PollEntry {
            b_n: u64::from_le_bytes(b[..8].try_into().unwrap()),
            topic: u32_at(8),
            n_req: u32_at(12),
            n_seen: u32_at(16),
            b_vw: u32_at(20),
            ring_hash: (h != [0; 32]).then_some(h),
        })
    }
}

pub fn threshold_bytes(w: f64) -> Vec<u8> {
    let mut out = vec![0u8; THRESHOLD_VALUE_LEN];
    out[..8].copy_from_slice(&w.to_le_bytes());
    out
}

pub fn scaling_bytes(v_exp: u32, v_seen: u32) -> Vec<u8> {
    [v_exp.to_le_bytes(), v_seen.to_le_bytes()].concat()
}

/// Hash committed under BlockwisePolls: ids sorted, concatenated.
pub fn poll_list_hash(pids: &[PollId]) -> [u8; 32] {
    let mut sorted = pids.to_vec();
    sorted.sort_unstable();
    hash32(HashDomain::MERKLE_LEAF, &[b"polls", &sorted.concat()])
}

#[derive(Clone, Debug, PartialEq)]
pub enum GsValue {
    Poll(PollEntry),
    PollData(Box<[u8; CONTENT_LEN]>),
    Vote(VoteValue),
    VoteTag(bool),
    Thresholds(f64),
    ScalingFactor { v_exp: u32, v_seen: u32 },
    BlockwisePolls([u8; 32]),
}

impl GsValue {
    pub fn decode(key: &GsKey, b: &[u8]) -> Result<Self, StateError> {
        let need = |expected: usize| {
            if b.len() == expected {
                Ok(())
            } else {
                Err(StateError::BadValue { kind: key.kind_name(), expected, got: b.len() })
            }
        };
        Ok(match key {
            GsKey::Poll(_) => GsValue::Poll(PollEntry::from_bytes(b)?),
            GsKey::PollData(_) => {
                need(CONTENT_LEN)?;
                GsValue::PollData(Box::new(b.try_into().unwrap()))
            }
            GsKey::Vote(..) => {
                need(super::tx::VOTE_LEN)?;
                GsValue::Vote(VoteValue::from_bytes(b).unwrap())
            }
            GsKey::VoteTag(..) => {
                need(1)?;
                GsValue::VoteTag(b[0] == 1)
            }
            GsKey::Thresholds(_) => {
                need(THRESHOLD_VALUE_LEN)?;
                GsValue::Thresholds(f64::from_le_bytes(b[..8].try_into().unwrap()))
            }
            GsKey::ScalingFactor(_) => {
                need(SCALING_VALUE_LEN)?;
                GsValue::ScalingFactor {
                    v_exp: u32::from_le_bytes(b[..4].try_into().unwrap()),
                    v_seen: u32::from_le_bytes(b[4..].try_into().unwrap()),
                }
            }
            GsKey::BlockwisePolls(..) => {
                need(32)?;
                GsValue::BlockwisePolls(b.try_into().unwrap())
            }
        })
    }

    pub fn to_json(&self) -> Value {
        match self {
            GsValue::Poll(p) => json!({
                "b_n": p.b_n,
                "topic": p.topic,
                "n_req": p.n_req,
                "n_seen": p.n_seen,
                "b_vw": p.b_vw,
                "ring_hash": p.ring_hash.map(hex::encode),
            }),
            GsValue::PollData(c) => json!({ "content": text_of(&c[..]) }),
            GsValue::Vote(v) => json!({ "rating": v.rating, "text": text_of(&v.text[..]) }),
            GsValue::VoteTag(t) => json!(t),
            GsValue::Thresholds(w) => json!({ "w": w }),
            GsValue::ScalingFactor { v_exp, v_seen } => json!({ "v_exp": v_exp, "v_seen": v_seen }),
            GsValue::BlockwisePolls(h) => json!({ "poll_list_hash": hex::encode(h) }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    #[serde(with = "hexser")]
    pub key: Vec<u8>,
    #[serde(with = "hexser")]
    pub value: Vec<u8>,
}

/// JSON export of the global state at one height.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub height: u64,
    pub digest_len: usize,
    #[serde(with = "hexser")]
    pub root: Vec<u8>,
    pub entries: Vec<SnapshotEntry>,
}

impl StateSnapshot {
    pub fn capture(height: u64, store: &mut AuthStore) -> Self {
        StateSnapshot {
            height,
            digest_len: store.digest_len(),
            root: store.root(),
            entries: store.iter().map(|(k, v)| SnapshotEntry { key: k.to_vec(), value: v.to_vec() }).collect(),
        }
    }

    /// Rebuild the store from the entries. The recorded root is not trusted
    /// here; compare it against [`AuthStore::root`] or verify proofs against it.
    pub fn to_store(&self) -> Result<AuthStore, StateError> {
        if !(1..=32).contains(&self.digest_len) {
            return Err(StateError::Snapshot(format!("digest length {} out of range", self.digest_len)));
        }
        let mut store = AuthStore::new(self.digest_len);
        for e in &self.entries {
            store.insert(e.key.clone(), e.value.clone());
        }
        Ok(store)
    }

    pub fn check_root(&self) -> Result<AuthStore, StateError> {
        let mut store = self.to_store()?;
        if store.root() != self.root {
            return Err(StateError::RootMismatch);
        }
        Ok(store)
    }
}
