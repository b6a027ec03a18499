// SPDX-License-Identifier: Apache-2.0
//! Replicated poll ledger: transaction validation, the authenticated global
//! state, and the per-block state transition run by the block committee.

mod block;
pub mod merkle;
mod state;
mod tx;

use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::{SigningKey, VerifyingKey};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use block::{Block, CommitteeSig, IdentityKind, IdentityRecord, MAX_BLOCK_BYTES};
pub use merkle::{verify as gs_verify, AuthStore, MerkleProof};
pub use state::{
    poll_list_hash, GsKey, GsValue, PollEntry, SnapshotEntry, StateError, StateSnapshot, POLL_VALUE_LEN,
};
pub use tx::{
    decode_tx_list, encode_tx_list, text_of, Authenticator, Message, PollId, Topic, Transaction, TxError, TxKind,
    VoteValue, CONTENT_LEN, CREATE_POLL_LEN, CREATE_VOTE_LEN, MODIFY_SUB_LEN, REGISTER_LEN, VOTE_LEN,
};

use crate::blindsig::{self, RsaPublicKey};
use crate::group::{hash32, GroupElement, HashDomain};
use crate::sortition::{select_ring, AudienceMember, DrawInputs, EpochThreshold, Seed, SeedChain, ThresholdRule};
use crate::urs::{self, batch_verify, Ring, UrsParams};
use state::{scaling_bytes, threshold_bytes};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Voters register with a citizen signature, one key per citizen.
    Permissionless,
    /// Voters register with a blind-signed certificate from the role key of
    /// their topic; subscriptions are fixed.
    Permissioned,
}

#[derive(Clone, Debug)]
pub struct LedgerConfig {
    pub mode: Mode,
    pub topics: BTreeSet<Topic>,
    /// Ed25519 keys of the citizens allowed to sign transactions.
    pub citizens: BTreeSet<[u8; 32]>,
    /// Permissioned: role key per topic.
    pub role_keys: BTreeMap<Topic, RsaPublicKey>,
    /// Permissioned: registrations are refused up to and including this
    /// block, while the signing ceremony is still running.
    pub setup_until: u64,
    pub b_wait: u64,
    pub epoch_length: u64,
    pub lambda: f64,
    pub initial_w: f64,
    pub rule: ThresholdRule,
    pub genesis_seed: Seed,
    pub digest_len: usize,
    pub committee_size: usize,
    pub max_block_bytes: usize,
    pub urs: UrsParams,
}

impl LedgerConfig {
    pub fn permissionless(topics: impl IntoIterator<Item = Topic>, citizens: impl IntoIterator<Item = [u8; 32]>) -> Self {
        LedgerConfig {
            mode: Mode::Permissionless,
            topics: topics.into_iter().collect(),
            citizens: citizens.into_iter().collect(),
            role_keys: BTreeMap::new(),
            setup_until: 0,
            b_wait: 38,
            epoch_length: 1000,
            lambda: 1.0,
            initial_w: 1.0,
            rule: ThresholdRule::default(),
            genesis_seed: [0; 32],
            digest_len: merkle::DEFAULT_DIGEST_LEN,
            committee_size: 4,
            max_block_bytes: MAX_BLOCK_BYTES,
            urs: UrsParams::default(),
        }
    }

    /// Topics are the role ids of `role_keys`.
    pub fn permissioned(
        role_keys: BTreeMap<Topic, RsaPublicKey>,
        citizens: impl IntoIterator<Item = [u8; 32]>,
        setup_until: u64,
    ) -> Self {
        let mut c = LedgerConfig::permissionless(role_keys.keys().copied(), citizens);
        c.mode = Mode::Permissioned;
        c.role_keys = role_keys;
        c.setup_until = setup_until;
        c
    }

    fn epoch_of(&self, block: u64) -> u64 {
        block.saturating_sub(1) / self.epoch_length.max(1)
    }
}

/// Why a transaction is invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reject {
    #[error("authenticator does not fit the transaction kind or mode")]
    WrongAuthenticator,
    #[error("signer is not a known citizen")]
    UnknownCitizen,
    #[error("citizen signature invalid")]
    BadCitizenSignature,
    #[error("topic does not exist")]
    UnknownTopic,
    #[error("voter key is not a valid group element")]
    MalformedVoterKey,
    #[error("voter key already registered")]
    DuplicateVoterKey,
    #[error("citizen already registered a voter key")]
    CitizenAlreadyRegistered,
    #[error("membership certificate invalid")]
    BadCertificate,
    #[error("registration refused while the setup window is open")]
    SetupWindowOpen,
    #[error("poll id already used")]
    DuplicatePoll,
    #[error("n_req must be positive and below the topic audience")]
    InvalidNreq,
    #[error("voting window length must be positive")]
    EmptyVotingWindow,
    #[error("no such poll")]
    UnknownPoll,
    #[error("voting window not open yet")]
    WindowNotOpen,
    #[error("voting window closed")]
    WindowClosed,
    #[error("ring for the poll is unavailable")]
    RingUnavailable,
    #[error("a vote with this tag was already accepted")]
    DuplicateTag,
    #[error("ring signature does not verify")]
    UrsVerifyFailed,
    #[error("subscriptions cannot change in permissioned mode")]
    SubscriptionChangeForbidden,
    #[error("signer has no registered voter key")]
    NotRegistered,
}

impl Reject {
    pub fn code(&self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("transaction {index} rejected: {reason}")]
    Rejected { index: usize, reason: Reject },
    #[error("block payload of {size} bytes exceeds {max}")]
    TooLarge { size: usize, max: usize },
    #[error("{got} verdicts for {expected} transactions")]
    VerdictCount { expected: usize, got: usize },
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Source of the rings committed for polls whose wait ends in this block.
#[derive(Clone, Copy, Debug)]
pub enum RingSource<'a> {
    /// Draw locally from the full audience.
    Local,
    /// Sorted ring keys per poll, obtained elsewhere; missing polls are
    /// drawn locally.
    Delegated(&'a BTreeMap<PollId, Vec<[u8; 32]>>),
}

/// Everything needed to draw one poll's ring in the next block.
#[derive(Clone, Debug, PartialEq)]
pub struct RingTask {
    pub pid: PollId,
    pub topic: Topic,
    pub b_p: u64,
    pub n_req: u64,
    pub w: f64,
    pub seed: Seed,
    pub audience: Vec<AudienceMember>,
}

impl RingTask {
    pub fn ring_size(&self) -> usize {
        crate::sortition::ring_size(self.n_req, self.w, self.audience.len())
    }

    pub fn draw(&self) -> Vec<[u8; 32]> {
        let inputs = DrawInputs {
            pid: &self.pid,
            block_committed: self.b_p,
            seed: self.seed,
            audience: &self.audience,
            n_req: self.n_req,
        };
        select_ring(&inputs, self.w).map(|d| d.ring).unwrap_or_default()
    }
}

/// Source of ring-signature verdicts during validation.
#[derive(Clone, Copy, Debug)]
pub enum SigCheck<'a> {
    /// Verify locally, batching votes of the same poll.
    Local,
    /// Verdicts per transaction index, obtained elsewhere; `None` entries
    /// are verified locally.
    Delegated(&'a [Option<bool>]),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoterRecord {
    pub user_id: u64,
    pub pk: [u8; 32],
    pub citizen: Option<[u8; 32]>,
    /// `(block, topic)` subscriptions in block order.
    pub history: Vec<(u64, Topic)>,
}

impl VoterRecord {
    pub fn current_topic(&self) -> Topic {
        self.history.last().map(|h| h.1).unwrap_or_default()
    }

    /// In the audience of a `topic` poll committed at `b_p`.
    pub fn eligible_at(&self, topic: Topic, b_p: u64, b_wait: u64) -> bool {
        matches!(self.history.iter().rev().find(|(b, _)| *b <= b_p), Some(&(s, t)) if t == topic && s + b_wait <= b_p)
    }
}

#[derive(Clone, Debug)]
pub struct PollRecord {
    pub pid: PollId,
    pub creator: [u8; 32],
    pub topic: Topic,
    pub b_p: u64,
    pub n_req: u32,
    pub b_vw: u32,
    /// Selected keys once drawn.
    pub ring_keys: Option<Vec<[u8; 32]>>,
    ring: Option<Ring>,
}

impl PollRecord {
    /// First and last block (inclusive) in which votes are accepted.
    pub fn window(&self, b_wait: u64) -> (u64, u64) {
        (self.b_p + b_wait + 1, self.b_p + b_wait + self.b_vw as u64)
    }

    pub fn ring(&self) -> Option<&Ring> {
        self.ring.as_ref()
    }
}

/// Validation-relevant effects of earlier transactions in the same block.
#[derive(Default)]
struct Overlay {
    voter_keys: BTreeSet<[u8; 32]>,
    citizens: BTreeMap<[u8; 32], [u8; 32]>,
    pids: BTreeSet<PollId>,
    tags: BTreeSet<(PollId, [u8; 32])>,
}

pub struct Ledger {
    config: LedgerConfig,
    store: AuthStore,
    root: Vec<u8>,
    seeds: SeedChain,
    height: u64,
    voters: BTreeMap<[u8; 32], VoterRecord>,
    by_citizen: BTreeMap<[u8; 32], [u8; 32]>,
    polls: BTreeMap<PollId, PollRecord>,
    polls_by_block: BTreeMap<u64, Vec<PollId>>,
    closing: BTreeMap<u64, Vec<PollId>>,
    thresholds: BTreeMap<Topic, EpochThreshold<f64>>,
    blocks: Vec<Block>,
    committee: Vec<SigningKey>,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        let mut store = AuthStore::new(config.digest_len);
        let mut thresholds = BTreeMap::new();
        for &t in &config.topics {
            let th = EpochThreshold::new(config.initial_w, config.lambda);
            store.insert(GsKey::Thresholds(t).to_bytes(), threshold_bytes(th.w));
            store.insert(GsKey::ScalingFactor(t).to_bytes(), scaling_bytes(0, 0));
            thresholds.insert(t, th);
        }
        let mut rng = ChaCha20Rng::from_seed(hash32(HashDomain::VRF, &[b"committee", &config.genesis_seed]));
        let committee = (0..config.committee_size).map(|_| SigningKey::generate(&mut rng)).collect();
        let root = store.root();
        Ledger {
            seeds: SeedChain::new(config.genesis_seed),
            config,
            store,
            root,
            height: 0,
            voters: BTreeMap::new(),
            by_citizen: BTreeMap::new(),
            polls: BTreeMap::new(),
            polls_by_block: BTreeMap::new(),
            closing: BTreeMap::new(),
            thresholds,
            blocks: Vec::new(),
            committee,
        }
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    /// Number of the last committed block; 0 before the first.
    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn root(&self) -> &[u8] {
        &self.root
    }

    pub fn seeds(&self) -> &SeedChain {
        &self.seeds
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn committee_keys(&self) -> Vec<VerifyingKey> {
        self.committee.iter().map(|k| k.verifying_key()).collect()
    }

    pub fn voters(&self) -> impl Iterator<Item = &VoterRecord> {
        self.voters.values()
    }

    pub fn voter(&self, pk: &[u8; 32]) -> Option<&VoterRecord> {
        self.voters.get(pk)
    }

    pub fn poll(&self, pid: &PollId) -> Option<&PollRecord> {
        self.polls.get(pid)
    }

    pub fn polls(&self) -> impl Iterator<Item = &PollRecord> {
        self.polls.values()
    }

    /// Polls committed in `block`, in commit order.
    pub fn polls_committed_at(&self, block: u64) -> &[PollId] {
        self.polls_by_block.get(&block).map_or(&[], Vec::as_slice)
    }

    pub fn threshold(&self, topic: Topic) -> Option<&EpochThreshold<f64>> {
        self.thresholds.get(&topic)
    }

    pub fn store(&self) -> &AuthStore {
        &self.store
    }

    pub fn poll_entry(&self, pid: &PollId) -> Option<PollEntry> {
        self.store.get(&GsKey::Poll(*pid).to_bytes()).and_then(|b| PollEntry::from_bytes(b).ok())
    }

    /// Value and Merkle proof against [`Self::root`].
    pub fn gs_read(&mut self, key: &GsKey) -> (Option<Vec<u8>>, MerkleProof) {
        self.store.read(&key.to_bytes())
    }

    pub fn snapshot(&mut self) -> StateSnapshot {
        StateSnapshot::capture(self.height, &mut self.store)
    }

    /// Members eligible for a `topic` poll committed at `b_p`, by user id.
    pub fn audience(&self, topic: Topic, b_p: u64) -> Vec<AudienceMember> {
        let mut out: Vec<_> = self
            .voters
            .values()
            .filter(|v| v.eligible_at(topic, b_p, self.config.b_wait))
            .map(|v| AudienceMember { user_id: v.user_id, pk: v.pk })
            .collect();
        out.sort_unstable();
        out
    }

    /// Check one transaction against the committed state for the next block.
    pub fn validate(&self, tx: &Transaction) -> Result<(), Reject> {
        self.screen(std::slice::from_ref(tx), SigCheck::Local).remove(0)
    }

    /// Verdict of each transaction if the list were proposed as the next
    /// block in this order. A block of exactly the `Ok` entries applies.
    pub fn filter_valid(&self, txs: &[Transaction]) -> Vec<Result<(), Reject>> {
        self.screen(txs, SigCheck::Local)
    }

    pub fn filter_valid_with(&self, txs: &[Transaction], sig: SigCheck<'_>) -> Vec<Result<(), Reject>> {
        self.screen(txs, sig)
    }

    /// Ring-signature verdict of each vote if `txs` were the next block;
    /// `None` for non-votes and votes failing the window or ring checks.
    pub fn signature_verdicts(&self, txs: &[Transaction]) -> Vec<Option<bool>> {
        self.batch_verdicts(txs, self.height + 1)
    }

    fn vote_prechecks(&self, pid: &PollId, b_i: u64) -> Result<&PollRecord, Reject> {
        let rec = self.polls.get(pid).ok_or(Reject::UnknownPoll)?;
        let (open, close) = rec.window(self.config.b_wait);
        if b_i < open {
            return Err(Reject::WindowNotOpen);
        }
        if b_i > close {
            return Err(Reject::WindowClosed);
        }
        let ring = rec.ring.as_ref().ok_or(Reject::RingUnavailable)?;
        let stored = self.poll_entry(pid).and_then(|e| e.ring_hash);
        if stored != Some(ring.hash()) {
            return Err(Reject::RingUnavailable);
        }
        Ok(rec)
    }

    /// Ring-signature verdicts for every vote that passes the cheap checks,
    /// batched per poll.
    fn batch_verdicts(&self, txs: &[Transaction], b_i: u64) -> Vec<Option<bool>> {
        let mut groups: BTreeMap<PollId, Vec<usize>> = BTreeMap::new();
        for (i, tx) in txs.iter().enumerate() {
            if let (Message::CreateVote { pid, .. }, Authenticator::Ring(_)) = (&tx.message, &tx.auth) {
                if self.vote_prechecks(pid, b_i).is_ok() {
                    groups.entry(*pid).or_default().push(i);
                }
            }
        }
        let mut out = vec![None; txs.len()];
        for (pid, idxs) in groups {
            let ring = self.polls[&pid].ring.as_ref().unwrap();
            let votes: Vec<([u8; VOTE_LEN], &urs::UrsSignature)> = idxs
                .iter()
                .map(|&i| match (&txs[i].message, &txs[i].auth) {
                    (Message::CreateVote { vote, .. }, Authenticator::Ring(s)) => (vote.to_bytes(), s),
                    _ => unreachable!(),
                })
                .collect();
            let refs: Vec<(&[u8], &urs::UrsSignature)> = votes.iter().map(|(v, s)| (&v[..], *s)).collect();
            let seed = hash32(HashDomain::TXGROUP, &[b"batch", &b_i.to_le_bytes(), &pid, &self.root]);
            for (&i, ok) in idxs.iter().zip(batch_verify(&self.config.urs, &pid, ring, &refs, seed)) {
                out[i] = Some(ok);
            }
        }
        out
    }

    fn screen(&self, txs: &[Transaction], sig: SigCheck<'_>) -> Vec<Result<(), Reject>> {
        let b_i = self.height + 1;
        let verdicts = match sig {
            SigCheck::Local => self.batch_verdicts(txs, b_i),
            SigCheck::Delegated(v) => (0..txs.len()).map(|i| v.get(i).copied().flatten()).collect(),
        };
        let mut ov = Overlay::default();
        txs.iter()
            .zip(verdicts)
            .map(|(tx, verdict)| {
                let r = self.check(tx, b_i, &ov, verdict);
                if r.is_ok() {
                    match (&tx.message, &tx.auth) {
                        (Message::RegisterVoter { pk, .. }, auth) => {
                            ov.voter_keys.insert(*pk);
                            if let Some(c) = auth.citizen_signer() {
                                ov.citizens.insert(c, *pk);
                            }
                        }
                        (Message::CreatePoll { pid, .. }, _) => {
                            ov.pids.insert(*pid);
                        }
                        (Message::CreateVote { pid, .. }, Authenticator::Ring(s)) => {
                            ov.tags.insert((*pid, *s.nu_bytes()));
                        }
                        _ => {}
                    }
                }
                r
            })
            .collect()
    }

    fn check_citizen(&self, tx: &Transaction) -> Result<[u8; 32], Reject> {
        let signer = tx.auth.citizen_signer().ok_or(Reject::WrongAuthenticator)?;
        if !self.config.citizens.contains(&signer) {
            return Err(Reject::UnknownCitizen);
        }
        if !tx.citizen_signature_ok() {
            return Err(Reject::BadCitizenSignature);
        }
        Ok(signer)
    }

    fn check(&self, tx: &Transaction, b_i: u64, ov: &Overlay, verdict: Option<bool>) -> Result<(), Reject> {
        match &tx.message {
            Message::RegisterVoter { pk, topic } => {
                match self.config.mode {
                    Mode::Permissionless => {
                        let signer = self.check_citizen(tx)?;
                        if self.by_citizen.contains_key(&signer) || ov.citizens.contains_key(&signer) {
                            return Err(Reject::CitizenAlreadyRegistered);
                        }
                    }
                    Mode::Permissioned => {
                        let Authenticator::Certificate { sig } = &tx.auth else {
                            return Err(Reject::WrongAuthenticator);
                        };
                        if b_i <= self.config.setup_until {
                            return Err(Reject::SetupWindowOpen);
                        }
                        let key = self.config.role_keys.get(topic).ok_or(Reject::UnknownTopic)?;
                        let ok = key.decode(sig).map(|s| blindsig::verify(key, pk, &s)).unwrap_or(false);
                        if !ok {
                            return Err(Reject::BadCertificate);
                        }
                    }
                }
                if !self.config.topics.contains(topic) {
                    return Err(Reject::UnknownTopic);
                }
                match GroupElement::from_bytes(pk) {
                    Ok(p) if !p.is_identity() => {}
                    _ => return Err(Reject::MalformedVoterKey),
                }
                if self.voters.contains_key(pk) || ov.voter_keys.contains(pk) {
                    return Err(Reject::DuplicateVoterKey);
                }
                Ok(())
            }
            Message::CreatePoll { pid, topic, n_req, b_vw, .. } => {
                self.check_citizen(tx)?;
                if self.polls.contains_key(pid) || ov.pids.contains(pid) {
                    return Err(Reject::DuplicatePoll);
                }
                if !self.config.topics.contains(topic) {
                    return Err(Reject::UnknownTopic);
                }
                let audience = self.audience(*topic, b_i).len();
                if *n_req == 0 || *n_req as usize >= audience {
                    return Err(Reject::InvalidNreq);
                }
                if *b_vw == 0 {
                    return Err(Reject::EmptyVotingWindow);
                }
                Ok(())
            }
            Message::CreateVote { pid, vote } => {
                let Authenticator::Ring(sig) = &tx.auth else {
                    return Err(Reject::WrongAuthenticator);
                };
                let rec = self.vote_prechecks(pid, b_i)?;
                let tag = *sig.nu_bytes();
                if ov.tags.contains(&(*pid, tag)) || self.store.get(&GsKey::VoteTag(*pid, tag).to_bytes()).is_some() {
                    return Err(Reject::DuplicateTag);
                }
                let ok = verdict.unwrap_or_else(|| {
                    urs::verify(&self.config.urs, pid, &vote.to_bytes(), rec.ring.as_ref().unwrap(), sig).is_ok()
                });
                if !ok {
                    return Err(Reject::UrsVerifyFailed);
                }
                Ok(())
            }
            Message::ModifySubscription { topic } => {
                if self.config.mode == Mode::Permissioned {
                    return Err(Reject::SubscriptionChangeForbidden);
                }
                let signer = self.check_citizen(tx)?;
                if !self.config.topics.contains(topic) {
                    return Err(Reject::UnknownTopic);
                }
                if !self.by_citizen.contains_key(&signer) && !ov.citizens.contains_key(&signer) {
                    return Err(Reject::NotRegistered);
                }
                Ok(())
            }
        }
    }

    pub fn apply_block(&mut self, txs: Vec<Transaction>, proposer: &[u8]) -> Result<&Block, BlockError> {
        self.apply_block_full(txs, proposer, SigCheck::Local, RingSource::Local)
    }

    pub fn apply_block_with(
        &mut self,
        txs: Vec<Transaction>,
        proposer: &[u8],
        sig: SigCheck<'_>,
    ) -> Result<&Block, BlockError> {
        self.apply_block_full(txs, proposer, sig, RingSource::Local)
    }

    /// Validate and commit the next block. Any invalid transaction rejects
    /// the whole block and leaves the ledger untouched.
    pub fn apply_block_full(
        &mut self,
        txs: Vec<Transaction>,
        proposer: &[u8],
        sig: SigCheck<'_>,
        rings: RingSource<'_>,
    ) -> Result<&Block, BlockError> {
        if let SigCheck::Delegated(v) = sig {
            if v.len() != txs.len() {
                return Err(BlockError::VerdictCount { expected: txs.len(), got: v.len() });
            }
        }
        let size = encode_tx_list(&txs).len();
        if size > self.config.max_block_bytes {
            return Err(BlockError::TooLarge { size, max: self.config.max_block_bytes });
        }
        if let Some((index, reason)) =
            self.screen(&txs, sig).into_iter().enumerate().find_map(|(i, r)| r.err().map(|e| (i, e)))
        {
            return Err(BlockError::Rejected { index, reason });
        }
        let b_i = self.height + 1;
        let draws: Vec<(PollId, Vec<[u8; 32]>)> = self
            .ring_tasks(proposer)?
            .into_iter()
            .map(|t| {
                let given = match rings {
                    RingSource::Delegated(m) => m.get(&t.pid).cloned(),
                    RingSource::Local => None,
                };
                (t.pid, given.unwrap_or_else(|| t.draw()))
            })
            .collect();

        // Commit.
        self.seeds.advance(proposer);
        self.height = b_i;
        for (pid, keys) in draws {
            let ring = Ring::from_keys(&keys).ok();
            let h = crate::group::ring_hash(&keys.concat());
            let key = GsKey::Poll(pid).to_bytes();
            let mut entry = PollEntry::from_bytes(self.store.get(&key).unwrap()).unwrap();
            entry.ring_hash = Some(h);
            self.store.insert(key, entry.to_bytes());
            let rec = self.polls.get_mut(&pid).unwrap();
            rec.ring_keys = Some(keys);
            rec.ring = ring;
        }
        let mut identity = Vec::new();
        let mut new_polls: BTreeMap<Topic, Vec<PollId>> = BTreeMap::new();
        for tx in &txs {
            self.commit_tx(tx, b_i, &mut identity, &mut new_polls);
        }
        self.close_windows(b_i);
        if b_i % self.config.epoch_length.max(1) == 0 {
            for (t, th) in self.thresholds.iter_mut() {
                *th = th.advance(self.config.rule);
                self.store.insert(GsKey::Thresholds(*t).to_bytes(), threshold_bytes(th.w));
                self.store.insert(GsKey::ScalingFactor(*t).to_bytes(), scaling_bytes(0, 0));
            }
        }
        for (topic, pids) in &new_polls {
            self.store.insert(GsKey::BlockwisePolls(b_i, *topic).to_bytes(), poll_list_hash(pids).to_vec());
        }
        self.root = self.store.root();
        let prev_hash = self.blocks.last().map_or([0; 32], Block::header_hash);
        let mut block = Block { number: b_i, prev_hash, txs, identity, state_root: self.root.clone(), committee: Vec::new() };
        block.sign_with(&self.committee);
        self.blocks.push(block);
        Ok(self.blocks.last().unwrap())
    }

    /// Ring draws due in the next block if `proposer` proposes it: polls
    /// committed `B_wait` blocks earlier, grouped by topic.
    pub fn ring_tasks(&self, proposer: &[u8]) -> Result<Vec<RingTask>, BlockError> {
        let b_i = self.height + 1;
        let Some(b_p) = b_i.checked_sub(self.config.b_wait) else {
            return Ok(Vec::new());
        };
        let seed = crate::sortition::next_seed(self.seeds.get(self.height).unwrap(), proposer);
        let mut by_topic: BTreeMap<Topic, Vec<PollId>> = BTreeMap::new();
        for pid in self.polls_committed_at(b_p) {
            by_topic.entry(self.polls[pid].topic).or_default().push(*pid);
        }
        let mut out = Vec::new();
        for (topic, pids) in by_topic {
            let committed = self.store.get(&GsKey::BlockwisePolls(b_p, topic).to_bytes());
            if committed != Some(&poll_list_hash(&pids)[..]) {
                return Err(BlockError::Invariant(format!("poll list of block {b_p} topic {topic} does not match")));
            }
            let audience = self.audience(topic, b_p);
            let w = self.thresholds[&topic].w;
            for pid in pids {
                let n_req = self.polls[&pid].n_req as u64;
                out.push(RingTask { pid, topic, b_p, n_req, w, seed, audience: audience.clone() });
            }
        }
        Ok(out)
    }

    fn commit_tx(
        &mut self,
        tx: &Transaction,
        b_i: u64,
        identity: &mut Vec<IdentityRecord>,
        new_polls: &mut BTreeMap<Topic, Vec<PollId>>,
    ) {
        match &tx.message {
            Message::RegisterVoter { pk, topic } => {
                let user_id = self.voters.len() as u64;
                let citizen = tx.auth.citizen_signer();
                if let Some(c) = citizen {
                    self.by_citizen.insert(c, *pk);
                }
                self.voters.insert(*pk, VoterRecord { user_id, pk: *pk, citizen, history: vec![(b_i, *topic)] });
                identity.push(IdentityRecord { kind: IdentityKind::Registration, user_id, pk: *pk, topic: *topic });
            }
            Message::ModifySubscription { topic } => {
                let pk = self.by_citizen[&tx.auth.citizen_signer().unwrap()];
                let v = self.voters.get_mut(&pk).unwrap();
                v.history.push((b_i, *topic));
                identity.push(IdentityRecord { kind: IdentityKind::Subscription, user_id: v.user_id, pk, topic: *topic });
            }
            Message::CreatePoll { pid, topic, n_req, b_vw, content } => {
                let entry = PollEntry { b_n: b_i, topic: *topic, n_req: *n_req, n_seen: 0, b_vw: *b_vw, ring_hash: None };
                self.store.insert(GsKey::Poll(*pid).to_bytes(), entry.to_bytes());
                self.store.insert(GsKey::PollData(*pid).to_bytes(), content.to_vec());
                let rec = PollRecord {
                    pid: *pid,
                    creator: tx.auth.citizen_signer().unwrap_or_default(),
                    topic: *topic,
                    b_p: b_i,
                    n_req: *n_req,
                    b_vw: *b_vw,
                    ring_keys: None,
                    ring: None,
                };
                let close = rec.window(self.config.b_wait).1;
                self.closing.entry(close).or_default().push(*pid);
                self.polls.insert(*pid, rec);
                self.polls_by_block.entry(b_i).or_default().push(*pid);
                new_polls.entry(*topic).or_default().push(*pid);
            }
            Message::CreateVote { pid, vote } => {
                let Authenticator::Ring(sig) = &tx.auth else { unreachable!() };
                let key = GsKey::Poll(*pid).to_bytes();
                let mut entry = PollEntry::from_bytes(self.store.get(&key).unwrap()).unwrap();
                self.store.insert(GsKey::Vote(*pid, entry.n_seen).to_bytes(), vote.to_bytes().to_vec());
                self.store.insert(GsKey::VoteTag(*pid, *sig.nu_bytes()).to_bytes(), vec![1]);
                entry.n_seen += 1;
                self.store.insert(key, entry.to_bytes());
            }
        }
    }

    /// Feed polls whose window ends at `b_i` into their topic's counters
    /// when the whole window lies in the current epoch.
    fn close_windows(&mut self, b_i: u64) {
        let Some(pids) = self.closing.remove(&b_i) else {
            return;
        };
        let epoch = self.config.epoch_of(b_i);
        for pid in pids {
            let rec = &self.polls[&pid];
            if self.config.epoch_of(rec.window(self.config.b_wait).0) != epoch {
                continue;
            }
            let n_seen = self.poll_entry(&pid).unwrap().n_seen;
            let th = self.thresholds.get_mut(&rec.topic).unwrap();
            th.record_poll(rec.n_req as u64, n_seen as u64);
            let (v_exp, v_seen) = (th.v_exp as u32, th.v_seen as u32);
            self.store.insert(GsKey::ScalingFactor(rec.topic).to_bytes(), scaling_bytes(v_exp, v_seen));
        }
    }

    /// Per-poll counts: `n_seen` equals the Vote and VoteTag entry counts.
    pub fn check_invariants(&mut self) -> Result<(), String> {
        for pid in self.polls.keys() {
            let n_seen = self.poll_entry(pid).ok_or("poll entry missing")?.n_seen as usize;
            let votes = self.store.range_prefix(&[&b"V"[..], pid].concat()).count();
            let tags = self.store.range_prefix(&[&b"T"[..], pid].concat()).count();
            if votes != n_seen || tags != n_seen {
                return Err(format!("poll {}: n_seen {n_seen}, votes {votes}, tags {tags}", hex::encode(pid)));
            }
        }
        if self.store.root() != self.root {
            return Err("stored root differs from the recomputed root".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
