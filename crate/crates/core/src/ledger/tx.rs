// SPDX-License-Identifier: Apache-2.0
//! Transaction wire format.
//!
//! A transaction is its message followed by its authenticator:
//!
//! | kind               | message                                   | authenticator                      |
//! |--------------------|-------------------------------------------|------------------------------------|
//! | RegisterVoter      | `R` pk(32) topic(4) = 37                  | signer(32) Ed25519(64), or RSA `S` |
//! | CreatePoll         | `P` pid(8) topic(4) n_req(4) B_vw(4) content(256) = 277 | signer(32) Ed25519(64) |
//! | CreateVote         | `V` pid(8) rating(1) text(256) = 266      | URS signature, 32(8n+6)            |
//! | ModifySubscription | `C` topic(4) = 5                          | signer(32) Ed25519(64)             |
//!
//! Integers are little-endian. The signer key travels with the 64-byte
//! signature so a committee can check it without a directory lookup.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{hash32, GroupScalar, HashDomain};
use crate::urs::{sign, Ring, UrsError, UrsParams, UrsSignature};

pub type PollId = [u8; 8];
pub type Topic = u32;

pub const CONTENT_LEN: usize = 256;
pub const VOTE_TEXT_LEN: usize = 256;
pub const VOTE_LEN: usize = 1 + VOTE_TEXT_LEN;
pub const REGISTER_LEN: usize = 1 + 32 + 4;
pub const CREATE_POLL_LEN: usize = 1 + 8 + 4 + 4 + 4 + CONTENT_LEN;
pub const CREATE_VOTE_LEN: usize = 1 + 8 + VOTE_LEN;
pub const MODIFY_SUB_LEN: usize = 1 + 4;
pub const CITIZEN_AUTH_LEN: usize = 32 + 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("empty transaction")]
    Empty,
    #[error("unknown transaction kind {0:#04x}")]
    UnknownKind(u8),
    #[error("{kind:?}: expected {expected} bytes, got {got}")]
    BadLength { kind: TxKind, expected: usize, got: usize },
    #[error("vote signature: {0}")]
    Signature(UrsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    RegisterVoter,
    CreatePoll,
    CreateVote,
    ModifySubscription,
}

impl TxKind {
    pub fn tag(self) -> u8 {
        match self {
            TxKind::RegisterVoter => b'R',
            TxKind::CreatePoll => b'P',
            TxKind::CreateVote => b'V',
            TxKind::ModifySubscription => b'C',
        }
    }

    pub fn from_tag(t: u8) -> Result<Self, TxError> {
        Ok(match t {
            b'R' => TxKind::RegisterVoter,
            b'P' => TxKind::CreatePoll,
            b'V' => TxKind::CreateVote,
            b'C' => TxKind::ModifySubscription,
            other => return Err(TxError::UnknownKind(other)),
        })
    }

    pub fn message_len(self) -> usize {
        match self {
            TxKind::RegisterVoter => REGISTER_LEN,
            TxKind::CreatePoll => CREATE_POLL_LEN,
            TxKind::CreateVote => CREATE_VOTE_LEN,
            TxKind::ModifySubscription => MODIFY_SUB_LEN,
        }
    }
}

/// Fixed-width text field: UTF-8 bytes, zero padded, truncated to fit.
fn fixed_text<const N: usize>(s: &str) -> [u8; N] {
    let mut out = [0u8; N];
    let b = s.as_bytes();
    let n = b.len().min(N);
    out[..n].copy_from_slice(&b[..n]);
    out
}

/// Inverse of the padding, lossy on invalid UTF-8.
pub fn text_of(field: &[u8]) -> String {
    let end = field.iter().rposition(|&b| b != 0).map_or(0, |p| p + 1);
    String::from_utf8_lossy(&field[..end]).into_owned()
}

/// Rating plus free-text comment.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VoteValue {
    pub rating: u8,
    pub text: Box<[u8; VOTE_TEXT_LEN]>,
}

impl VoteValue {
    pub fn new(rating: u8, text: &str) -> Self {
        VoteValue { rating, text: Box::new(fixed_text(text)) }
    }

    pub fn to_bytes(&self) -> [u8; VOTE_LEN] {
        let mut out = [0u8; VOTE_LEN];
        out[0] = self.rating;
        out[1..].copy_from_slice(&self.text[..]);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        if b.len() != VOTE_LEN {
            return None;
        }
        Some(VoteValue { rating: b[0], text: Box::new(b[1..].try_into().unwrap()) })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Message {
    RegisterVoter { pk: [u8; 32], topic: Topic },
    CreatePoll { pid: PollId, topic: Topic, n_req: u32, b_vw: u32, content: Box<[u8; CONTENT_LEN]> },
    CreateVote { pid: PollId, vote: VoteValue },
    ModifySubscription { topic: Topic },
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

impl Message {
    pub fn create_poll(pid: PollId, topic: Topic, n_req: u32, b_vw: u32, content: &str) -> Self {
        Message::CreatePoll { pid, topic, n_req, b_vw, content: Box::new(fixed_text(content)) }
    }

    pub fn kind(&self) -> TxKind {
        match self {
            Message::RegisterVoter { .. } => TxKind::RegisterVoter,
            Message::CreatePoll { .. } => TxKind::CreatePoll,
            Message::CreateVote { .. } => TxKind::CreateVote,
            Message::ModifySubscription { .. } => TxKind::ModifySubscription,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.kind().message_len());
        out.push(self.kind().tag());
        match self {
            Message::RegisterVoter { pk, topic } => {
                out.extend_from_slice(pk);
                out.extend_from_slice(&topic.to_le_bytes());
            }
            Message::CreatePoll { pid, topic, n_req, b_vw, content } => {
                out.extend_from_slice(pid);
                out.extend_from_slice(&topic.to_le_bytes());
                out.extend_from_slice(&n_req.to_le_bytes());
                out.extend_from_slice(&b_vw.to_le_bytes());
                out.extend_from_slice(&content[..]);
            }
            Message::CreateVote { pid, vote } => {
                out.extend_from_slice(pid);
                out.extend_from_slice(&vote.to_bytes());
            }
            Message::ModifySubscription { topic } => out.extend_from_slice(&topic.to_le_bytes()),
        }
        out
    }

    /// Decode exactly one message of the length its kind prescribes.
    pub fn from_bytes(b: &[u8]) -> Result<Self, TxError> {
        let kind = TxKind::from_tag(*b.first().ok_or(TxError::Empty)?)?;
        let expected = kind.message_len();
        if b.len() != expected {
            return Err(TxError::BadLength { kind, expected, got: b.len() });
        }
        let pid = || -> PollId { b[1..9].try_into().unwrap() };
        Ok(match kind {
            TxKind::RegisterVoter => Message::RegisterVoter { pk: b[1..33].try_into().unwrap(), topic: u32_at(b, 33) },
            TxKind::CreatePoll => Message::CreatePoll {
                pid: pid(),
                topic: u32_at(b, 9),
                n_req: u32_at(b, 13),
                b_vw: u32_at(b, 17),
                content: Box::new(b[21..].try_into().unwrap()),
            },
            TxKind::CreateVote => Message::CreateVote { pid: pid(), vote: VoteValue::from_bytes(&b[9..]).unwrap() },
            TxKind::ModifySubscription => Message::ModifySubscription { topic: u32_at(b, 1) },
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Authenticator {
    Citizen { signer: [u8; 32], sig: [u8; 64] },
    /// RSA signature on the voter key under the topic's role key.
    Certificate { sig: Vec<u8> },
    Ring(UrsSignature),
}

impl Authenticator {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Authenticator::Citizen { signer, sig } => [&signer[..], &sig[..]].concat(),
            Authenticator::Certificate { sig } => sig.clone(),
            Authenticator::Ring(s) => s.as_bytes().to_vec(),
        }
    }

    /// Length of the signature proper (the signer key is not counted).
    pub fn signature_len(&self) -> usize {
        match self {
            Authenticator::Citizen { sig, .. } => sig.len(),
            Authenticator::Certificate { sig } => sig.len(),
            Authenticator::Ring(s) => s.len(),
        }
    }

    pub fn citizen_signer(&self) -> Option<[u8; 32]> {
        match self {
            Authenticator::Citizen { signer, .. } => Some(*signer),
            _ => None,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transaction {
    pub message: Message,
    pub auth: Authenticator,
}

impl Transaction {
    pub fn signed_by(message: Message, key: &SigningKey) -> Self {
        let sig = key.sign(&message.to_bytes()).to_bytes();
        Transaction { message, auth: Authenticator::Citizen { signer: key.verifying_key().to_bytes(), sig } }
    }

    /// Permissioned registration: `sig` is the unblinded certificate.
    pub fn certified(pk: [u8; 32], topic: Topic, sig: Vec<u8>) -> Self {
        Transaction { message: Message::RegisterVoter { pk, topic }, auth: Authenticator::Certificate { sig } }
    }

    pub fn vote<R: RngCore + CryptoRng>(
        params: &UrsParams,
        pid: PollId,
        vote: VoteValue,
        ring: &Ring,
        sk: &GroupScalar,
        rng: &mut R,
    ) -> Result<Self, UrsError> {
        let sig = sign(params, &pid, &vote.to_bytes(), ring, sk, rng)?;
        Ok(Transaction { message: Message::CreateVote { pid, vote }, auth: Authenticator::Ring(sig) })
    }

    pub fn kind(&self) -> TxKind {
        self.message.kind()
    }

    pub fn poll_id(&self) -> Option<PollId> {
        match &self.message {
            Message::CreatePoll { pid, .. } | Message::CreateVote { pid, .. } => Some(*pid),
            _ => None,
        }
    }

    /// Ed25519 check of a citizen authenticator over the message bytes.
    pub fn citizen_signature_ok(&self) -> bool {
        let Authenticator::Citizen { signer, sig } = &self.auth else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(signer) else {
            return false;
        };
        vk.verify(&self.message.to_bytes(), &Signature::from_bytes(sig)).is_ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.message.to_bytes();
        out.extend_from_slice(&self.auth.to_bytes());
        out
    }

    pub fn encoded_len(&self) -> usize {
        self.message.kind().message_len()
            + match &self.auth {
                Authenticator::Citizen { .. } => CITIZEN_AUTH_LEN,
                other => other.signature_len(),
            }
    }

    /// Decode one transaction. RegisterVoter carries a citizen
    /// authenticator when exactly 96 bytes follow the message, otherwise an
    /// RSA certificate (at least 256 bytes for the supported key sizes).
    pub fn from_bytes(b: &[u8]) -> Result<Self, TxError> {
        let kind = TxKind::from_tag(*b.first().ok_or(TxError::Empty)?)?;
        let ml = kind.message_len();
        if b.len() < ml {
            return Err(TxError::BadLength { kind, expected: ml, got: b.len() });
        }
        let message = Message::from_bytes(&b[..ml])?;
        let rest = &b[ml..];
        let citizen = |rest: &[u8]| -> Result<Authenticator, TxError> {
            if rest.len() != CITIZEN_AUTH_LEN {
                return Err(TxError::BadLength { kind, expected: ml + CITIZEN_AUTH_LEN, got: b.len() });
            }
            Ok(Authenticator::Citizen { signer: rest[..32].try_into().unwrap(), sig: rest[32..].try_into().unwrap() })
        };
        let auth = match kind {
            TxKind::CreateVote => Authenticator::Ring(UrsSignature::from_bytes(rest).map_err(TxError::Signature)?),
            TxKind::RegisterVoter if rest.len() != CITIZEN_AUTH_LEN => {
                if rest.is_empty() {
                    return Err(TxError::BadLength { kind, expected: ml + CITIZEN_AUTH_LEN, got: b.len() });
                }
                Authenticator::Certificate { sig: rest.to_vec() }
            }
            _ => citizen(rest)?,
        };
        Ok(Transaction { message, auth })
    }

    /// Stable identifier: hash of the full encoding.
    pub fn id(&self) -> [u8; 32] {
        hash32(HashDomain::TXGROUP, &[b"tx-id", &self.to_bytes()])
    }
}

/// Length-prefixed list of encoded transactions.
pub fn encode_tx_list(txs: &[Transaction]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(txs.len() as u32).to_le_bytes());
    for tx in txs {
        let b = tx.to_bytes();
        out.extend_from_slice(&(b.len() as u32).to_le_bytes());
        out.extend_from_slice(&b);
    }
    out
}

pub fn decode_tx_list(mut b: &[u8]) -> Result<Vec<Transaction>, TxError> {
    let mut take = |n: usize| -> Result<&[u8], TxError> {
        if b.len() < n {
            return Err(TxError::Empty);
        }
        let (head, tail) = b.split_at(n);
        b = tail;
        Ok(head)
    };
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        out.push(Transaction::from_bytes(take(len)?)?);
    }
    if !b.is_empty() {
        return Err(TxError::Empty);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::urs::{keygen, signature_len};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn citizen(seed: u8) -> SigningKey {
        SigningKey::from_bytes(&[seed; 32])
    }

    #[test]
    fn sizes_per_kind() {
        let k = citizen(1);
        let reg = Transaction::signed_by(Message::RegisterVoter { pk: [7; 32], topic: 3 }, &k);
        assert_eq!(reg.message.to_bytes().len(), 37);
        assert_eq!(reg.auth.signature_len(), 64);
        let poll = Transaction::signed_by(Message::create_poll(*b"poll0001", 3, 10, 5, "q?"), &k);
        assert_eq!(poll.message.to_bytes().len(), 277);
        let sub = Transaction::signed_by(Message::ModifySubscription { topic: 9 }, &k);
        assert_eq!(sub.message.to_bytes().len(), 5);

        let params = UrsParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let keys: Vec<_> = (0..100).map(|_| keygen(&params, &mut rng)).collect();
        let ring = Ring::new(keys.iter().map(|k| k.pk)).unwrap();
        let vote = Transaction::vote(&params, *b"poll0001", VoteValue::new(4, "ok"), &ring, &keys[3].sk, &mut rng).unwrap();
        assert_eq!(vote.message.to_bytes().len(), 266);
        assert_eq!(vote.auth.signature_len(), signature_len(100));
        assert_eq!(VOTE_LEN + vote.auth.signature_len(), 2241);
        assert_eq!(Transaction::from_bytes(&vote.to_bytes()).unwrap(), vote);
    }

    #[test]
    fn citizen_signature_checks() {
        let k = citizen(2);
        let mut tx = Transaction::signed_by(Message::ModifySubscription { topic: 1 }, &k);
        assert!(tx.citizen_signature_ok());
        tx.message = Message::ModifySubscription { topic: 2 };
        assert!(!tx.citizen_signature_ok());
    }

    #[test]
    fn decode_errors() {
        assert_eq!(Transaction::from_bytes(&[]), Err(TxError::Empty));
        assert_eq!(Transaction::from_bytes(b"Zxx"), Err(TxError::UnknownKind(b'Z')));
        let k = citizen(3);
        let mut b = Transaction::signed_by(Message::ModifySubscription { topic: 1 }, &k).to_bytes();
        b.pop();
        assert!(matches!(Transaction::from_bytes(&b), Err(TxError::BadLength { .. })));
        assert!(matches!(Message::from_bytes(&b[..4]), Err(TxError::BadLength { kind: TxKind::ModifySubscription, .. })));
    }

    #[test]
    fn certificate_registration_round_trip() {
        let tx = Transaction::certified([5; 32], 2, vec![0xab; 256]);
        let b = tx.to_bytes();
        assert_eq!(b.len(), 37 + 256);
        assert_eq!(Transaction::from_bytes(&b).unwrap(), tx);
    }

    #[test]
    fn text_padding() {
        let v = VoteValue::new(3, "hello");
        assert_eq!(text_of(&v.text[..]), "hello");
        let long = "x".repeat(300);
        assert_eq!(text_of(&VoteValue::new(0, &long).text[..]).len(), 256);
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<[u8; 32]>(), any::<u32>()).prop_map(|(pk, topic)| Message::RegisterVoter { pk, topic }),
            (any::<[u8; 8]>(), any::<u32>(), any::<u32>(), any::<u32>(), proptest::collection::vec(any::<u8>(), 256))
                .prop_map(|(pid, topic, n_req, b_vw, c)| Message::CreatePoll {
                    pid,
                    topic,
                    n_req,
                    b_vw,
                    content: Box::new(c.try_into().unwrap())
                }),
            (any::<[u8; 8]>(), proptest::collection::vec(any::<u8>(), VOTE_LEN))
                .prop_map(|(pid, v)| Message::CreateVote { pid, vote: VoteValue::from_bytes(&v).unwrap() }),
            any::<u32>().prop_map(|topic| Message::ModifySubscription { topic }),
        ]
    }

    proptest! {
        #[test]
        fn message_round_trip(m in arb_message()) {
            let b = m.to_bytes();
            prop_assert_eq!(b.len(), m.kind().message_len());
            prop_assert_eq!(Message::from_bytes(&b).unwrap(), m);
        }

        #[test]
        fn citizen_tx_list_round_trip(ms in proptest::collection::vec(arb_message(), 0..6), seed in any::<u8>()) {
            let k = citizen(seed);
            let txs: Vec<_> = ms
                .into_iter()
                .filter(|m| m.kind() != TxKind::CreateVote)
                .map(|m| Transaction::signed_by(m, &k))
                .collect();
            for tx in &txs {
                prop_assert_eq!(tx.to_bytes().len(), tx.encoded_len());
            }
            prop_assert_eq!(decode_tx_list(&encode_tx_list(&txs)).unwrap(), txs);
        }
    }
}
