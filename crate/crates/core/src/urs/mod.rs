// SPDX-License-Identifier: Apache-2.0
//! Unique ring signatures.
//!
//! A signature proves that the signer owns one key of a ring without saying
//! which, and carries two deterministic tags:
//!
//! * `nu = H(PID‖R)^sk`, identical for every signature by one key on one poll
//!   and ring, which is what double-vote detection keys on;
//! * `tau = H(M‖R)^sk`, binding the vote value, linked to `nu` by a
//!   discrete-log equality proof.
//!
//! Membership is a one-out-of-many proof over Pedersen-style commitments
//! `Com(m; r) = g^m h^r` with public keys `pk = h^sk`. An extra commitment
//! column `e_d_k = B^{rho_k}` (with `B = H(PID‖R)`) ties `nu` to the same
//! secret the membership proof opens, so a signature is exactly
//! `5n + 4` group elements and `3n + 2` scalars for `n = ceil(log2 N)`.

mod batch;
mod dlogeq;
mod proof;

pub use batch::{batch_verify, batch_verify_mixed, BatchItem};
pub use dlogeq::DlogEqProof;
pub use proof::{sign, tag_of, verify, verify_encoded, MembershipProof, UrsSignature};

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{
    hash_to_group, ring_hash, scalar_exp, GroupElement, GroupError, GroupScalar, HashDomain,
};

/// Which verification equation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProofFailure {
    /// `c_l^X c_a = g^f h^{z_a}` failed for this bit.
    BitCommitment(usize),
    /// `c_l^{X-f} c_b = h^{z_b}` failed for this bit.
    BitProduct(usize),
    /// The ring-polynomial equation failed.
    Membership,
    /// `nu` is not bound to the proven key.
    TagConsistency,
    /// The `tau`/`nu` discrete-log equality proof failed.
    DlogEq,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UrsError {
    #[error("ring must have at least 2 members, got {0}")]
    RingTooSmall(usize),
    #[error("ring contains a duplicate member")]
    DuplicateMember,
    #[error("ring encoding is not in canonical sorted order")]
    NonCanonicalRing,
    #[error("signer public key is not a ring member")]
    SignerNotInRing,
    #[error("malformed encoding: {0}")]
    Malformed(#[from] GroupError),
    #[error("signature length {0} is not 32*(8n+6) for any n >= 1")]
    BadSignatureLength(usize),
    #[error("signature arity {got} does not match ring arity {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("proof rejected: {0:?}")]
    InvalidProof(ProofFailure),
    #[error("batch mixes polls or rings")]
    MixedBatch,
    #[error("parameter encoding does not match its seed")]
    ParamsMismatch,
}

impl UrsError {
    /// True for encoding problems, false for well-formed proofs that fail.
    pub fn is_malformed(&self) -> bool {
        matches!(
            self,
            UrsError::Malformed(_) | UrsError::BadSignatureLength(_) | UrsError::NonCanonicalRing
        )
    }
}

/// Public parameters: two generators with no known relation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UrsParams {
    g: GroupElement,
    h: GroupElement,
    g_bytes: [u8; 32],
    h_bytes: [u8; 32],
    seed: Vec<u8>,
}

const GEN_PREFIX: u8 = 0x02;
const POLL_BASE_PREFIX: u8 = 0x00;
const VOTE_BASE_PREFIX: u8 = 0x01;

impl UrsParams {
    /// Deterministic in `seed`.
    pub fn setup(seed: &[u8]) -> Self {
        let derive = |name: &[u8]| {
            let mut data = vec![GEN_PREFIX];
            data.extend_from_slice(name);
            data.extend_from_slice(seed);
            hash_to_group(HashDomain::URS_TAG, &data)
        };
        let g = derive(b"g");
        let h = derive(b"h");
        UrsParams {
            g_bytes: g.to_bytes(),
            h_bytes: h.to_bytes(),
            g,
            h,
            seed: seed.to_vec(),
        }
    }

    pub fn g(&self) -> &GroupElement {
        &self.g
    }

    /// Base of public keys.
    pub fn h(&self) -> &GroupElement {
        &self.h
    }

    pub fn seed(&self) -> &[u8] {
        &self.seed
    }

    /// `g ‖ h ‖ seed`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.seed.len());
        out.extend_from_slice(&self.g_bytes);
        out.extend_from_slice(&self.h_bytes);
        out.extend_from_slice(&self.seed);
        out
    }

    /// Rejects encodings whose generators were not derived from the seed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, UrsError> {
        if bytes.len() < 64 {
            return Err(GroupError::BadLength { expected: 64, got: bytes.len() }.into());
        }
        GroupElement::from_slice(&bytes[..32])?;
        GroupElement::from_slice(&bytes[32..64])?;
        let params = Self::setup(&bytes[64..]);
        if params.g_bytes[..] != bytes[..32] || params.h_bytes[..] != bytes[32..64] {
            return Err(UrsError::ParamsMismatch);
        }
        Ok(params)
    }

    pub(crate) fn g_bytes(&self) -> &[u8; 32] {
        &self.g_bytes
    }

    pub(crate) fn h_bytes(&self) -> &[u8; 32] {
        &self.h_bytes
    }
}

impl Default for UrsParams {
    fn default() -> Self {
        UrsParams::setup(b"pollring/v1")
    }
}

#[derive(Clone, Debug)]
pub struct UrsKeyPair {
    pub sk: GroupScalar,
    pub pk: GroupElement,
}

impl UrsKeyPair {
    pub fn from_secret(params: &UrsParams, sk: GroupScalar) -> Self {
        UrsKeyPair { pk: scalar_exp(params.h(), &sk), sk }
    }
}

pub fn keygen<R: RngCore + CryptoRng>(params: &UrsParams, rng: &mut R) -> UrsKeyPair {
    loop {
        let sk = GroupScalar::random(rng);
        if !sk.is_zero() {
            return UrsKeyPair::from_secret(params, sk);
        }
    }
}

/// A canonically ordered set of at least two public keys.
#[derive(Clone, Debug)]
pub struct Ring {
    members: Vec<GroupElement>,
    keys: Vec<[u8; 32]>,
    hash: [u8; 32],
    arity: usize,
}

impl PartialEq for Ring {
    fn eq(&self, other: &Self) -> bool {
        self.keys == other.keys
    }
}
impl Eq for Ring {}

/// `ceil(log2 n)` for `n >= 1`.
pub fn arity_for(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Serialized signature length for a ring of `n` members.
pub fn signature_len(ring_size: usize) -> usize {
    32 * (8 * arity_for(ring_size) + 6)
}

impl Ring {
    /// Sorts members by their encoding.
    pub fn new<I: IntoIterator<Item = GroupElement>>(members: I) -> Result<Self, UrsError> {
        let mut pairs: Vec<([u8; 32], GroupElement)> =
            members.into_iter().map(|m| (m.to_bytes(), m)).collect();
        pairs.sort_by_key(|a| a.0);
        Self::from_sorted_pairs(pairs)
    }

    /// Decodes keys (any order) into a ring.
    pub fn from_keys(keys: &[[u8; 32]]) -> Result<Self, UrsError> {
        let mut pairs = keys
            .iter()
            .map(|k| Ok((*k, GroupElement::from_bytes(k)?)))
            .collect::<Result<Vec<_>, UrsError>>()?;
        pairs.sort_by_key(|a| a.0);
        Self::from_sorted_pairs(pairs)
    }

    /// Parses the canonical encoding; rejects unsorted input.
    pub fn from_encoding(bytes: &[u8]) -> Result<Self, UrsError> {
        if bytes.len() % 32 != 0 {
            return Err(GroupError::BadLength { expected: 32 * (bytes.len() / 32 + 1), got: bytes.len() }.into());
        }
        let keys: Vec<[u8; 32]> = bytes.chunks_exact(32).map(|c| c.try_into().unwrap()).collect();
        if keys.windows(2).any(|w| w[0] > w[1]) {
            return Err(UrsError::NonCanonicalRing);
        }
        Self::from_keys(&keys)
    }

    fn from_sorted_pairs(pairs: Vec<([u8; 32], GroupElement)>) -> Result<Self, UrsError> {
        if pairs.len() < 2 {
            return Err(UrsError::RingTooSmall(pairs.len()));
        }
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(UrsError::DuplicateMember);
        }
        let keys: Vec<[u8; 32]> = pairs.iter().map(|p| p.0).collect();
        let hash = ring_hash(&keys.concat());
        Ok(Ring {
            arity: arity_for(keys.len()),
            members: pairs.into_iter().map(|p| p.1).collect(),
            keys,
            hash,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Proof arity `n = ceil(log2 N)`.
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// `2^n`; indices past `len()` stand for the last member.
    pub fn padded_len(&self) -> usize {
        1 << self.arity
    }

    pub fn members(&self) -> &[GroupElement] {
        &self.members
    }

    pub fn keys(&self) -> &[[u8; 32]] {
        &self.keys
    }

    pub fn encoding(&self) -> Vec<u8> {
        self.keys.concat()
    }

    /// Hash of the unpadded canonical encoding.
    pub fn hash(&self) -> [u8; 32] {
        self.hash
    }

    pub fn index_of_key(&self, key: &[u8; 32]) -> Option<usize> {
        self.keys.binary_search(key).ok()
    }

    pub fn index_of(&self, pk: &GroupElement) -> Option<usize> {
        self.index_of_key(&pk.to_bytes())
    }
}

fn push_len_prefixed(buf: &mut Vec<u8>, data: &[u8]) {
    buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
    buf.extend_from_slice(data);
}

/// `B = H(PID‖R)`, the base of the uniqueness tag.
pub fn poll_base(poll_id: &[u8], ring_hash: &[u8; 32]) -> GroupElement {
    let mut data = vec![POLL_BASE_PREFIX];
    push_len_prefixed(&mut data, poll_id);
    data.extend_from_slice(ring_hash);
    hash_to_group(HashDomain::URS_TAG, &data)
}

/// `C = H(M‖R)` (scoped to the poll), the base of the vote tag.
pub fn vote_base(poll_id: &[u8], vote: &[u8], ring_hash: &[u8; 32]) -> GroupElement {
    let mut data = vec![VOTE_BASE_PREFIX];
    push_len_prefixed(&mut data, poll_id);
    push_len_prefixed(&mut data, vote);
    data.extend_from_slice(ring_hash);
    hash_to_group(HashDomain::URS_TAG, &data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    #[test]
    fn setup_deterministic_and_round_trips() {
        let a = UrsParams::setup(b"seed");
        assert_eq!(a, UrsParams::setup(b"seed"));
        assert_ne!(a.g(), a.h());
        assert_eq!(UrsParams::from_bytes(&a.to_bytes()).unwrap(), a);
        let mut bad = a.to_bytes();
        bad.push(b'x');
        assert_eq!(UrsParams::from_bytes(&bad), Err(UrsError::ParamsMismatch));
    }

    #[test]
    fn keygen_consistent_and_distinct() {
        let p = UrsParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut seen = HashSet::new();
        for _ in 0..1000 {
            let kp = keygen(&p, &mut rng);
            assert_eq!(scalar_exp(p.h(), &kp.sk), kp.pk);
            assert!(seen.insert(kp.pk.to_bytes()));
        }
    }

    #[test]
    fn arity_and_length() {
        assert_eq!(arity_for(2), 1);
        assert_eq!(arity_for(3), 2);
        assert_eq!(arity_for(128), 7);
        assert_eq!(arity_for(129), 8);
        assert_eq!(signature_len(100), 1984);
        assert_eq!(signature_len(128), 1984);
        assert_eq!(signature_len(16384), 3776);
    }

    #[test]
    fn ring_is_canonical() {
        let p = UrsParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys: Vec<_> = (0..5).map(|_| keygen(&p, &mut rng).pk).collect();
        let mut rev = keys.clone();
        rev.reverse();
        let a = Ring::new(keys.clone()).unwrap();
        let b = Ring::new(rev).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert!(a.keys().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(Ring::from_encoding(&a.encoding()).unwrap(), a);
        assert_eq!(a.padded_len(), 8);

        let mut unsorted = a.keys().to_vec();
        unsorted.swap(0, 1);
        assert_eq!(Ring::from_encoding(&unsorted.concat()), Err(UrsError::NonCanonicalRing));
        assert_eq!(Ring::new(vec![keys[0], keys[0]]), Err(UrsError::DuplicateMember));
        assert_eq!(Ring::new(vec![keys[0]]), Err(UrsError::RingTooSmall(1)));
    }
}
