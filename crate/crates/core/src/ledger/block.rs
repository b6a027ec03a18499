// SPDX-License-Identifier: Apache-2.0
//! Committed blocks.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use super::tx::{encode_tx_list, Topic, Transaction};
use crate::group::{hash32, HashDomain};

/// Payload budget per block, in bytes.
pub const MAX_BLOCK_BYTES: usize = 9_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityKind {
    Registration,
    Subscription,
}

/// One line of the identity sub-block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub kind: IdentityKind,
    pub user_id: u64,
    pub pk: [u8; 32],
    pub topic: Topic,
}

impl IdentityRecord {
    fn to_bytes(self) -> Vec<u8> {
        let mut out = vec![match self.kind {
            IdentityKind::Registration => b'R',
            IdentityKind::Subscription => b'C',
        }];
        out.extend_from_slice(&self.user_id.to_le_bytes());
        out.extend_from_slice(&self.pk);
        out.extend_from_slice(&self.topic.to_le_bytes());
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitteeSig {
    pub signer: [u8; 32],
    pub sig: [u8; 64],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub number: u64,
    pub prev_hash: [u8; 32],
    pub txs: Vec<Transaction>,
    pub identity: Vec<IdentityRecord>,
    pub state_root: Vec<u8>,
    pub committee: Vec<CommitteeSig>,
}

impl Block {
    pub fn payload(&self) -> Vec<u8> {
        encode_tx_list(&self.txs)
    }

    pub fn header_hash(&self) -> [u8; 32] {
        let ids: Vec<u8> = self.identity.iter().flat_map(|r| r.to_bytes()).collect();
        hash32(
            HashDomain::MERKLE_NODE,
            &[
                b"block",
                &self.number.to_le_bytes(),
                &self.prev_hash,
                &hash32(HashDomain::MERKLE_LEAF, &[&self.payload()]),
                &hash32(HashDomain::MERKLE_LEAF, &[&ids]),
                &self.state_root,
            ],
        )
    }

    pub(crate) fn sign_with(&mut self, committee: &[SigningKey]) {
        let h = self.header_hash();
        self.committee = committee
            .iter()
            .map(|k| CommitteeSig { signer: k.verifying_key().to_bytes(), sig: k.sign(&h).to_bytes() })
            .collect();
    }

    /// Every listed key has a valid signature on the header.
    pub fn verify_committee(&self, keys: &[VerifyingKey]) -> bool {
        let h = self.header_hash();
        keys.len() == self.committee.len()
            && keys.iter().zip(&self.committee).all(|(k, cs)| {
                k.to_bytes() == cs.signer && k.verify(&h, &Signature::from_bytes(&cs.sig)).is_ok()
            })
    }
}
