// SPDX-License-Identifier: Apache-2.0
//! Authenticated key-value store: a binary Merkle tree over the entries in
//! key order. A node without a sibling on its level is promoted unchanged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::group::{hash32, HashDomain};

pub const DEFAULT_DIGEST_LEN: usize = 32;

/// Hex (de)serialisation for byte fields in JSON snapshots and proofs.
pub(crate) mod hexser {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }

    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[Vec<u8>], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for item in v {
                seq.serialize_element(&hex::encode(item))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<u8>>, D::Error> {
            Vec::<String>::deserialize(d)?
                .into_iter()
                .map(|s| hex::decode(s).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

fn truncate(full: [u8; 32], len: usize) -> Vec<u8> {
    full[..len].to_vec()
}

pub fn leaf_digest(key: &[u8], value: &[u8], len: usize) -> Vec<u8> {
    truncate(
        hash32(HashDomain::MERKLE_LEAF, &[&(key.len() as u32).to_le_bytes(), key, value]),
        len,
    )
}

pub fn node_digest(left: &[u8], right: &[u8], len: usize) -> Vec<u8> {
    truncate(hash32(HashDomain::MERKLE_NODE, &[left, right]), len)
}

/// Sibling path for leaf `index` of `leaf_count`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionPath {
    pub index: u64,
    #[serde(with = "hexser::vec")]
    pub siblings: Vec<Vec<u8>>,
}

/// A leaf revealed in an absence proof.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbour {
    #[serde(with = "hexser")]
    pub key: Vec<u8>,
    #[serde(with = "hexser")]
    pub value: Vec<u8>,
    pub path: InclusionPath,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MerkleProof {
    Present { leaf_count: u64, path: InclusionPath },
    /// The key would sit between `left` and `right`, which are adjacent
    /// leaves (either may be missing at the ends of the key range).
    Absent { leaf_count: u64, left: Option<Neighbour>, right: Option<Neighbour> },
}

impl MerkleProof {
    /// Bytes of digests carried by the proof.
    pub fn digest_bytes(&self) -> usize {
        match self {
            MerkleProof::Present { path, .. } => path.siblings.iter().map(Vec::len).sum(),
            MerkleProof::Absent { left, right, .. } => [left, right]
                .iter()
                .filter_map(|n| n.as_ref())
                .map(|n| n.path.siblings.iter().map(Vec::len).sum::<usize>())
                .sum(),
        }
    }
}

/// Sibling count of a path in a tree with `leaf_count` leaves, at most.
pub fn max_depth(leaf_count: u64) -> u32 {
    if leaf_count <= 1 {
        0
    } else {
        64 - (leaf_count - 1).leading_zeros()
    }
}

/// Proof size for a full path of a tree with `leaf_count` leaves.
pub fn proof_size(leaf_count: u64, digest_len: usize) -> usize {
    max_depth(leaf_count) as usize * digest_len
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthStore {
    entries: BTreeMap<Vec<u8>, Vec<u8>>,
    digest_len: usize,
    levels: Vec<Vec<Vec<u8>>>,
    dirty: bool,
}

impl Default for AuthStore {
    fn default() -> Self {
        AuthStore::new(DEFAULT_DIGEST_LEN)
    }
}

impl AuthStore {
    /// `digest_len` in 1..=32.
    pub fn new(digest_len: usize) -> Self {
        assert!((1..=32).contains(&digest_len), "digest length must be 1..=32");
        AuthStore { entries: BTreeMap::new(), digest_len, levels: Vec::new(), dirty: true }
    }

    pub fn digest_len(&self) -> usize {
        self.digest_len
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn insert(&mut self, key: Vec<u8>, value: Vec<u8>) {
        self.entries.insert(key, value);
        self.dirty = true;
    }

    pub fn remove(&mut self, key: &[u8]) -> Option<Vec<u8>> {
        self.dirty = true;
        self.entries.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &[u8])> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn range_prefix<'a>(&'a self, prefix: &'a [u8]) -> impl Iterator<Item = (&'a [u8], &'a [u8])> + 'a {
        self.entries
            .range(prefix.to_vec()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    fn rebuild(&mut self) {
        if !self.dirty {
            return;
        }
        let d = self.digest_len;
        let mut level: Vec<Vec<u8>> = self.entries.iter().map(|(k, v)| leaf_digest(k, v, d)).collect();
        let mut levels = Vec::new();
        while level.len() > 1 {
            let next = level
                .chunks(2)
                .map(|p| if p.len() == 2 { node_digest(&p[0], &p[1], d) } else { p[0].clone() })
                .collect();
            levels.push(std::mem::replace(&mut level, next));
        }
        levels.push(level);
        self.levels = levels;
        self.dirty = false;
    }

    /// Root digest; all zeroes for an empty store.
    pub fn root(&mut self) -> Vec<u8> {
        self.rebuild();
        self.levels.last().and_then(|l| l.first().cloned()).unwrap_or_else(|| vec![0; self.digest_len])
    }

    fn path(&self, mut index: usize) -> InclusionPath {
        let start = index as u64;
        let mut siblings = Vec::new();
        for level in &self.levels[..self.levels.len() - 1] {
            let sib = index ^ 1;
            if sib < level.len() {
                siblings.push(level[sib].clone());
            }
            index /= 2;
        }
        InclusionPath { index: start, siblings }
    }

    /// Value under `key` (if any) with a proof against [`Self::root`].
    pub fn read(&mut self, key: &[u8]) -> (Option<Vec<u8>>, MerkleProof) {
        self.rebuild();
        let leaf_count = self.entries.len() as u64;
        let pos = self.entries.range(..key.to_vec()).count();
        if let Some(value) = self.entries.get(key) {
            return (Some(value.clone()), MerkleProof::Present { leaf_count, path: self.path(pos) });
        }
        let neighbour = |i: usize| {
            self.entries.iter().nth(i).map(|(k, v)| Neighbour { key: k.clone(), value: v.clone(), path: self.path(i) })
        };
        let left = if pos > 0 { neighbour(pos - 1) } else { None };
        let right = neighbour(pos);
        (None, MerkleProof::Absent { leaf_count, left, right })
    }
}

/// Fold a leaf digest up its path. `None` if the path has the wrong shape.
fn climb(leaf: Vec<u8>, path: &InclusionPath, leaf_count: u64, d: usize) -> Option<Vec<u8>> {
    if path.index >= leaf_count {
        return None;
    }
    let (mut idx, mut width, mut acc) = (path.index, leaf_count, leaf);
    let mut sibs = path.siblings.iter();
    while width > 1 {
        let sib = idx ^ 1;
        if sib < width {
            let s = sibs.next()?;
            if s.len() != d {
                return None;
            }
            acc = if idx % 2 == 0 { node_digest(&acc, s, d) } else { node_digest(s, &acc, d) };
        }
        idx /= 2;
        width = width.div_ceil(2);
    }
    if sibs.next().is_some() {
        return None;
    }
    Some(acc)
}

/// Check `value` (or absence, for `None`) of `key` against `root`.
pub fn verify(root: &[u8], key: &[u8], value: Option<&[u8]>, proof: &MerkleProof) -> bool {
    let d = root.len();
    if d == 0 || d > 32 {
        return false;
    }
    match (value, proof) {
        (Some(v), MerkleProof::Present { leaf_count, path }) => {
            climb(leaf_digest(key, v, d), path, *leaf_count, d).as_deref() == Some(root)
        }
        (None, MerkleProof::Absent { leaf_count, left, right }) => {
            let n = *leaf_count;
            if n == 0 {
                return left.is_none() && right.is_none() && root.iter().all(|&b| b == 0);
            }
            let check = |nb: &Neighbour| {
                climb(leaf_digest(&nb.key, &nb.value, d), &nb.path, n, d).as_deref() == Some(root)
            };
            match (left, right) {
                (Some(l), Some(r)) => {
                    check(l) && check(r) && l.path.index + 1 == r.path.index && l.key.as_slice() < key && key < r.key.as_slice()
                }
                (None, Some(r)) => check(r) && r.path.index == 0 && key < r.key.as_slice(),
                (Some(l), None) => check(l) && l.path.index + 1 == n && l.key.as_slice() < key,
                (None, None) => false,
            }
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(n: usize, d: usize) -> AuthStore {
        let mut s = AuthStore::new(d);
        for i in 0..n {
            s.insert(format!("k{:05}", i * 2).into_bytes(), vec![i as u8; 3]);
        }
        s
    }

    /// Independent level-by-level fold.
    fn naive_root(entries: &[(Vec<u8>, Vec<u8>)], d: usize) -> Vec<u8> {
        if entries.is_empty() {
            return vec![0; d];
        }
        let mut level: Vec<Vec<u8>> = entries.iter().map(|(k, v)| leaf_digest(k, v, d)).collect();
        while level.len() > 1 {
            let mut next = Vec::new();
            let mut i = 0;
            while i < level.len() {
                if i + 1 < level.len() {
                    next.push(node_digest(&level[i], &level[i + 1], d));
                } else {
                    next.push(level[i].clone());
                }
                i += 2;
            }
            level = next;
        }
        level.remove(0)
    }

    #[test]
    fn root_matches_naive() {
        for n in [0, 1, 2, 3, 5, 8, 13] {
            let mut s = store(n, 32);
            let entries: Vec<_> = s.iter().map(|(k, v)| (k.to_vec(), v.to_vec())).collect();
            assert_eq!(s.root(), naive_root(&entries, 32), "n={n}");
        }
    }

    #[test]
    fn read_then_verify() {
        let mut s = store(11, 32);
        let root = s.root();
        for i in 0..11 {
            let key = format!("k{:05}", i * 2).into_bytes();
            let (v, p) = s.read(&key);
            assert!(verify(&root, &key, v.as_deref(), &p));
            let mut flipped = v.clone().unwrap();
            flipped[0] ^= 1;
            assert!(!verify(&root, &key, Some(&flipped), &p));
        }
    }

    #[test]
    fn absence_proofs() {
        let mut s = store(6, 10);
        let root = s.root();
        for key in [&b"a"[..], b"k00001", b"k00005", b"k00009", b"z"] {
            let (v, p) = s.read(key);
            assert!(v.is_none());
            assert!(verify(&root, key, None, &p), "{:?}", String::from_utf8_lossy(key));
            // An absence proof does not prove presence.
            assert!(!verify(&root, key, Some(b"x"), &p));
        }
        // Present key cannot be shown absent with a neighbour proof.
        let (_, p) = s.read(b"k00003");
        assert!(!verify(&root, b"k00002", None, &p));
        let mut empty = AuthStore::new(10);
        let r = empty.root();
        let (_, p) = empty.read(b"k");
        assert!(verify(&r, b"k", None, &p));
    }

    #[test]
    fn tampered_proof_rejects() {
        let mut s = store(9, 32);
        let root = s.root();
        let (v, mut p) = s.read(b"k00004");
        if let MerkleProof::Present { path, .. } = &mut p {
            path.siblings[0][0] ^= 1;
        }
        assert!(!verify(&root, b"k00004", v.as_deref(), &p));
    }

    #[test]
    fn proof_size_arithmetic() {
        assert_eq!(proof_size(1 << 30, 10), 300);
        assert_eq!(proof_size(1 << 30, 32), 960);
        let mut s = AuthStore::new(10);
        for i in 0u32..1024 {
            s.insert(i.to_be_bytes().to_vec(), vec![1]);
        }
        s.root();
        let (_, p) = s.read(&7u32.to_be_bytes());
        assert_eq!(p.digest_bytes(), proof_size(1024, 10));
        assert_eq!(p.digest_bytes(), 100);
    }

    proptest! {
        #[test]
        fn every_key_proves(keys in proptest::collection::btree_set(proptest::collection::vec(any::<u8>(), 1..6), 0..40),
                            probe in proptest::collection::vec(any::<u8>(), 1..6)) {
            let mut s = AuthStore::new(16);
            for k in &keys {
                s.insert(k.clone(), k.iter().rev().copied().collect());
            }
            let root = s.root();
            for k in &keys {
                let (v, p) = s.read(k);
                prop_assert!(verify(&root, k, v.as_deref(), &p));
            }
            let (v, p) = s.read(&probe);
            prop_assert_eq!(v.is_some(), keys.contains(&probe));
            prop_assert!(verify(&root, &probe, v.as_deref(), &p));
        }
    }
}
