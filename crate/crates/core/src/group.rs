// SPDX-License-Identifier: Apache-2.0
//! Prime-order group arithmetic over Ristretto255, domain-separated hashing
//! into the group and its scalar field, and multi-exponentiation.
//!
//! Scalars and elements both encode to exactly 32 bytes.

use core::fmt;
use core::iter::{Product, Sum};
use core::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::{Identity, IsIdentity, MultiscalarMul, VartimeMultiscalarMul};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256, Sha512};
use thiserror::Error;

/// Encoded length of a scalar or a group element.
pub const ENCODED_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("expected {expected} bytes, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("scalar encoding is not reduced modulo the group order")]
    NonCanonicalScalar,
    #[error("bytes do not encode a group element")]
    InvalidElement,
}

/// Domain-separation label. Every protocol use of a hash gets its own label.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashDomain {
    label: &'static [u8],
}

impl HashDomain {
    /// Tag bases H(PID‖R), H(M‖R) and parameter generators.
    pub const URS_TAG: HashDomain = HashDomain::new(b"urs/tag");
    /// Fiat–Shamir challenge of the membership proof.
    pub const URS_FS: HashDomain = HashDomain::new(b"urs/fs");
    /// Fiat–Shamir challenge of the discrete-log equality proof.
    pub const DLOGEQ_FS: HashDomain = HashDomain::new(b"dlogeq/fs");
    /// Sortition scores and the block-seed chain.
    pub const VRF: HashDomain = HashDomain::new(b"vrf");
    /// Merkle leaves and ring hashes.
    pub const MERKLE_LEAF: HashDomain = HashDomain::new(b"merkle/leaf");
    /// Merkle interior nodes.
    pub const MERKLE_NODE: HashDomain = HashDomain::new(b"merkle/node");
    /// Transaction-group to politician-shard mapping.
    pub const TXGROUP: HashDomain = HashDomain::new(b"txgroup");

    /// Every label in the fixed registry.
    pub const REGISTRY: [HashDomain; 7] = [
        Self::URS_TAG,
        Self::URS_FS,
        Self::DLOGEQ_FS,
        Self::VRF,
        Self::MERKLE_LEAF,
        Self::MERKLE_NODE,
        Self::TXGROUP,
    ];

    /// Labels longer than 255 bytes are rejected at compile time when used in a const.
    pub const fn new(label: &'static [u8]) -> Self {
        assert!(label.len() <= u8::MAX as usize, "domain label too long");
        HashDomain { label }
    }

    pub fn label(&self) -> &'static [u8] {
        self.label
    }

    fn absorb<D: Digest>(&self, hasher: &mut D) {
        hasher.update([self.label.len() as u8]);
        hasher.update(self.label);
    }
}

impl fmt::Debug for HashDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashDomain({:?})", String::from_utf8_lossy(self.label))
    }
}

/// An integer modulo the Ristretto group order q.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupScalar(pub(crate) Scalar);

impl GroupScalar {
    pub const ZERO: GroupScalar = GroupScalar(Scalar::ZERO);
    pub const ONE: GroupScalar = GroupScalar(Scalar::ONE);

    pub fn from_u64(v: u64) -> Self {
        GroupScalar(Scalar::from(v))
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        GroupScalar(Scalar::random(rng))
    }

    /// Reduce 64 uniform bytes modulo q.
    pub fn from_bytes_wide(bytes: &[u8; 64]) -> Self {
        GroupScalar(Scalar::from_bytes_mod_order_wide(bytes))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    /// Rejects encodings that are not fully reduced.
    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, GroupError> {
        Option::from(Scalar::from_canonical_bytes(*bytes))
            .map(GroupScalar)
            .ok_or(GroupError::NonCanonicalScalar)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr: &[u8; 32] = bytes.try_into().map_err(|_| GroupError::BadLength {
            expected: ENCODED_LEN,
            got: bytes.len(),
        })?;
        Self::from_bytes(arr)
    }

    /// Multiplicative inverse; zero maps to zero.
    pub fn invert(&self) -> Self {
        GroupScalar(self.0.invert())
    }

    pub fn pow(&self, mut exp: u64) -> Self {
        let mut base = self.0;
        let mut acc = Scalar::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc *= base;
            }
            base *= base;
            exp >>= 1;
        }
        GroupScalar(acc)
    }

    /// `[1, x, x^2, ..., x^(n-1)]`.
    pub fn powers(&self, n: usize) -> Vec<GroupScalar> {
        let mut out = Vec::with_capacity(n);
        let mut acc = Scalar::ONE;
        for _ in 0..n {
            out.push(GroupScalar(acc));
            acc *= self.0;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.0 == Scalar::ZERO
    }
}

impl fmt::Debug for GroupScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupScalar({})", hex::encode(self.to_bytes()))
    }
}

macro_rules! scalar_binop {
    ($tr:ident, $m:ident, $tra:ident, $ma:ident, $op:tt) => {
        impl $tr for GroupScalar {
            type Output = GroupScalar;
            fn $m(self, rhs: GroupScalar) -> GroupScalar {
                GroupScalar(self.0 $op rhs.0)
            }
        }
        impl<'a> $tr<&'a GroupScalar> for &'a GroupScalar {
            type Output = GroupScalar;
            fn $m(self, rhs: &'a GroupScalar) -> GroupScalar {
                GroupScalar(self.0 $op rhs.0)
            }
        }
        impl $tra for GroupScalar {
            fn $ma(&mut self, rhs: GroupScalar) {
                self.0 = self.0 $op rhs.0;
            }
        }
    };
}

scalar_binop!(Add, add, AddAssign, add_assign, +);
scalar_binop!(Sub, sub, SubAssign, sub_assign, -);
scalar_binop!(Mul, mul, MulAssign, mul_assign, *);

impl Neg for GroupScalar {
    type Output = GroupScalar;
    fn neg(self) -> GroupScalar {
        GroupScalar(-self.0)
    }
}

impl Sum for GroupScalar {
    fn sum<I: Iterator<Item = GroupScalar>>(iter: I) -> Self {
        iter.fold(GroupScalar::ZERO, |a, b| a + b)
    }
}

impl Product for GroupScalar {
    fn product<I: Iterator<Item = GroupScalar>>(iter: I) -> Self {
        iter.fold(GroupScalar::ONE, |a, b| a * b)
    }
}

/// An element of the prime-order Ristretto255 group.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GroupElement(pub(crate) RistrettoPoint);

impl GroupElement {
    pub fn identity() -> Self {
        GroupElement(RistrettoPoint::identity())
    }

    /// The standard Ristretto basepoint. Protocol generators come from
    /// [`hash_to_group`] instead.
    pub fn basepoint() -> Self {
        GroupElement(RISTRETTO_BASEPOINT_POINT)
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_identity()
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.compress().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8; 32]) -> Result<Self, GroupError> {
        CompressedRistretto(*bytes)
            .decompress()
            .map(GroupElement)
            .ok_or(GroupError::InvalidElement)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr: &[u8; 32] = bytes.try_into().map_err(|_| GroupError::BadLength {
            expected: ENCODED_LEN,
            got: bytes.len(),
        })?;
        Self::from_bytes(arr)
    }

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        GroupElement(RistrettoPoint::random(rng))
    }
}

impl fmt::Debug for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupElement({})", hex::encode(self.to_bytes()))
    }
}

impl Add for GroupElement {
    type Output = GroupElement;
    fn add(self, rhs: GroupElement) -> GroupElement {
        GroupElement(self.0 + rhs.0)
    }
}

impl Sub for GroupElement {
    type Output = GroupElement;
    fn sub(self, rhs: GroupElement) -> GroupElement {
        GroupElement(self.0 - rhs.0)
    }
}

impl Neg for GroupElement {
    type Output = GroupElement;
    fn neg(self) -> GroupElement {
        GroupElement(-self.0)
    }
}

impl Mul<GroupScalar> for GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: GroupScalar) -> GroupElement {
        GroupElement(self.0 * rhs.0)
    }
}

impl Sum for GroupElement {
    fn sum<I: Iterator<Item = GroupElement>>(iter: I) -> Self {
        iter.fold(GroupElement::identity(), |a, b| a + b)
    }
}

/// Hash arbitrary bytes to a group element with no known discrete log
/// relative to any other output.
pub fn hash_to_group(domain: HashDomain, data: &[u8]) -> GroupElement {
    let mut h = Sha512::new();
    domain.absorb(&mut h);
    h.update(data);
    let wide: [u8; 64] = h.finalize().into();
    GroupElement(RistrettoPoint::from_uniform_bytes(&wide))
}

/// Hash arbitrary bytes to a scalar by wide reduction of SHA-512.
pub fn hash_to_scalar(domain: HashDomain, data: &[u8]) -> GroupScalar {
    let mut h = Sha512::new();
    domain.absorb(&mut h);
    h.update(data);
    let wide: [u8; 64] = h.finalize().into();
    GroupScalar::from_bytes_wide(&wide)
}

/// SHA-256 over the domain label and the concatenation of `parts`.
///
/// Parts are not length-prefixed; callers hash only fixed-width fields or
/// prefix variable ones themselves.
pub fn hash32(domain: HashDomain, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    domain.absorb(&mut h);
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// Hash of a canonical ring encoding (sorted, concatenated 32-byte keys).
pub fn ring_hash(encoding: &[u8]) -> [u8; 32] {
    hash32(HashDomain::MERKLE_LEAF, &[encoding])
}

pub fn scalar_exp(base: &GroupElement, e: &GroupScalar) -> GroupElement {
    GroupElement(base.0 * e.0)
}

/// Constant-time product of `base_i^{e_i}`.
pub fn multi_exp(pairs: &[(GroupElement, GroupScalar)]) -> GroupElement {
    GroupElement(RistrettoPoint::multiscalar_mul(
        pairs.iter().map(|(_, s)| s.0),
        pairs.iter().map(|(p, _)| p.0),
    ))
}

/// Variable-time product of `base_i^{e_i}`, for public inputs only.
pub fn multi_exp_vartime(pairs: &[(GroupElement, GroupScalar)]) -> GroupElement {
    GroupElement(RistrettoPoint::vartime_multiscalar_mul(
        pairs.iter().map(|(_, s)| s.0),
        pairs.iter().map(|(p, _)| p.0),
    ))
}

/// Incremental Fiat–Shamir transcript over SHA-512.
pub(crate) struct Transcript {
    hasher: Sha512,
}

impl Transcript {
    pub(crate) fn new(domain: HashDomain) -> Self {
        let mut hasher = Sha512::new();
        domain.absorb(&mut hasher);
        Transcript { hasher }
    }

    /// Absorb a variable-length field with a u64 length prefix.
    pub(crate) fn append_bytes(&mut self, data: &[u8]) {
        self.hasher.update((data.len() as u64).to_le_bytes());
        self.hasher.update(data);
    }

    pub(crate) fn append_fixed(&mut self, data: &[u8]) {
        self.hasher.update(data);
    }

    pub(crate) fn challenge(self) -> GroupScalar {
        let wide: [u8; 64] = self.hasher.finalize().into();
        GroupScalar::from_bytes_wide(&wide)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn hash_to_group_is_deterministic_and_separated() {
        let d = HashDomain::new(b"test/a");
        let d2 = HashDomain::new(b"test/b");
        assert_eq!(hash_to_group(d, b"abc"), hash_to_group(d, b"abc"));
        assert_ne!(hash_to_group(d, b"abc"), hash_to_group(d2, b"abc"));
    }

    #[test]
    fn registry_labels_are_distinct() {
        let labels: HashSet<_> = HashDomain::REGISTRY.iter().map(|d| d.label()).collect();
        assert_eq!(labels.len(), HashDomain::REGISTRY.len());
    }

    #[test]
    fn hash_to_group_no_collisions_on_random_messages() {
        let mut r = rng();
        let mut seen = HashSet::new();
        for _ in 0..10_000 {
            let mut m = [0u8; 24];
            r.fill_bytes(&mut m);
            assert!(seen.insert(hash_to_group(HashDomain::URS_TAG, &m).to_bytes()));
        }
    }

    #[test]
    fn hash_to_scalar_range_and_bias() {
        let mut r = rng();
        // Count set bits over the low 252 bits; q is just above 2^252 so every
        // one of those bits is close to fair.
        let mut ones = 0u64;
        let samples = 10_000u64;
        let bits_per = 252u64;
        for _ in 0..samples {
            let mut m = [0u8; 16];
            r.fill_bytes(&mut m);
            let s = hash_to_scalar(HashDomain::URS_FS, &m);
            assert_eq!(hash_to_scalar(HashDomain::URS_FS, &m), s);
            // canonical means < q
            assert!(GroupScalar::from_bytes(&s.to_bytes()).is_ok());
            let b = s.to_bytes();
            for i in 0..bits_per as usize {
                ones += ((b[i / 8] >> (i % 8)) & 1) as u64;
            }
        }
        let n = (samples * bits_per) as f64;
        let sigma = (n * 0.25).sqrt();
        assert!(((ones as f64) - n / 2.0).abs() < 3.0 * sigma, "bit bias: {ones} of {n}");
    }

    #[test]
    fn scalar_exp_edge_cases() {
        let g = hash_to_group(HashDomain::URS_TAG, b"g");
        assert!(scalar_exp(&g, &GroupScalar::ZERO).is_identity());
        assert_eq!(scalar_exp(&g, &GroupScalar::ONE), g);
    }

    #[test]
    fn non_canonical_scalar_rejected() {
        assert_eq!(GroupScalar::from_bytes(&[0xff; 32]), Err(GroupError::NonCanonicalScalar));
        assert!(matches!(
            GroupScalar::from_slice(&[0u8; 31]),
            Err(GroupError::BadLength { expected: 32, got: 31 })
        ));
    }

    #[test]
    fn invalid_element_rejected() {
        // Not a valid Ristretto encoding (negative field element).
        let mut bad = [0u8; 32];
        bad[0] = 1;
        assert_eq!(GroupElement::from_bytes(&bad), Err(GroupError::InvalidElement));
    }

    #[test]
    fn serialization_round_trips_many() {
        let mut r = rng();
        for _ in 0..10_000 {
            let s = GroupScalar::random(&mut r);
            assert_eq!(GroupScalar::from_bytes(&s.to_bytes()).unwrap(), s);
            let e = GroupElement::random(&mut r);
            let b = e.to_bytes();
            assert_eq!(GroupElement::from_bytes(&b).unwrap().to_bytes(), b);
        }
    }

    #[test]
    fn pow_matches_repeated_multiplication() {
        let mut r = rng();
        let x = GroupScalar::random(&mut r);
        let mut acc = GroupScalar::ONE;
        for k in 0..20u64 {
            assert_eq!(x.pow(k), acc);
            assert_eq!(x.powers(20)[k as usize], acc);
            acc *= x;
        }
    }

    fn arb_scalar() -> impl Strategy<Value = GroupScalar> {
        any::<[u8; 32]>().prop_map(|mut b| {
            b[31] &= 0x0f;
            GroupScalar::from_bytes(&b).unwrap()
        })
    }

    proptest! {
        #[test]
        fn scalar_field_laws(a in arb_scalar(), b in arb_scalar(), c in arb_scalar()) {
            prop_assert_eq!(a + b, b + a);
            prop_assert_eq!(a * b, b * a);
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!((a * b) * c, a * (b * c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
            prop_assert_eq!(a - a, GroupScalar::ZERO);
            if !a.is_zero() {
                prop_assert_eq!(a * a.invert(), GroupScalar::ONE);
            }
        }

        #[test]
        fn multi_exp_matches_naive_product(seed in any::<u64>(), len in 1usize..=64) {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            let pairs: Vec<_> = (0..len)
                .map(|_| (GroupElement::random(&mut r), GroupScalar::random(&mut r)))
                .collect();
            let naive: GroupElement = pairs.iter().map(|(p, s)| scalar_exp(p, s)).sum();
            prop_assert_eq!(multi_exp(&pairs), naive);
            prop_assert_eq!(multi_exp_vartime(&pairs), naive);
        }
    }

    #[test]
    fn multi_exp_two_bases() {
        let mut r = rng();
        let g = hash_to_group(HashDomain::URS_TAG, b"g");
        let h = hash_to_group(HashDomain::URS_TAG, b"h");
        let a = GroupScalar::random(&mut r);
        let b = GroupScalar::random(&mut r);
        assert_eq!(multi_exp(&[(g, a), (h, b)]), scalar_exp(&g, &a) + scalar_exp(&h, &b));
    }
}
