// SPDX-License-Identifier: Apache-2.0
//! RSA blind signatures with a full-domain hash, and the registration
//! ceremony that hands every member an unlinkable certificate on their ring
//! public key.
//!
//! The user blinds `M' = H(M) r^e mod N`, the admin returns `S' = M'^d`, and
//! the user unblinds `S = S' r^-1 mod N`, a plain RSA-FDH signature on `M`.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint_dig::{BigUint, ModInverse, RandBigInt, RandPrime};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SUPPORTED_BITS: [usize; 3] = [2048, 3072, 4096];
pub const PUBLIC_EXPONENT: u32 = 65_537;

/// Role identifiers are topic ids.
pub type RoleId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlindSigError {
    #[error("unsupported modulus size {0}; expected one of 2048, 3072, 4096")]
    UnsupportedSize(usize),
    #[error("user {0} is not authorised for role {1}")]
    Unauthorized(String, RoleId),
    #[error("no signing key for role {0}")]
    UnknownRole(RoleId),
    #[error("blinded message was already signed")]
    RepeatedBlindedMessage,
    #[error("member {0} already holds a certificate")]
    AlreadyIssued(String),
    #[error("value is not in the range [1, N)")]
    OutOfRange,
    #[error("certificate encoding has length {got}, expected {expected}")]
    BadCertificateLength { expected: usize, got: usize },
    #[error("ceremony needs a restart before new members can join")]
    RestartRequired,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaPublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

impl RsaPublicKey {
    pub fn bits(&self) -> usize {
        self.n.bits()
    }

    /// Length of every encoded residue.
    pub fn modulus_bytes(&self) -> usize {
        self.n.bits().div_ceil(8)
    }

    /// Big-endian, left-padded to the modulus length.
    pub fn encode(&self, v: &BigUint) -> Vec<u8> {
        let raw = v.to_bytes_be();
        let mut out = vec![0u8; self.modulus_bytes().saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }

    pub fn decode(&self, bytes: &[u8]) -> Result<BigUint, BlindSigError> {
        let v = BigUint::from_bytes_be(bytes);
        if bytes.len() != self.modulus_bytes() || v.is_zero() || v >= self.n {
            return Err(BlindSigError::OutOfRange);
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RsaSignerKey {
    pub public: RsaPublicKey,
    d: BigUint,
}

impl RsaSignerKey {
    pub fn bits(&self) -> usize {
        self.public.bits()
    }

    pub fn secret_exponent(&self) -> &BigUint {
        &self.d
    }
}

pub fn keygen<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<RsaSignerKey, BlindSigError> {
    if !SUPPORTED_BITS.contains(&bits) {
        return Err(BlindSigError::UnsupportedSize(bits));
    }
    let e = BigUint::from(PUBLIC_EXPONENT);
    loop {
        let p = rng.gen_prime(bits / 2);
        let q = rng.gen_prime(bits / 2);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() != bits {
            continue;
        }
        let lambda = (&p - 1u32).lcm(&(&q - 1u32));
        let Some(d) = (&e).mod_inverse(&lambda).and_then(|d| d.to_biguint()) else {
            continue;
        };
        return Ok(RsaSignerKey { public: RsaPublicKey { n, e }, d });
    }
}

/// Same seed, same key.
pub fn keygen_seeded(bits: usize, seed: u64) -> Result<RsaSignerKey, BlindSigError> {
    keygen(bits, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// Full-domain hash into `[1, N)`: SHA-256 counter-mode expansion to the
/// modulus length with the excess top bits cleared, retried while `>= N`.
pub fn fdh(pk: &RsaPublicKey, msg: &[u8]) -> BigUint {
    let k = pk.modulus_bytes();
    let excess = 8 * k - pk.bits();
    for attempt in 0u32.. {
        let mut out = Vec::with_capacity(k + 32);
        let mut counter = 0u32;
        while out.len() < k {
            let mut h = Sha256::new();
            h.update(b"pollring/fdh");
            h.update(attempt.to_be_bytes());
            h.update(counter.to_be_bytes());
            h.update(msg);
            out.extend_from_slice(&h.finalize());
            counter += 1;
        }
        out.truncate(k);
        out[0] &= 0xff >> excess;
        let v = BigUint::from_bytes_be(&out);
        if !v.is_zero() && v < pk.n {
            return v;
        }
    }
    unreachable!()
}

/// Client-side state of one blind-signing exchange. The blinding factor
/// never leaves this struct.
#[derive(Clone, Debug)]
pub struct BlindingSession {
    message: Vec<u8>,
    r: BigUint,
    blinded: BigUint,
}

impl BlindingSession {
    pub fn start<R: RngCore + CryptoRng>(pk: &RsaPublicKey, message: &[u8], rng: &mut R) -> Self {
        let (blinded, r) = blind(pk, message, rng);
        BlindingSession { message: message.to_vec(), r, blinded }
    }

    pub fn blinded(&self) -> &BigUint {
        &self.blinded
    }

    pub fn message(&self) -> &[u8] {
        &self.message
    }

    pub fn finish(&self, pk: &RsaPublicKey, signed: &BigUint) -> BigUint {
        unblind(pk, signed, &self.r)
    }
}

/// Returns `(M', r)`; `r` is resampled until it is a unit mod N.
pub fn blind<R: RngCore + CryptoRng>(pk: &RsaPublicKey, message: &[u8], rng: &mut R) -> (BigUint, BigUint) {
    let one = BigUint::one();
    loop {
        let r = rng.gen_biguint_range(&one, &pk.n);
        if r.gcd(&pk.n).is_one() {
            return (blind_with(pk, message, &r), r);
        }
    }
}

/// `H(M) r^e mod N` for a caller-chosen `r`.
pub fn blind_with(pk: &RsaPublicKey, message: &[u8], r: &BigUint) -> BigUint {
    (fdh(pk, message) * r.modpow(&pk.e, &pk.n)) % &pk.n
}

pub fn sign_blinded(sk: &RsaSignerKey, blinded: &BigUint) -> BigUint {
    blinded.modpow(&sk.d, &sk.public.n)
}

pub fn unblind(pk: &RsaPublicKey, signed: &BigUint, r: &BigUint) -> BigUint {
    let r_inv = r
        .mod_inverse(&pk.n)
        .and_then(|v| v.to_biguint())
        .expect("blinding factor is a unit");
    (signed * r_inv) % &pk.n
}

pub fn verify(pk: &RsaPublicKey, message: &[u8], sig: &BigUint) -> bool {
    !sig.is_zero() && sig < &pk.n && sig.modpow(&pk.e, &pk.n) == fdh(pk, message)
}

/// Bytes a user moves in one exchange: the admin's public modulus, `M'` and `S'`.
pub fn exchange_bytes(modulus_bits: usize) -> usize {
    3 * modulus_bits / 8
}

/// Bytes the admin sends per member: the public modulus and `S'`.
pub fn admin_egress_per_user(modulus_bits: usize) -> usize {
    2 * modulus_bits / 8
}

/// `role ‖ pk ‖ S` membership certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub role: RoleId,
    pub pk: [u8; 32],
    pub sig: BigUint,
}

impl Certificate {
    pub fn to_bytes(&self, key: &RsaPublicKey) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + key.modulus_bytes());
        out.extend_from_slice(&self.role.to_le_bytes());
        out.extend_from_slice(&self.pk);
        out.extend_from_slice(&key.encode(&self.sig));
        out
    }

    pub fn from_bytes(bytes: &[u8], key: &RsaPublicKey) -> Result<Self, BlindSigError> {
        let expected = 36 + key.modulus_bytes();
        if bytes.len() != expected {
            return Err(BlindSigError::BadCertificateLength { expected, got: bytes.len() });
        }
        Ok(Certificate {
            role: RoleId::from_le_bytes(bytes[..4].try_into().unwrap()),
            pk: bytes[4..36].try_into().unwrap(),
            sig: key.decode(&bytes[36..])?,
        })
    }

    pub fn verify(&self, key: &RsaPublicKey) -> bool {
        verify(key, &self.pk, &self.sig)
    }
}

/// Decides whether a user may obtain a certificate for a role.
pub type AuthPredicate = Box<dyn Fn(&str, RoleId) -> bool + Send + Sync>;

/// The organisation's signing service. Serves one request at a time.
pub struct AdminSigner {
    keys: BTreeMap<RoleId, RsaSignerKey>,
    authorize: AuthPredicate,
    issued: BTreeSet<String>,
    seen: BTreeSet<Vec<u8>>,
    transcript: Vec<BigUint>,
    egress_bytes: u64,
    ingress_bytes: u64,
    sealed: bool,
}

impl AdminSigner {
    pub fn new(keys: BTreeMap<RoleId, RsaSignerKey>, authorize: AuthPredicate) -> Self {
        AdminSigner {
            keys,
            authorize,
            issued: BTreeSet::new(),
            seen: BTreeSet::new(),
            transcript: Vec::new(),
            egress_bytes: 0,
            ingress_bytes: 0,
            sealed: false,
        }
    }

    /// Admin that accepts everyone.
    pub fn open(keys: BTreeMap<RoleId, RsaSignerKey>) -> Self {
        Self::new(keys, Box::new(|_, _| true))
    }

    pub fn public_key(&self, role: RoleId) -> Option<&RsaPublicKey> {
        self.keys.get(&role).map(|k| &k.public)
    }

    pub fn public_keys(&self) -> BTreeMap<RoleId, RsaPublicKey> {
        self.keys.iter().map(|(r, k)| (*r, k.public.clone())).collect()
    }

    /// Serve the public key for a role (counted as egress).
    pub fn fetch_key(&mut self, role: RoleId) -> Result<RsaPublicKey, BlindSigError> {
        let key = self.keys.get(&role).ok_or(BlindSigError::UnknownRole(role))?;
        self.egress_bytes += key.public.modulus_bytes() as u64;
        Ok(key.public.clone())
    }

    /// Sign one blinded message for an authorised, not yet certified user.
    pub fn handle(&mut self, user: &str, role: RoleId, blinded: &BigUint) -> Result<BigUint, BlindSigError> {
        if self.sealed {
            return Err(BlindSigError::RestartRequired);
        }
        let key = self.keys.get(&role).ok_or(BlindSigError::UnknownRole(role))?;
        if !(self.authorize)(user, role) {
            return Err(BlindSigError::Unauthorized(user.to_string(), role));
        }
        if self.issued.contains(user) {
            return Err(BlindSigError::AlreadyIssued(user.to_string()));
        }
        let enc = key.public.encode(blinded);
        if !self.seen.insert(enc) {
            return Err(BlindSigError::RepeatedBlindedMessage);
        }
        self.ingress_bytes += key.public.modulus_bytes() as u64;
        let signed = sign_blinded(key, blinded);
        self.egress_bytes += key.public.modulus_bytes() as u64;
        self.issued.insert(user.to_string());
        self.transcript.push(blinded.clone());
        Ok(signed)
    }

    /// Blinded messages seen so far, in arrival order.
    pub fn transcript(&self) -> &[BigUint] {
        &self.transcript
    }

    pub fn egress_bytes(&self) -> u64 {
        self.egress_bytes
    }

    pub fn ingress_bytes(&self) -> u64 {
        self.ingress_bytes
    }

    pub fn issued_count(&self) -> usize {
        self.issued.len()
    }

    /// Close the setup window; further requests need [`AdminSigner::restart`].
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    /// Membership changed: fresh keys, empty state. Every member must
    /// re-register with a fresh ring key.
    pub fn restart(&mut self, keys: BTreeMap<RoleId, RsaSignerKey>) {
        self.keys = keys;
        self.issued.clear();
        self.seen.clear();
        self.transcript.clear();
        self.sealed = false;
    }
}

#[derive(Clone, Debug)]
pub struct CeremonyUser {
    pub id: String,
    pub role: RoleId,
    pub pk: [u8; 32],
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CeremonyTraffic {
    pub per_user_bytes: Vec<u64>,
    pub admin_egress: u64,
    pub admin_ingress: u64,
}

#[derive(Clone, Debug)]
pub struct CeremonyOutcome {
    /// Sorted by public key, not by session order.
    pub certificates: Vec<Certificate>,
    pub traffic: CeremonyTraffic,
}

/// Run every user through one blind-signing exchange, then seal the setup
/// window. A failing user aborts the ceremony.
pub fn registration_ceremony<R: RngCore + CryptoRng>(
    admin: &mut AdminSigner,
    users: &[CeremonyUser],
    rng: &mut R,
) -> Result<CeremonyOutcome, BlindSigError> {
    let egress0 = admin.egress_bytes();
    let ingress0 = admin.ingress_bytes();
    let mut certificates = Vec::with_capacity(users.len());
    let mut per_user = Vec::with_capacity(users.len());
    for u in users {
        let key = admin.fetch_key(u.role)?;
        let session = BlindingSession::start(&key, &u.pk, rng);
        let signed = admin.handle(&u.id, u.role, session.blinded())?;
        let sig = session.finish(&key, &signed);
        debug_assert!(verify(&key, &u.pk, &sig));
        per_user.push(3 * key.modulus_bytes() as u64);
        certificates.push(Certificate { role: u.role, pk: u.pk, sig });
    }
    admin.seal();
    certificates.sort_by(|a, b| a.pk.cmp(&b.pk).then(a.role.cmp(&b.role)));
    Ok(CeremonyOutcome {
        certificates,
        traffic: CeremonyTraffic {
            per_user_bytes: per_user,
            admin_egress: admin.egress_bytes() - egress0,
            admin_ingress: admin.ingress_bytes() - ingress0,
        },
    })
}

/// Chi-square statistic of `values mod buckets` against the uniform law.
pub fn residue_chi_square(values: &[BigUint], buckets: u32) -> f64 {
    let mut counts = vec![0u64; buckets as usize];
    let m = BigUint::from(buckets);
    for v in values {
        counts[(v % &m).to_usize().unwrap()] += 1;
    }
    let expected = values.len() as f64 / buckets as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Uniform element of `[1, N)` for tests that need a raw residue.
pub fn random_residue<R: Rng + ?Sized>(pk: &RsaPublicKey, rng: &mut R) -> BigUint {
    rng.gen_biguint_range(&BigUint::one(), &pk.n)
}
