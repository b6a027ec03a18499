// SPDX-License-Identifier: Apache-2.0
//! Signing, serial verification and the wire format.
//!
//! Wire layout for arity `n` (every field 32 bytes):
//!
//! ```text
//! nu | c_l[0..n] | c_a[0..n] | c_b[0..n] | c_d[0..n] | e_d[0..n]
//!    | f[0..n] | z_a[0..n] | z_b[0..n] | z_d | tau | m1 | m2 | z
//! ```
//!
//! Signer index bits are little-endian: bit `j` of index `l` is `(l >> j) & 1`.

use rand::{CryptoRng, RngCore};

use super::dlogeq::{self, DlogEqProof};
use super::{poll_base, vote_base, ProofFailure, Ring, UrsError, UrsParams};
use crate::group::{
    multi_exp, multi_exp_vartime, GroupElement, GroupScalar, HashDomain, Transcript,
};

/// One-out-of-many transcript (without the challenge, which is recomputed).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipProof {
    pub c_l: Vec<GroupElement>,
    pub c_a: Vec<GroupElement>,
    pub c_b: Vec<GroupElement>,
    pub c_d: Vec<GroupElement>,
    pub e_d: Vec<GroupElement>,
    pub f: Vec<GroupScalar>,
    pub z_a: Vec<GroupScalar>,
    pub z_b: Vec<GroupScalar>,
    pub z_d: GroupScalar,
}

impl MembershipProof {
    pub fn arity(&self) -> usize {
        self.c_l.len()
    }

    fn is_consistent(&self) -> bool {
        let n = self.c_l.len();
        n >= 1
            && [self.c_a.len(), self.c_b.len(), self.c_d.len(), self.e_d.len()]
                .iter()
                .all(|&l| l == n)
            && [self.f.len(), self.z_a.len(), self.z_b.len()].iter().all(|&l| l == n)
    }
}

/// `(nu, sigma, tau, pi)` together with its wire encoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UrsSignature {
    nu: GroupElement,
    sigma: MembershipProof,
    tau: GroupElement,
    pi: DlogEqProof,
    bytes: Vec<u8>,
}

fn encoded_len(n: usize) -> usize {
    32 * (8 * n + 6)
}

/// Bytes covering `nu` and all commitment columns.
fn commitment_span(n: usize) -> usize {
    32 * (1 + 5 * n)
}

impl UrsSignature {
    pub fn from_parts(
        nu: GroupElement,
        sigma: MembershipProof,
        tau: GroupElement,
        pi: DlogEqProof,
    ) -> Result<Self, UrsError> {
        if !sigma.is_consistent() {
            return Err(UrsError::BadSignatureLength(0));
        }
        let n = sigma.arity();
        let mut bytes = Vec::with_capacity(encoded_len(n));
        bytes.extend_from_slice(&nu.to_bytes());
        for col in [&sigma.c_l, &sigma.c_a, &sigma.c_b, &sigma.c_d, &sigma.e_d] {
            for e in col.iter() {
                bytes.extend_from_slice(&e.to_bytes());
            }
        }
        for col in [&sigma.f, &sigma.z_a, &sigma.z_b] {
            for s in col.iter() {
                bytes.extend_from_slice(&s.to_bytes());
            }
        }
        bytes.extend_from_slice(&sigma.z_d.to_bytes());
        bytes.extend_from_slice(&tau.to_bytes());
        bytes.extend_from_slice(&pi.m1.to_bytes());
        bytes.extend_from_slice(&pi.m2.to_bytes());
        bytes.extend_from_slice(&pi.z.to_bytes());
        debug_assert_eq!(bytes.len(), encoded_len(n));
        Ok(UrsSignature { nu, sigma, tau, pi, bytes })
    }

    /// Arity implied by a wire length, if any.
    pub fn arity_from_len(len: usize) -> Option<usize> {
        if len % 32 != 0 {
            return None;
        }
        let words = len / 32;
        if words < 14 || (words - 6) % 8 != 0 {
            return None;
        }
        Some((words - 6) / 8)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, UrsError> {
        let n = Self::arity_from_len(bytes.len()).ok_or(UrsError::BadSignatureLength(bytes.len()))?;
        let mut words = bytes.chunks_exact(32);
        let mut elem = || GroupElement::from_slice(words.next().unwrap());
        let nu = elem()?;
        let mut cols: [Vec<GroupElement>; 5] = Default::default();
        for col in cols.iter_mut() {
            *col = (0..n).map(|_| elem()).collect::<Result<_, _>>()?;
        }
        let mut words = bytes[commitment_span(n)..].chunks_exact(32);
        let mut scalar = || GroupScalar::from_slice(words.next().unwrap());
        let mut scols: [Vec<GroupScalar>; 3] = Default::default();
        for col in scols.iter_mut() {
            *col = (0..n).map(|_| scalar()).collect::<Result<_, _>>()?;
        }
        let z_d = scalar()?;
        let tail = &bytes[32 * (8 * n + 2)..];
        let tau = GroupElement::from_slice(&tail[..32])?;
        let m1 = GroupElement::from_slice(&tail[32..64])?;
        let m2 = GroupElement::from_slice(&tail[64..96])?;
        let z = GroupScalar::from_slice(&tail[96..128])?;
        let [c_l, c_a, c_b, c_d, e_d] = cols;
        let [f, z_a, z_b] = scols;
        Ok(UrsSignature {
            nu,
            sigma: MembershipProof { c_l, c_a, c_b, c_d, e_d, f, z_a, z_b, z_d },
            tau,
            pi: DlogEqProof { m1, m2, z },
            bytes: bytes.to_vec(),
        })
    }

    pub fn nu(&self) -> &GroupElement {
        &self.nu
    }

    pub fn tau(&self) -> &GroupElement {
        &self.tau
    }

    pub fn sigma(&self) -> &MembershipProof {
        &self.sigma
    }

    pub fn pi(&self) -> &DlogEqProof {
        &self.pi
    }

    pub fn arity(&self) -> usize {
        self.sigma.arity()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub(crate) fn nu_bytes(&self) -> &[u8; 32] {
        self.bytes[..32].try_into().unwrap()
    }

    pub(crate) fn tau_bytes(&self) -> &[u8; 32] {
        let n = self.arity();
        self.bytes[32 * (8 * n + 2)..32 * (8 * n + 3)].try_into().unwrap()
    }

    pub(crate) fn m_bytes(&self) -> (&[u8; 32], &[u8; 32]) {
        let n = self.arity();
        let o = 32 * (8 * n + 3);
        (
            self.bytes[o..o + 32].try_into().unwrap(),
            self.bytes[o + 32..o + 64].try_into().unwrap(),
        )
    }
}

/// Uniqueness tag used for double-vote detection.
pub fn tag_of(sig: &UrsSignature) -> GroupElement {
    sig.nu
}

fn membership_challenge_raw(
    params: &UrsParams,
    poll_id: &[u8],
    vote: &[u8],
    ring_hash: &[u8; 32],
    n: usize,
    commitments: &[u8],
    tau: &[u8; 32],
) -> GroupScalar {
    let mut t = Transcript::new(HashDomain::URS_FS);
    t.append_fixed(params.g_bytes());
    t.append_fixed(params.h_bytes());
    t.append_bytes(poll_id);
    t.append_bytes(vote);
    t.append_fixed(ring_hash);
    t.append_fixed(&(n as u32).to_le_bytes());
    t.append_fixed(commitments);
    t.append_fixed(tau);
    t.challenge()
}

pub(crate) fn membership_challenge(
    params: &UrsParams,
    poll_id: &[u8],
    vote: &[u8],
    ring: &Ring,
    sig: &UrsSignature,
) -> GroupScalar {
    let n = sig.arity();
    membership_challenge_raw(
        params,
        poll_id,
        vote,
        &ring.hash(),
        n,
        &sig.bytes[..commitment_span(n)],
        sig.tau_bytes(),
    )
}

pub(crate) fn dlogeq_challenge(
    sig: &UrsSignature,
    vote_base: &GroupElement,
    poll_base_bytes: &[u8; 32],
) -> GroupScalar {
    let (m1, m2) = sig.m_bytes();
    dlogeq::challenge([
        &vote_base.to_bytes(),
        poll_base_bytes,
        sig.tau_bytes(),
        sig.nu_bytes(),
        m1,
        m2,
    ])
}

/// `p_i(x)` for every padded index `i`, given the responses `f_j`.
pub(crate) fn eval_ring_polys(f: &[GroupScalar], x: GroupScalar) -> Vec<GroupScalar> {
    let n = f.len();
    let mut vals = vec![GroupScalar::ZERO; 1 << n];
    vals[0] = GroupScalar::ONE;
    let mut size = 1;
    for fj in f {
        let lo = x - *fj;
        for p in 0..size {
            let v = vals[p];
            vals[p + size] = v * *fj;
            vals[p] = v * lo;
        }
        size *= 2;
    }
    vals
}

/// Collapse padded indices onto the last real member.
pub(crate) fn fold_padded(mut vals: Vec<GroupScalar>, members: usize) -> Vec<GroupScalar> {
    let extra: GroupScalar = vals[members..].iter().copied().sum();
    vals.truncate(members);
    vals[members - 1] += extra;
    vals
}

/// Coefficients of `p_i(x)` for every padded `i`, as a flat `[i * (n+1) + k]` table.
fn ring_poly_coefficients(bits: &[bool], a: &[GroupScalar]) -> Vec<GroupScalar> {
    let n = bits.len();
    let stride = n + 1;
    let mut coeffs = vec![GroupScalar::ZERO; (1 << n) * stride];
    coeffs[0] = GroupScalar::ONE;
    let mut size = 1;
    for (j, (&bit, &aj)) in bits.iter().zip(a).enumerate() {
        // f_{j,1}(x) = l_j x + a_j ; f_{j,0}(x) = (1 - l_j) x - a_j
        let (hi1, hi0) = (GroupScalar::from_u64(bit as u64), aj);
        let (lo1, lo0) = (GroupScalar::from_u64(!bit as u64), -aj);
        for p in 0..size {
            let src = p * stride;
            let dst = (p + size) * stride;
            for k in (0..=j + 1).rev() {
                let prev = if k > 0 { coeffs[src + k - 1] } else { GroupScalar::ZERO };
                let cur = coeffs[src + k];
                coeffs[dst + k] = hi0 * cur + hi1 * prev;
                coeffs[src + k] = lo0 * cur + lo1 * prev;
            }
        }
        size *= 2;
    }
    coeffs
}

pub fn sign<R: RngCore + CryptoRng>(
    params: &UrsParams,
    poll_id: &[u8],
    vote: &[u8],
    ring: &Ring,
    sk: &GroupScalar,
    rng: &mut R,
) -> Result<UrsSignature, UrsError> {
    let pk = *params.h() * *sk;
    let l = ring.index_of(&pk).ok_or(UrsError::SignerNotInRing)?;
    let n = ring.arity();
    let ring_hash = ring.hash();
    let b = poll_base(poll_id, &ring_hash);
    let c = vote_base(poll_id, vote, &ring_hash);
    let nu = b * *sk;
    let tau = c * *sk;
    let (g, h) = (*params.g(), *params.h());

    let bits: Vec<bool> = (0..n).map(|j| (l >> j) & 1 == 1).collect();
    let mut rand_vec = || (0..n).map(|_| GroupScalar::random(rng)).collect::<Vec<_>>();
    let r = rand_vec();
    let a = rand_vec();
    let s = rand_vec();
    let t = rand_vec();
    let rho = rand_vec();

    let bit_scalar = |j: usize| GroupScalar::from_u64(bits[j] as u64);
    let c_l: Vec<_> = (0..n).map(|j| multi_exp(&[(g, bit_scalar(j)), (h, r[j])])).collect();
    let c_a: Vec<_> = (0..n).map(|j| multi_exp(&[(g, a[j]), (h, s[j])])).collect();
    let c_b: Vec<_> = (0..n)
        .map(|j| multi_exp(&[(g, bit_scalar(j) * a[j]), (h, t[j])]))
        .collect();

    let coeffs = ring_poly_coefficients(&bits, &a);
    let stride = n + 1;
    let members = ring.members();
    let c_d: Vec<_> = (0..n)
        .map(|k| {
            let column: Vec<GroupScalar> = (0..ring.padded_len()).map(|i| coeffs[i * stride + k]).collect();
            let folded = fold_padded(column, members.len());
            let mut pairs: Vec<_> = members.iter().copied().zip(folded).collect();
            pairs.push((h, rho[k]));
            multi_exp(&pairs)
        })
        .collect();
    let e_d: Vec<_> = rho.iter().map(|rk| b * *rk).collect();

    let mut commitments = Vec::with_capacity(commitment_span(n));
    commitments.extend_from_slice(&nu.to_bytes());
    for col in [&c_l, &c_a, &c_b, &c_d, &e_d] {
        for e in col.iter() {
            commitments.extend_from_slice(&e.to_bytes());
        }
    }
    let x = membership_challenge_raw(params, poll_id, vote, &ring_hash, n, &commitments, &tau.to_bytes());

    let f: Vec<_> = (0..n).map(|j| bit_scalar(j) * x + a[j]).collect();
    let z_a: Vec<_> = (0..n).map(|j| r[j] * x + s[j]).collect();
    let z_b: Vec<_> = (0..n).map(|j| r[j] * (x - f[j]) + t[j]).collect();
    let xp = x.powers(n + 1);
    let z_d = *sk * xp[n] - (0..n).map(|k| rho[k] * xp[k]).sum::<GroupScalar>();

    let pi = DlogEqProof::prove(sk, &c, &b, rng);
    UrsSignature::from_parts(
        nu,
        MembershipProof { c_l, c_a, c_b, c_d, e_d, f, z_a, z_b, z_d },
        tau,
        pi,
    )
}

pub fn verify(
    params: &UrsParams,
    poll_id: &[u8],
    vote: &[u8],
    ring: &Ring,
    sig: &UrsSignature,
) -> Result<(), UrsError> {
    let n = ring.arity();
    if sig.arity() != n {
        return Err(UrsError::ArityMismatch { expected: n, got: sig.arity() });
    }
    let ring_hash = ring.hash();
    let b = poll_base(poll_id, &ring_hash);
    let c = vote_base(poll_id, vote, &ring_hash);
    let x = membership_challenge(params, poll_id, vote, ring, sig);
    let (g, h) = (*params.g(), *params.h());
    let one = GroupScalar::ONE;
    let p = &sig.sigma;

    for j in 0..n {
        // c_l^X c_a = g^f h^{z_a}
        if !multi_exp_vartime(&[(p.c_l[j], x), (p.c_a[j], one), (g, -p.f[j]), (h, -p.z_a[j])])
            .is_identity()
        {
            return Err(UrsError::InvalidProof(ProofFailure::BitCommitment(j)));
        }
        // c_l^{X-f} c_b = h^{z_b}
        if !multi_exp_vartime(&[(p.c_l[j], x - p.f[j]), (p.c_b[j], one), (h, -p.z_b[j])])
            .is_identity()
        {
            return Err(UrsError::InvalidProof(ProofFailure::BitProduct(j)));
        }
    }

    let xp = x.powers(n + 1);
    let polys = fold_padded(eval_ring_polys(&p.f, x), ring.len());
    let mut pairs: Vec<_> = ring.members().iter().copied().zip(polys).collect();
    pairs.extend(p.c_d.iter().zip(&xp).map(|(cd, xk)| (*cd, -*xk)));
    pairs.push((h, -p.z_d));
    if !multi_exp_vartime(&pairs).is_identity() {
        return Err(UrsError::InvalidProof(ProofFailure::Membership));
    }

    let mut pairs = vec![(sig.nu, xp[n]), (b, -p.z_d)];
    pairs.extend(p.e_d.iter().zip(&xp).map(|(ed, xk)| (*ed, -*xk)));
    if !multi_exp_vartime(&pairs).is_identity() {
        return Err(UrsError::InvalidProof(ProofFailure::TagConsistency));
    }

    let hh = dlogeq_challenge(sig, &c, &b.to_bytes());
    if !sig.pi.check(hh, &sig.tau, &sig.nu, &c, &b) {
        return Err(UrsError::InvalidProof(ProofFailure::DlogEq));
    }
    Ok(())
}

/// Decode then verify; decoding failures are reported as malformed.
pub fn verify_encoded(
    params: &UrsParams,
    poll_id: &[u8],
    vote: &[u8],
    ring: &Ring,
    bytes: &[u8],
) -> Result<(), UrsError> {
    let sig = UrsSignature::from_bytes(bytes)?;
    verify(params, poll_id, vote, ring, &sig)
}
