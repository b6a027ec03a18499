// SPDX-License-Identifier: Apache-2.0
//! Batch verification by random linear combination.
//!
//! Every verification equation of every signature is raised to an
//! independent random weight and all of them are folded into a single
//! variable-time multi-exponentiation. Public keys and the poll base
//! `H(PID‖R)` are shared across the batch, so their exponents are summed
//! before the multi-exponentiation. If the combined equation fails, each
//! signature is re-checked on its own so the caller still gets per-signature
//! verdicts.

use curve25519_dalek::ristretto::RistrettoPoint;
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::{IsIdentity, VartimeMultiscalarMul};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::proof::{dlogeq_challenge, eval_ring_polys, membership_challenge, verify};
use super::{poll_base, vote_base, Ring, UrsError, UrsParams, UrsSignature};
use crate::group::GroupScalar;

/// One entry of a possibly heterogeneous batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchItem<'a> {
    pub poll_id: &'a [u8],
    pub ring: &'a Ring,
    pub vote: &'a [u8],
    pub sig: &'a UrsSignature,
}

/// Like [`batch_verify`] but checks that all items share one poll and ring.
pub fn batch_verify_mixed(
    params: &UrsParams,
    items: &[BatchItem<'_>],
    seed: [u8; 32],
) -> Result<Vec<bool>, UrsError> {
    let Some(first) = items.first() else {
        return Ok(Vec::new());
    };
    if items
        .iter()
        .any(|it| it.poll_id != first.poll_id || it.ring.hash() != first.ring.hash())
    {
        return Err(UrsError::MixedBatch);
    }
    let votes: Vec<_> = items.iter().map(|it| (it.vote, it.sig)).collect();
    Ok(batch_verify(params, first.poll_id, first.ring, &votes, seed))
}

/// 128-bit weights are enough for soundness error 2^-128 per batch.
fn weight(rng: &mut ChaCha20Rng) -> Scalar {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b[..16]);
    Scalar::from_bytes_mod_order(b)
}

/// Per-signature verdicts for votes on one poll and ring.
///
/// `seed` keys the CSPRNG that draws the combination weights; results are
/// deterministic in it and agree with serial [`verify`] except with
/// negligible probability.
pub fn batch_verify(
    params: &UrsParams,
    poll_id: &[u8],
    ring: &Ring,
    votes: &[(&[u8], &UrsSignature)],
    seed: [u8; 32],
) -> Vec<bool> {
    let n = ring.arity();
    let mut verdicts = vec![false; votes.len()];
    let candidates: Vec<usize> = (0..votes.len()).filter(|&i| votes[i].1.arity() == n).collect();
    if candidates.is_empty() {
        return verdicts;
    }
    if candidates.len() == 1 {
        let i = candidates[0];
        verdicts[i] = verify(params, poll_id, votes[i].0, ring, votes[i].1).is_ok();
        return verdicts;
    }

    let mut rng = ChaCha20Rng::from_seed(seed);
    let ring_hash = ring.hash();
    let b = poll_base(poll_id, &ring_hash);
    let b_bytes = b.to_bytes();

    let per_sig = 5 * n + 6;
    let mut scalars: Vec<Scalar> = Vec::with_capacity(candidates.len() * per_sig + ring.len() + 3);
    let mut points: Vec<RistrettoPoint> = Vec::with_capacity(scalars.capacity());
    let mut g_coeff = Scalar::ZERO;
    let mut h_coeff = Scalar::ZERO;
    let mut b_coeff = Scalar::ZERO;
    let mut pk_coeff = vec![Scalar::ZERO; ring.len()];
    let last = ring.len() - 1;

    for &i in &candidates {
        let (vote, sig) = votes[i];
        let p = sig.sigma();
        let x = membership_challenge(params, poll_id, vote, ring, sig).0;
        let c = vote_base(poll_id, vote, &ring_hash);
        let hh = dlogeq_challenge(sig, &c, &b_bytes).0;
        let mut xp = Vec::with_capacity(n + 1);
        let mut acc = Scalar::ONE;
        for _ in 0..=n {
            xp.push(acc);
            acc *= x;
        }

        for j in 0..n {
            let wa = weight(&mut rng);
            let wb = weight(&mut rng);
            let f = p.f[j].0;
            scalars.push(wa * x + wb * (x - f));
            points.push(p.c_l[j].0);
            scalars.push(wa);
            points.push(p.c_a[j].0);
            scalars.push(wb);
            points.push(p.c_b[j].0);
            g_coeff -= wa * f;
            h_coeff -= wa * p.z_a[j].0 + wb * p.z_b[j].0;
        }

        let wm = weight(&mut rng);
        let polys = eval_ring_polys(&p.f, GroupScalar(x));
        for (idx, v) in polys.iter().enumerate() {
            pk_coeff[idx.min(last)] += wm * v.0;
        }
        for k in 0..n {
            scalars.push(-(wm * xp[k]));
            points.push(p.c_d[k].0);
        }
        h_coeff -= wm * p.z_d.0;

        let wt = weight(&mut rng);
        let w5 = weight(&mut rng);
        let w6 = weight(&mut rng);
        // Tag column plus the nu half of the dlog-eq proof.
        scalars.push(wt * xp[n] - w6 * hh);
        points.push(sig.nu().0);
        for k in 0..n {
            scalars.push(-(wt * xp[k]));
            points.push(p.e_d[k].0);
        }
        b_coeff += w6 * sig.pi().z.0 - wt * p.z_d.0;
        // C^z = m1 tau^h
        scalars.push(w5 * sig.pi().z.0);
        points.push(c.0);
        scalars.push(-w5);
        points.push(sig.pi().m1.0);
        scalars.push(-(w5 * hh));
        points.push(sig.tau().0);
        scalars.push(-w6);
        points.push(sig.pi().m2.0);
    }

    scalars.push(g_coeff);
    points.push(params.g().0);
    scalars.push(h_coeff);
    points.push(params.h().0);
    scalars.push(b_coeff);
    points.push(b.0);
    scalars.extend(pk_coeff);
    points.extend(ring.members().iter().map(|m| m.0));

    if RistrettoPoint::vartime_multiscalar_mul(&scalars, &points).is_identity() {
        for &i in &candidates {
            verdicts[i] = true;
        }
    } else {
        for &i in &candidates {
            verdicts[i] = verify(params, poll_id, votes[i].0, ring, votes[i].1).is_ok();
        }
    }
    verdicts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::urs::{keygen, sign, UrsKeyPair};
    use rand::Rng;

    fn fixture(n: usize, m: usize, seed: u64) -> (UrsParams, Ring, Vec<(Vec<u8>, UrsSignature)>, Vec<UrsKeyPair>) {
        let params = UrsParams::default();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keys: Vec<_> = (0..n).map(|_| keygen(&params, &mut rng)).collect();
        let ring = Ring::new(keys.iter().map(|k| k.pk)).unwrap();
        let sigs = (0..m)
            .map(|i| {
                let vote = format!("vote-{i}").into_bytes();
                let sig = sign(&params, b"poll", &vote, &ring, &keys[i % n].sk, &mut rng).unwrap();
                (vote, sig)
            })
            .collect();
        (params, ring, sigs, keys)
    }

    fn as_refs(v: &[(Vec<u8>, UrsSignature)]) -> Vec<(&[u8], &UrsSignature)> {
        v.iter().map(|(a, b)| (a.as_slice(), b)).collect()
    }

    #[test]
    fn all_valid_accept() {
        let (params, ring, sigs, _) = fixture(16, 8, 1);
        assert_eq!(batch_verify(&params, b"poll", &ring, &as_refs(&sigs), [1; 32]), vec![true; 8]);
    }

    #[test]
    fn single_matches_verify() {
        let (params, ring, sigs, _) = fixture(5, 1, 2);
        assert_eq!(batch_verify(&params, b"poll", &ring, &as_refs(&sigs), [2; 32]), vec![true]);
        let bad = vec![(b"other".to_vec(), sigs[0].1.clone())];
        assert_eq!(batch_verify(&params, b"poll", &ring, &as_refs(&bad), [2; 32]), vec![false]);
    }

    #[test]
    fn isolates_corrupted_member() {
        let (params, ring, mut sigs, _) = fixture(16, 8, 3);
        let mut r = ChaCha20Rng::seed_from_u64(9);
        let bad = r.gen_range(0..8);
        sigs[bad].0 = b"tampered".to_vec();
        let serial: Vec<bool> = sigs
            .iter()
            .map(|(v, s)| verify(&params, b"poll", v, &ring, s).is_ok())
            .collect();
        let batch = batch_verify(&params, b"poll", &ring, &as_refs(&sigs), [3; 32]);
        assert_eq!(batch, serial);
        assert_eq!(batch.iter().filter(|v| !**v).count(), 1);
        assert!(!batch[bad]);
    }

    #[test]
    fn mixed_batch_errors() {
        let (params, ring, sigs, keys) = fixture(4, 2, 4);
        let ring2 = Ring::new(keys[..3].iter().map(|k| k.pk)).unwrap();
        let items = [
            BatchItem { poll_id: b"poll", ring: &ring, vote: &sigs[0].0, sig: &sigs[0].1 },
            BatchItem { poll_id: b"poll", ring: &ring2, vote: &sigs[1].0, sig: &sigs[1].1 },
        ];
        assert_eq!(batch_verify_mixed(&params, &items, [0; 32]), Err(UrsError::MixedBatch));
        let items = [
            BatchItem { poll_id: b"poll", ring: &ring, vote: &sigs[0].0, sig: &sigs[0].1 },
            BatchItem { poll_id: b"poll", ring: &ring, vote: &sigs[1].0, sig: &sigs[1].1 },
        ];
        assert_eq!(batch_verify_mixed(&params, &items, [0; 32]), Ok(vec![true, true]));
    }

    #[test]
    fn wrong_arity_rejected_individually() {
        let (params, ring, mut sigs, _) = fixture(8, 3, 5);
        let (_, _, small, _) = fixture(2, 1, 6);
        sigs.push(small[0].clone());
        assert_eq!(
            batch_verify(&params, b"poll", &ring, &as_refs(&sigs), [5; 32]),
            vec![true, true, true, false]
        );
    }
}
