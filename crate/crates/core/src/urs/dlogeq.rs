// SPDX-License-Identifier: Apache-2.0
//! Non-interactive proof that `tau = g2^x` and `nu = g3^x` share `x`.

use rand::{CryptoRng, RngCore};

use crate::group::{hash_to_scalar, multi_exp_vartime, GroupElement, GroupScalar, HashDomain};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DlogEqProof {
    pub m1: GroupElement,
    pub m2: GroupElement,
    pub z: GroupScalar,
}

/// `h = H("dlogeq/fs", g2‖g3‖tau‖nu‖m1‖m2)` over encoded elements.
pub(crate) fn challenge(parts: [&[u8; 32]; 6]) -> GroupScalar {
    let mut data = [0u8; 192];
    for (i, p) in parts.iter().enumerate() {
        data[32 * i..32 * (i + 1)].copy_from_slice(*p);
    }
    hash_to_scalar(HashDomain::DLOGEQ_FS, &data)
}

impl DlogEqProof {
    pub fn prove<R: RngCore + CryptoRng>(
        x: &GroupScalar,
        g2: &GroupElement,
        g3: &GroupElement,
        rng: &mut R,
    ) -> Self {
        let r = GroupScalar::random(rng);
        let tau = *g2 * *x;
        let nu = *g3 * *x;
        let m1 = *g2 * r;
        let m2 = *g3 * r;
        let h = challenge([
            &g2.to_bytes(),
            &g3.to_bytes(),
            &tau.to_bytes(),
            &nu.to_bytes(),
            &m1.to_bytes(),
            &m2.to_bytes(),
        ]);
        DlogEqProof { m1, m2, z: h * *x + r }
    }

    pub fn verify(
        &self,
        tau: &GroupElement,
        nu: &GroupElement,
        g2: &GroupElement,
        g3: &GroupElement,
    ) -> bool {
        let h = challenge([
            &g2.to_bytes(),
            &g3.to_bytes(),
            &tau.to_bytes(),
            &nu.to_bytes(),
            &self.m1.to_bytes(),
            &self.m2.to_bytes(),
        ]);
        self.check(h, tau, nu, g2, g3)
    }

    /// Both equations for a precomputed challenge.
    pub(crate) fn check(
        &self,
        h: GroupScalar,
        tau: &GroupElement,
        nu: &GroupElement,
        g2: &GroupElement,
        g3: &GroupElement,
    ) -> bool {
        let one = GroupScalar::ONE;
        // g2^z = m1 tau^h and g3^z = m2 nu^h
        multi_exp_vartime(&[(*g2, self.z), (self.m1, -one), (*tau, -h)]).is_identity()
            && multi_exp_vartime(&[(*g3, self.z), (self.m2, -one), (*nu, -h)]).is_identity()
    }
}
