//! Hash-chain VRF with single-use round keys.
//!
//! Round `i` has secret `sk_i = H("vrf-sk" || seed || i)` and public key
//! `pk_i = H(sk_i)`. Evaluating on `alpha` yields `beta = H(sk_i || alpha)`
//! and the proof is `sk_i` itself, so every round key may be used once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{sha256, sha256_concat, Hash32};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VrfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("round {0} key already consumed")]
    KeyReuse(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VrfOutput {
    pub beta: Hash32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VrfProof {
    pub round_index: u64,
    pub revealed_secret: Hash32,
}

/// Per-node chain of single-use VRF keys.
///
/// The seed never leaves this struct; round secrets are only exposed through
/// the proofs returned by [`VrfKeyChain::evaluate`].
pub struct VrfKeyChain {
    seed: [u8; 32],
    publics: Vec<Hash32>,
    consumed: Vec<bool>,
}

impl std::fmt::Debug for VrfKeyChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VrfKeyChain")
            .field("rounds", &self.publics.len())
            .field("consumed", &self.consumed.iter().filter(|c| **c).count())
            .finish()
    }
}

fn round_secret(seed: &[u8; 32], round: u64) -> Hash32 {
    sha256_concat(&[b"vrf-sk", seed, &round.to_be_bytes()])
}

impl VrfKeyChain {
    pub fn new(seed: [u8; 32], rounds: u64) -> Result<Self, VrfError> {
        if rounds == 0 {
            return Err(VrfError::InvalidArgument("rounds must be at least 1".into()));
        }
        let publics = (0..rounds).map(|i| sha256(round_secret(&seed, i).as_bytes())).collect();
        Ok(VrfKeyChain {
            seed,
            publics,
            consumed: vec![false; rounds as usize],
        })
    }

    pub fn rounds(&self) -> u64 {
        self.publics.len() as u64
    }

    pub fn public_keys(&self) -> &[Hash32] {
        &self.publics
    }

    pub fn public_key(&self, round: u64) -> Option<Hash32> {
        self.publics.get(round as usize).copied()
    }

    pub fn is_consumed(&self, round: u64) -> bool {
        self.consumed.get(round as usize).copied().unwrap_or(false)
    }

    pub fn evaluate(&mut self, round: u64, alpha: &[u8]) -> Result<(VrfOutput, VrfProof), VrfError> {
        let idx = round as usize;
        if idx >= self.publics.len() {
            return Err(VrfError::InvalidArgument(format!(
                "round {round} out of range (chain has {})",
                self.publics.len()
            )));
        }
        if self.consumed[idx] {
            return Err(VrfError::KeyReuse(round));
        }
        self.consumed[idx] = true;
        let sk = round_secret(&self.seed, round);
        let beta = sha256_concat(&[sk.as_bytes(), alpha]);
        Ok((
            VrfOutput { beta },
            VrfProof {
                round_index: round,
                revealed_secret: sk,
            },
        ))
    }
}

/// Accepts iff the proof opens `pk` and `beta` is the hash of the revealed
/// secret with `alpha`.
pub fn vrf_verify(pk: &Hash32, alpha: &[u8], out: &VrfOutput, proof: &VrfProof) -> bool {
    sha256(proof.revealed_secret.as_bytes()) == *pk
        && sha256_concat(&[proof.revealed_secret.as_bytes(), alpha]) == out.beta
}

/// Deterministic byte stream: block `j` is `H(beta || j)` with `j` as u64 BE.
#[derive(Clone, Debug)]
pub struct VrfStream {
    beta: Hash32,
    counter: u64,
    block: [u8; 32],
    pos: usize,
}

impl VrfStream {
    pub fn new(out: &VrfOutput) -> Self {
        VrfStream {
            beta: out.beta,
            counter: 0,
            block: [0; 32],
            pos: 32,
        }
    }

    pub fn next_byte(&mut self) -> u8 {
        if self.pos == 32 {
            self.block = sha256_concat(&[self.beta.as_bytes(), &self.counter.to_be_bytes()]).0;
            self.counter += 1;
            self.pos = 0;
        }
        let b = self.block[self.pos];
        self.pos += 1;
        b
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        for b in buf {
            *b = self.next_byte();
        }
    }

    /// Exactly uniform draw from `[0, bound)` by rejection over
    /// minimal-width big-endian chunks.
    pub fn uniform_below(&mut self, bound: u64) -> Result<u64, VrfError> {
        if bound == 0 {
            return Err(VrfError::InvalidArgument("bound must be positive".into()));
        }
        let bits = 64 - (bound - 1).leading_zeros();
        let width = bits.div_ceil(8).max(1) as usize;
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let mut v = 0u64;
            for _ in 0..width {
                v = (v << 8) | u64::from(self.next_byte());
            }
            let v = v & mask;
            if v < bound {
                return Ok(v);
            }
        }
    }
}

impl Iterator for VrfStream {
    type Item = u8;

    fn next(&mut self) -> Option<u8> {
        Some(self.next_byte())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seed(b: u8) -> [u8; 32] {
        [b; 32]
    }

    #[test]
    fn zero_rounds_rejected() {
        assert!(matches!(
            VrfKeyChain::new(seed(1), 0),
            Err(VrfError::InvalidArgument(_))
        ));
    }

    #[test]
    fn same_seed_same_publics() {
        let a = VrfKeyChain::new(seed(1), 20).unwrap();
        let b = VrfKeyChain::new(seed(1), 20).unwrap();
        assert_eq!(a.public_keys(), b.public_keys());
    }

    #[test]
    fn one_bit_seed_change_gives_disjoint_publics() {
        let mut s2 = seed(1);
        s2[31] ^= 1;
        let a = VrfKeyChain::new(seed(1), 100).unwrap();
        let b = VrfKeyChain::new(s2, 100).unwrap();
        let set: std::collections::HashSet<_> = a.public_keys().iter().collect();
        assert!(b.public_keys().iter().all(|pk| !set.contains(pk)));
    }

    #[test]
    fn evaluate_verifies_and_reuse_fails() {
        let mut chain = VrfKeyChain::new(seed(2), 4).unwrap();
        let (out, proof) = chain.evaluate(1, b"hello").unwrap();
        assert!(vrf_verify(&chain.public_key(1).unwrap(), b"hello", &out, &proof));
        assert_eq!(chain.evaluate(1, b"other"), Err(VrfError::KeyReuse(1)));
        assert!(matches!(chain.evaluate(4, b"x"), Err(VrfError::InvalidArgument(_))));
    }

    #[test]
    fn beta_matches_reference_recomputation() {
        // Reference values recorded with Python's hashlib:
        // sk = sha256(b"vrf-sk" + bytes([7])*32 + (3).to_bytes(8, "big"))
        // beta = sha256(sk + b"alpha")
        let mut chain = VrfKeyChain::new(seed(7), 5).unwrap();
        let (out, proof) = chain.evaluate(3, b"alpha").unwrap();
        assert_eq!(proof.revealed_secret.to_hex(), REF_SK);
        assert_eq!(out.beta.to_hex(), REF_BETA);
    }

    const REF_SK: &str = "d3156bc679b6a489a06217f21906afd895b8083b1bcff3b943a916b34c1e82fa";
    const REF_BETA: &str = "87848ae781504949207b2d47f40dfb02e48befe75d15017b0124af0db8530590";

    #[test]
    fn proof_from_other_round_rejected() {
        let mut chain = VrfKeyChain::new(seed(3), 3).unwrap();
        let (out, proof) = chain.evaluate(0, b"a").unwrap();
        assert!(!vrf_verify(&chain.public_key(1).unwrap(), b"a", &out, &proof));
    }

    #[test]
    fn single_bit_mutations_reject() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut chain = VrfKeyChain::new(seed(4), 100).unwrap();
        for round in 0..100 {
            let alpha: [u8; 12] = rng.random();
            let (out, proof) = chain.evaluate(round, &alpha).unwrap();
            let pk = chain.public_key(round).unwrap();
            let bit = rng.random_range(0..8);
            match rng.random_range(0..3) {
                0 => {
                    let mut o = out;
                    o.beta.0[rng.random_range(0..32)] ^= 1 << bit;
                    assert!(!vrf_verify(&pk, &alpha, &o, &proof));
                }
                1 => {
                    let mut p = proof;
                    p.revealed_secret.0[rng.random_range(0..32)] ^= 1 << bit;
                    assert!(!vrf_verify(&pk, &alpha, &out, &p));
                }
                _ => {
                    let mut a = alpha;
                    a[rng.random_range(0..12)] ^= 1 << bit;
                    assert!(!vrf_verify(&pk, &a, &out, &proof));
                }
            }
        }
    }

    #[test]
    fn stream_first_block_is_hash_of_beta_and_zero() {
        let out = VrfOutput { beta: sha256(b"b") };
        let mut s = VrfStream::new(&out);
        let mut first = [0u8; 32];
        s.fill(&mut first);
        assert_eq!(first, sha256_concat(&[out.beta.as_bytes(), &0u64.to_be_bytes()]).0);
        let a: Vec<u8> = VrfStream::new(&out).take(200).collect();
        let b: Vec<u8> = VrfStream::new(&out).take(200).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn stream_bit_balance() {
        let out = VrfOutput {
            beta: sha256(b"balance"),
        };
        let ones: u64 = VrfStream::new(&out)
            .take(125_000)
            .map(|b| u64::from(b.count_ones()))
            .sum();
        let frac = ones as f64 / 1_000_000.0;
        assert!((frac - 0.5).abs() < 0.01, "ones fraction {frac}");
    }

    #[test]
    fn bound_one_is_zero_and_consumes_one_byte() {
        let out = VrfOutput { beta: sha256(b"one") };
        let mut s = VrfStream::new(&out);
        for _ in 0..10 {
            assert_eq!(s.uniform_below(1).unwrap(), 0);
        }
        let mut reference = VrfStream::new(&out);
        for _ in 0..10 {
            reference.next_byte();
        }
        assert_eq!(s.next_byte(), reference.next_byte());
        assert!(s.uniform_below(0).is_err());
    }

    #[test]
    fn die_rolls_are_uniform() {
        let out = VrfOutput { beta: sha256(b"dice") };
        let mut s = VrfStream::new(&out);
        let mut counts = [0u64; 6];
        for _ in 0..60_000 {
            counts[s.uniform_below(6).unwrap() as usize] += 1;
        }
        for c in counts {
            assert!((9_600..=10_400).contains(&c), "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 10_000.0).powi(2) / 10_000.0).sum();
        // chi-square critical value, df = 5, p = 0.001
        assert!(chi2 < 20.515, "chi2 {chi2}");

        let again: Vec<u64> = {
            let mut s = VrfStream::new(&out);
            (0..100).map(|_| s.uniform_below(6).unwrap()).collect()
        };
        let mut s = VrfStream::new(&out);
        let first: Vec<u64> = (0..100).map(|_| s.uniform_below(6).unwrap()).collect();
        assert_eq!(first, again);
    }

    #[test]
    fn wide_bounds() {
        let out = VrfOutput { beta: sha256(b"wide") };
        let mut s = VrfStream::new(&out);
        for _ in 0..100 {
            let v = s.uniform_below(u64::MAX).unwrap();
            assert!(v < u64::MAX);
            assert!(s.uniform_below(257).unwrap() < 257);
        }
    }
}
