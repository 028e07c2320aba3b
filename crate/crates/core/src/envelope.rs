//! Commit-reveal sealing of transactions (the Privacy Keeper role).
//!
//! A sealed transaction exposes only its [`PublicView`]: a public id, the gas
//! limit needed for block packing, and a salted sender hash. The plaintext is
//! XOR-encrypted with a SHA-256 keystream and bound by `H(plaintext || salt)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{sha256_concat, Hash32};
use crate::model::{canonical_deserialize, canonical_serialize, Transaction};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvelopeError {
    #[error("reveal failed: {0}")]
    RevealFailure(&'static str),
    #[error("envelope {0} is not registered")]
    Unknown(Hash32),
    #[error("envelope {0} was already opened")]
    AlreadyOpened(Hash32),
    #[error("malformed envelope bytes: {0}")]
    Decode(&'static str),
}

const VIEW_LEN: usize = 32 + 8 + 32;

/// Everything an observer learns about a sealed transaction before reveal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicView {
    pub tx_id_public: Hash32,
    pub gas_limit: u64,
    pub sender_blinded: Hash32,
}

impl PublicView {
    pub fn to_bytes(&self) -> [u8; VIEW_LEN] {
        let mut out = [0u8; VIEW_LEN];
        out[..32].copy_from_slice(self.tx_id_public.as_bytes());
        out[32..40].copy_from_slice(&self.gas_limit.to_be_bytes());
        out[40..].copy_from_slice(self.sender_blinded.as_bytes());
        out
    }

    fn from_bytes(b: &[u8]) -> Result<Self, EnvelopeError> {
        if b.len() != VIEW_LEN {
            return Err(EnvelopeError::Decode("public view length"));
        }
        Ok(PublicView {
            tx_id_public: Hash32(b[..32].try_into().expect("32 bytes")),
            gas_limit: u64::from_be_bytes(b[32..40].try_into().expect("8 bytes")),
            sender_blinded: Hash32(b[40..].try_into().expect("32 bytes")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedTransaction {
    pub envelope_id: Hash32,
    pub commitment: Hash32,
    #[serde(with = "crate::hash::hex_bytes")]
    pub ciphertext: Vec<u8>,
    pub public_view: PublicView,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealKey {
    #[serde(with = "crate::hash::hex_array")]
    pub key: [u8; 32],
    #[serde(with = "crate::hash::hex_array")]
    pub salt: [u8; 16],
}

fn apply_keystream(key: &[u8; 32], salt: &[u8; 16], data: &mut [u8]) {
    for (j, chunk) in data.chunks_mut(32).enumerate() {
        let block = sha256_concat(&[key, salt, &(j as u64).to_be_bytes()]);
        for (b, k) in chunk.iter_mut().zip(block.0.iter()) {
            *b ^= k;
        }
    }
}

fn public_view_for(tx: &Transaction, salt: &[u8; 16]) -> PublicView {
    PublicView {
        tx_id_public: sha256_concat(&[b"tx-public", salt, &tx.sender.0, &tx.nonce.to_be_bytes()]),
        gas_limit: tx.gas_limit,
        sender_blinded: sha256_concat(&[&tx.sender.0, salt]),
    }
}

fn envelope_id(commitment: &Hash32, view: &PublicView, ciphertext: &[u8]) -> Hash32 {
    sha256_concat(&[b"envelope", commitment.as_bytes(), &view.to_bytes(), ciphertext])
}

pub fn seal(tx: &Transaction, key: [u8; 32], salt: [u8; 16]) -> EncryptedTransaction {
    let plaintext = canonical_serialize(tx);
    let commitment = sha256_concat(&[&plaintext, &salt]);
    let mut ciphertext = plaintext;
    apply_keystream(&key, &salt, &mut ciphertext);
    let public_view = public_view_for(tx, &salt);
    EncryptedTransaction {
        envelope_id: envelope_id(&commitment, &public_view, &ciphertext),
        commitment,
        ciphertext,
        public_view,
    }
}

/// Decrypts and checks the commitment and the declared public view.
pub fn open(env: &EncryptedTransaction, rk: &RevealKey) -> Result<Transaction, EnvelopeError> {
    let mut plaintext = env.ciphertext.clone();
    apply_keystream(&rk.key, &rk.salt, &mut plaintext);
    if sha256_concat(&[&plaintext, &rk.salt]) != env.commitment {
        return Err(EnvelopeError::RevealFailure("commitment mismatch"));
    }
    let tx = canonical_deserialize(&plaintext).map_err(|_| EnvelopeError::RevealFailure("undecodable plaintext"))?;
    if public_view_for(&tx, &rk.salt) != env.public_view {
        return Err(EnvelopeError::RevealFailure("public view does not match plaintext"));
    }
    Ok(tx)
}

pub fn minimal_view(env: &EncryptedTransaction) -> PublicView {
    env.public_view
}

impl EncryptedTransaction {
    /// `len || commitment || len || public_view || len || ciphertext`, lengths u32 BE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let view = self.public_view.to_bytes();
        let mut out = Vec::with_capacity(12 + 32 + VIEW_LEN + self.ciphertext.len());
        for field in [self.commitment.as_bytes().as_slice(), &view, &self.ciphertext] {
            out.extend_from_slice(&(field.len() as u32).to_be_bytes());
            out.extend_from_slice(field);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let mut rest = bytes;
        let mut fields = Vec::with_capacity(3);
        for _ in 0..3 {
            if rest.len() < 4 {
                return Err(EnvelopeError::Decode("truncated length"));
            }
            let len = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
            rest = &rest[4..];
            if rest.len() < len {
                return Err(EnvelopeError::Decode("truncated field"));
            }
            fields.push(&rest[..len]);
            rest = &rest[len..];
        }
        if !rest.is_empty() {
            return Err(EnvelopeError::Decode("trailing bytes"));
        }
        let commitment = Hash32(
            fields[0]
                .try_into()
                .map_err(|_| EnvelopeError::Decode("commitment length"))?,
        );
        let public_view = PublicView::from_bytes(fields[1])?;
        let ciphertext = fields[2].to_vec();
        Ok(EncryptedTransaction {
            envelope_id: envelope_id(&commitment, &public_view, &ciphertext),
            commitment,
            ciphertext,
            public_view,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeState {
    Sealed,
    Opened,
    Failed,
}

/// Privacy Keeper's record of held envelopes, keyed by public tx id.
#[derive(Debug, Default)]
pub struct EnvelopeRegistry {
    envelopes: HashMap<Hash32, (EncryptedTransaction, EnvelopeState)>,
}

impl EnvelopeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, env: EncryptedTransaction) {
        self.envelopes
            .entry(env.public_view.tx_id_public)
            .or_insert((env, EnvelopeState::Sealed));
    }

    pub fn get(&self, tx_id_public: &Hash32) -> Option<&EncryptedTransaction> {
        self.envelopes.get(tx_id_public).map(|(e, _)| e)
    }

    pub fn state(&self, tx_id_public: &Hash32) -> Option<EnvelopeState> {
        self.envelopes.get(tx_id_public).map(|(_, s)| *s)
    }

    /// Opens a registered envelope once. A failed reveal is final.
    pub fn open(&mut self, tx_id_public: &Hash32, rk: &RevealKey) -> Result<Transaction, EnvelopeError> {
        let (env, state) = self
            .envelopes
            .get_mut(tx_id_public)
            .ok_or(EnvelopeError::Unknown(*tx_id_public))?;
        if *state != EnvelopeState::Sealed {
            return Err(EnvelopeError::AlreadyOpened(*tx_id_public));
        }
        match open(env, rk) {
            Ok(tx) => {
                *state = EnvelopeState::Opened;
                Ok(tx)
            }
            Err(e) => {
                *state = EnvelopeState::Failed;
                tracing::debug!(envelope = %tx_id_public, "reveal failed: {e}");
                Err(e)
            }
        }
    }

    pub fn remove(&mut self, tx_id_public: &Hash32) {
        self.envelopes.remove(tx_id_public);
    }

    pub fn len(&self) -> usize {
        self.envelopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelopes.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AccountId, Direction, Payload, PoolId, SWAP_GAS};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn swap_tx(sender: AccountId, nonce: u64, direction: Direction, amount_in: u64) -> Transaction {
        Transaction::new(
            sender,
            nonce,
            SWAP_GAS,
            3,
            Payload::Swap {
                pool_id: PoolId(0),
                direction,
                amount_in,
                min_out: 0,
            },
        )
        .unwrap()
    }

    fn contains(haystack: &[u8], needle: &[u8]) -> bool {
        haystack.windows(needle.len()).any(|w| w == needle)
    }

    #[test]
    fn seal_open_round_trip() {
        let tx = swap_tx(AccountId::from_label("a"), 1, Direction::Buy, 50);
        let rk = RevealKey {
            key: [9; 32],
            salt: [4; 16],
        };
        let env = seal(&tx, rk.key, rk.salt);
        assert_eq!(open(&env, &rk).unwrap(), tx);
        assert_eq!(env.ciphertext.len(), canonical_serialize(&tx).len());
        assert_eq!(minimal_view(&env).gas_limit, tx.gas_limit);
    }

    #[test]
    fn salts_separate_commitments() {
        let tx = swap_tx(AccountId::from_label("a"), 1, Direction::Buy, 50);
        let a = seal(&tx, [1; 32], [1; 16]);
        let b = seal(&tx, [1; 32], [2; 16]);
        assert_ne!(a.commitment, b.commitment);
        assert_ne!(a.ciphertext, b.ciphertext);
    }

    #[test]
    fn ciphertext_never_contains_sender_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..1000 {
            let sender = AccountId(rng.random());
            let tx = swap_tx(sender, i, Direction::Sell, rng.random_range(1..1_000_000));
            assert!(contains(&canonical_serialize(&tx), &sender.0));
            let env = seal(&tx, rng.random(), rng.random());
            assert!(!contains(&env.ciphertext, &sender.0));
        }
    }

    #[test]
    fn flipped_key_bit_fails_reveal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..100 {
            let tx = swap_tx(AccountId(rng.random()), i, Direction::Buy, 10);
            let rk = RevealKey {
                key: rng.random(),
                salt: rng.random(),
            };
            let env = seal(&tx, rk.key, rk.salt);
            let mut bad = rk;
            bad.key[rng.random_range(0..32)] ^= 1 << rng.random_range(0..8);
            assert!(matches!(open(&env, &bad), Err(EnvelopeError::RevealFailure(_))));
            let mut bad_salt = rk;
            bad_salt.salt[rng.random_range(0..16)] ^= 1 << rng.random_range(0..8);
            assert!(open(&env, &bad_salt).is_err());
        }
    }

    #[test]
    fn tampered_ciphertext_fails_reveal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..100 {
            let tx = swap_tx(AccountId(rng.random()), i, Direction::Buy, 10);
            let rk = RevealKey {
                key: rng.random(),
                salt: rng.random(),
            };
            let mut env = seal(&tx, rk.key, rk.salt);
            let pos = rng.random_range(0..env.ciphertext.len());
            env.ciphertext[pos] ^= 1 << rng.random_range(0..8);
            assert!(matches!(open(&env, &rk), Err(EnvelopeError::RevealFailure(_))));
        }
    }

    #[test]
    fn forged_public_view_fails_reveal() {
        let tx = swap_tx(AccountId::from_label("a"), 1, Direction::Buy, 50);
        let rk = RevealKey {
            key: [9; 32],
            salt: [4; 16],
        };
        let mut env = seal(&tx, rk.key, rk.salt);
        env.public_view.gas_limit = 1;
        assert!(open(&env, &rk).is_err());
    }

    #[test]
    fn view_hides_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for i in 0..1000 {
            let sender = AccountId(rng.random());
            let amount = rng.random_range(1..1_000_000);
            let (key, salt) = (rng.random(), rng.random());
            let buy = seal(&swap_tx(sender, i, Direction::Buy, amount), key, salt);
            let sell = seal(&swap_tx(sender, i, Direction::Sell, amount), key, salt);
            assert_eq!(minimal_view(&buy).to_bytes(), minimal_view(&sell).to_bytes());
        }
    }

    #[test]
    fn views_of_one_sender_do_not_expose_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sender = AccountId(rng.random());
        let a = seal(&swap_tx(sender, 0, Direction::Buy, 5), rng.random(), rng.random());
        let b = seal(&swap_tx(sender, 1, Direction::Sell, 9), rng.random(), rng.random());
        for env in [&a, &b] {
            assert!(!contains(&minimal_view(env).to_bytes(), &sender.0));
        }
        assert_ne!(a.public_view.sender_blinded, b.public_view.sender_blinded);
    }

    #[test]
    fn byte_frequencies_indistinguishable() {
        // Two fixed plaintexts of equal length, each sealed 2000 times.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sender = AccountId::from_label("fixed");
        let txs = [
            swap_tx(sender, 0, Direction::Buy, 1),
            swap_tx(sender, 0, Direction::Sell, u64::MAX),
        ];
        let mut counts = [[0f64; 256]; 2];
        for (class, tx) in txs.iter().enumerate() {
            for _ in 0..2000 {
                let env = seal(tx, rng.random(), rng.random());
                for b in env.ciphertext {
                    counts[class][b as usize] += 1.0;
                }
            }
        }
        // 2 x 256 contingency table
        let totals = [counts[0].iter().sum::<f64>(), counts[1].iter().sum::<f64>()];
        let grand = totals[0] + totals[1];
        let mut chi2 = 0.0;
        for (a, b) in counts[0].iter().zip(&counts[1]) {
            let col = a + b;
            for (observed, total) in [(a, totals[0]), (b, totals[1])] {
                let expected = total * col / grand;
                chi2 += (observed - expected).powi(2) / expected;
            }
        }
        // chi-square critical value, df = 255, p = 0.01
        assert!(chi2 < 310.457, "chi2 {chi2}");
    }

    #[test]
    fn binary_layout_round_trip() {
        let tx = swap_tx(AccountId::from_label("b"), 3, Direction::Sell, 77);
        let env = seal(&tx, [3; 32], [8; 16]);
        let bytes = env.to_bytes();
        assert_eq!(EncryptedTransaction::from_bytes(&bytes).unwrap(), env);
        assert!(EncryptedTransaction::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn registry_opens_once() {
        let tx = swap_tx(AccountId::from_label("c"), 0, Direction::Buy, 1);
        let rk = RevealKey {
            key: [1; 32],
            salt: [1; 16],
        };
        let env = seal(&tx, rk.key, rk.salt);
        let id = env.public_view.tx_id_public;
        let mut reg = EnvelopeRegistry::new();
        reg.register(env);
        assert_eq!(reg.open(&id, &rk).unwrap(), tx);
        assert_eq!(reg.state(&id), Some(EnvelopeState::Opened));
        assert_eq!(reg.open(&id, &rk), Err(EnvelopeError::AlreadyOpened(id)));
        assert!(matches!(reg.open(&Hash32::ZERO, &rk), Err(EnvelopeError::Unknown(_))));
    }

    proptest! {
        #[test]
        fn round_trip_and_binding(tx in crate::model::tests::arb_tx(), key in any::<[u8; 32]>(), salt in any::<[u8; 16]>(), flip in 0usize..48) {
            let rk = RevealKey { key, salt };
            let env = seal(&tx, key, salt);
            prop_assert_eq!(open(&env, &rk).unwrap(), tx.clone());
            let mut bad = rk;
            if flip < 32 { bad.key[flip] ^= 0x80 } else { bad.salt[flip - 32] ^= 0x80 }
            prop_assert!(open(&env, &bad).is_err());
        }
    }
}
