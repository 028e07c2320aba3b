//! Verifiable random ordering of auction winners (the Order Guardian role).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::EncryptedTransaction;
use crate::hash::{sha256, Hash32};
use crate::model::Slot;
use crate::vrf::{vrf_verify, VrfError, VrfKeyChain, VrfOutput, VrfProof, VrfStream};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OrderingError {
    #[error(transparent)]
    Vrf(#[from] VrfError),
    #[error("winner set contains {0} twice")]
    DuplicateInput(Hash32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingRecord {
    pub slot_index: u64,
    /// Ascending public tx ids.
    pub input_tx_ids: Vec<Hash32>,
    /// Position `i` of the block holds `input_tx_ids[permutation[i]]`.
    pub permutation: Vec<u32>,
    pub output: VrfOutput,
    pub proof: VrfProof,
}

impl OrderingRecord {
    pub fn ordered_tx_ids(&self) -> Vec<Hash32> {
        self.permutation
            .iter()
            .map(|&i| self.input_tx_ids[i as usize])
            .collect()
    }
}

/// VRF input binding the slot and the exact input set.
pub fn ordering_alpha(slot_index: u64, sorted_ids: &[Hash32]) -> Vec<u8> {
    let concat: Vec<u8> = sorted_ids.iter().flat_map(|h| h.0).collect();
    let mut alpha = slot_index.to_be_bytes().to_vec();
    alpha.extend_from_slice(sha256(&concat).as_bytes());
    alpha
}

/// Fisher-Yates over `[0, n)` driven by the VRF output's byte stream.
pub fn derive_permutation(out: &VrfOutput, n: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    let mut stream = VrfStream::new(out);
    for i in (1..n).rev() {
        let j = stream.uniform_below(i as u64 + 1).expect("bound is positive") as usize;
        perm.swap(i, j);
    }
    perm
}

pub fn order_transactions(
    winners: &[EncryptedTransaction],
    chain: &mut VrfKeyChain,
    slot: &Slot,
) -> Result<OrderingRecord, OrderingError> {
    let mut ids: Vec<Hash32> = winners.iter().map(|e| e.public_view.tx_id_public).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(OrderingError::DuplicateInput(w[0]));
    }
    let alpha = ordering_alpha(slot.index, &ids);
    let (output, proof) = chain.evaluate(slot.index, &alpha)?;
    let permutation = derive_permutation(&output, ids.len());
    Ok(OrderingRecord {
        slot_index: slot.index,
        input_tx_ids: ids,
        permutation,
        output,
        proof,
    })
}

/// Third-party audit: the proof opens `guardian_pk` on the bound input and
/// the permutation is the one that output determines.
pub fn verify_ordering(record: &OrderingRecord, guardian_pk: &Hash32) -> bool {
    if record.input_tx_ids.windows(2).any(|w| w[0] >= w[1]) {
        return false;
    }
    let alpha = ordering_alpha(record.slot_index, &record.input_tx_ids);
    vrf_verify(guardian_pk, &alpha, &record.output, &record.proof)
        && derive_permutation(&record.output, record.input_tx_ids.len()) == record.permutation
}
