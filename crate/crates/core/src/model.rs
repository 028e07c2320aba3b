//! Value types shared across the pipeline and their canonical binary encoding.
//!
//! The encoding is fixed-field-order and length-prefixed so that it is
//! injective; a transaction's id is the SHA-256 of that encoding.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{sha256, sha256_concat, Hash32};
use crate::vrf::VrfProof;

pub const SWAP_GAS: u64 = 100_000;
pub const TRANSFER_GAS: u64 = 21_000;
pub const NOOP_GAS: u64 = 21_000;
pub const MAX_URGENCY: u8 = 10;

const TX_ENCODING_VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("gas_limit must be positive")]
    ZeroGas,
    #[error("swap amount_in must be positive")]
    ZeroSwapAmount,
    #[error("urgency {0} outside [0, {MAX_URGENCY}]")]
    Urgency(u8),
    #[error("gas_declared must be positive")]
    ZeroDeclaredGas,
    #[error("tx_id does not match the transaction contents")]
    IdMismatch,
    #[error("bid_id does not match the bid contents")]
    BidIdMismatch,
    #[error("malformed encoding: {0}")]
    Decode(&'static str),
    #[error("block uses {used} gas, capacity is {capacity}")]
    OverCapacity { used: u64, capacity: u64 },
    #[error("duplicate transaction {0} in block")]
    DuplicateTx(Hash32),
}

/// 20-byte account identifier.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(#[serde(with = "crate::hash::hex_array")] pub [u8; 20]);

impl AccountId {
    /// Deterministic id for a human-readable label such as `"victim-3"`.
    pub fn from_label(label: &str) -> Self {
        let h = sha256_concat(&[b"account", label.as_bytes()]);
        let mut out = [0u8; 20];
        out.copy_from_slice(&h.0[..20]);
        AccountId(out)
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccountId({})", &hex::encode(self.0)[..12])
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoolId(pub u32);

/// Identifier of a protocol node (proposer, auction manager, ...).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub String);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Node roles that share in block rewards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Proposer,
    AuctionManager,
    OrderGuardian,
    PrivacyKeeper,
}

impl Role {
    pub const ALL: [Role; 4] = [
        Role::Proposer,
        Role::AuctionManager,
        Role::OrderGuardian,
        Role::PrivacyKeeper,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// ETH in, token out.
    Buy,
    /// Token in, ETH out.
    Sell,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Swap {
        pool_id: PoolId,
        direction: Direction,
        amount_in: u64,
        min_out: u64,
    },
    Transfer {
        to: AccountId,
        amount: u64,
    },
    Noop,
}

impl Payload {
    /// Flat gas charge for executing this payload.
    pub fn gas_cost(&self) -> u64 {
        match self {
            Payload::Swap { .. } => SWAP_GAS,
            Payload::Transfer { .. } => TRANSFER_GAS,
            Payload::Noop => NOOP_GAS,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Payload::Swap { .. } => 1,
            Payload::Transfer { .. } => 2,
            Payload::Noop => 3,
        }
    }
}

/// A user transaction. `tx_id` is always the hash of the other fields.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTransaction")]
pub struct Transaction {
    tx_id: Hash32,
    pub sender: AccountId,
    pub nonce: u64,
    pub gas_limit: u64,
    pub max_fee_per_gas: u64,
    pub payload: Payload,
}

#[derive(Deserialize)]
struct RawTransaction {
    tx_id: Hash32,
    sender: AccountId,
    nonce: u64,
    gas_limit: u64,
    max_fee_per_gas: u64,
    payload: Payload,
}

impl TryFrom<RawTransaction> for Transaction {
    type Error = ModelError;

    fn try_from(raw: RawTransaction) -> Result<Self, Self::Error> {
        let tx = Transaction::new(raw.sender, raw.nonce, raw.gas_limit, raw.max_fee_per_gas, raw.payload)?;
        if tx.tx_id != raw.tx_id {
            return Err(ModelError::IdMismatch);
        }
        Ok(tx)
    }
}

impl Transaction {
    pub fn new(
        sender: AccountId,
        nonce: u64,
        gas_limit: u64,
        max_fee_per_gas: u64,
        payload: Payload,
    ) -> Result<Self, ModelError> {
        if gas_limit == 0 {
            return Err(ModelError::ZeroGas);
        }
        if let Payload::Swap { amount_in: 0, .. } = payload {
            return Err(ModelError::ZeroSwapAmount);
        }
        let mut tx = Transaction {
            tx_id: Hash32::ZERO,
            sender,
            nonce,
            gas_limit,
            max_fee_per_gas,
            payload,
        };
        tx.tx_id = tx_hash(&tx);
        Ok(tx)
    }

    /// Zero sender and nonce, the payload's own gas cost, zero fee.
    pub fn default_noop() -> Self {
        Transaction::new(AccountId::default(), 0, NOOP_GAS, 0, Payload::Noop).expect("valid defaults")
    }

    pub fn tx_id(&self) -> Hash32 {
        self.tx_id
    }

    /// Upper bound on the fee this transaction can be charged.
    pub fn max_fee(&self) -> u64 {
        self.gas_limit.saturating_mul(self.max_fee_per_gas)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

/// Fixed-order, length-prefixed encoding of every field except `tx_id`.
pub fn canonical_serialize(tx: &Transaction) -> Vec<u8> {
    let mut body = Vec::with_capacity(48);
    match &tx.payload {
        Payload::Swap {
            pool_id,
            direction,
            amount_in,
            min_out,
        } => {
            put_u32(&mut body, pool_id.0);
            body.push(match direction {
                Direction::Buy => 0,
                Direction::Sell => 1,
            });
            put_u64(&mut body, *amount_in);
            put_u64(&mut body, *min_out);
        }
        Payload::Transfer { to, amount } => {
            body.extend_from_slice(&to.0);
            put_u64(&mut body, *amount);
        }
        Payload::Noop => {}
    }

    let mut out = Vec::with_capacity(1 + 20 + 24 + 5 + body.len());
    out.push(TX_ENCODING_VERSION);
    out.extend_from_slice(&tx.sender.0);
    put_u64(&mut out, tx.nonce);
    put_u64(&mut out, tx.gas_limit);
    put_u64(&mut out, tx.max_fee_per_gas);
    out.push(tx.payload.tag());
    put_u32(&mut out, body.len() as u32);
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Decode("truncated"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn account(&mut self) -> Result<AccountId, ModelError> {
        Ok(AccountId(self.take(20)?.try_into().expect("20 bytes")))
    }
}

/// Inverse of [`canonical_serialize`]. Rejects trailing bytes.
pub fn canonical_deserialize(bytes: &[u8]) -> Result<Transaction, ModelError> {
    let mut r = Reader { buf: bytes };
    if r.u8()? != TX_ENCODING_VERSION {
        return Err(ModelError::Decode("unknown version"));
    }
    let sender = r.account()?;
    let nonce = r.u64()?;
    let gas_limit = r.u64()?;
    let max_fee_per_gas = r.u64()?;
    let tag = r.u8()?;
    let len = r.u32()? as usize;
    let body = r.take(len)?;
    if !r.buf.is_empty() {
        return Err(ModelError::Decode("trailing bytes"));
    }

    let mut b = Reader { buf: body };
    let payload = match tag {
        1 => {
            let pool_id = PoolId(b.u32()?);
            let direction = match b.u8()? {
                0 => Direction::Buy,
                1 => Direction::Sell,
                _ => return Err(ModelError::Decode("bad direction")),
            };
            Payload::Swap {
                pool_id,
                direction,
                amount_in: b.u64()?,
                min_out: b.u64()?,
            }
        }
        2 => Payload::Transfer {
            to: b.account()?,
            amount: b.u64()?,
        },
        3 => Payload::Noop,
        _ => return Err(ModelError::Decode("bad payload tag")),
    };
    if !b.buf.is_empty() {
        return Err(ModelError::Decode("payload length mismatch"));
    }
    Transaction::new(sender, nonce, gas_limit, max_fee_per_gas, payload)
}

pub fn tx_hash(tx: &Transaction) -> Hash32 {
    sha256(&canonical_serialize(tx))
}

/// A public request for block space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBid")]
pub struct Bid {
    bid_id: Hash32,
    /// Public id of the sealed transaction this bid pays for.
    pub tx_id: Hash32,
    pub bidder: AccountId,
    pub fee_offered: u64,
    pub urgency: u8,
    pub gas_declared: u64,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawBid {
    bid_id: Hash32,
    tx_id: Hash32,
    bidder: AccountId,
    fee_offered: u64,
    urgency: u8,
    gas_declared: u64,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

impl TryFrom<RawBid> for Bid {
    type Error = ModelError;

    fn try_from(raw: RawBid) -> Result<Self, Self::Error> {
        let bid = Bid::new(
            raw.tx_id,
            raw.bidder,
            raw.fee_offered,
            raw.urgency,
            raw.gas_declared,
            raw.metadata,
        )?;
        if bid.bid_id != raw.bid_id {
            return Err(ModelError::BidIdMismatch);
        }
        Ok(bid)
    }
}

impl Bid {
    pub fn new(
        tx_id: Hash32,
        bidder: AccountId,
        fee_offered: u64,
        urgency: u8,
        gas_declared: u64,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, ModelError> {
        if urgency > MAX_URGENCY {
            return Err(ModelError::Urgency(urgency));
        }
        if gas_declared == 0 {
            return Err(ModelError::ZeroDeclaredGas);
        }
        let mut enc = Vec::with_capacity(96);
        enc.extend_from_slice(b"bid");
        enc.extend_from_slice(&tx_id.0);
        enc.extend_from_slice(&bidder.0);
        put_u64(&mut enc, fee_offered);
        enc.push(urgency);
        put_u64(&mut enc, gas_declared);
        put_u32(&mut enc, metadata.len() as u32);
        for (k, v) in &metadata {
            put_u32(&mut enc, k.len() as u32);
            enc.extend_from_slice(k.as_bytes());
            put_u32(&mut enc, v.len() as u32);
            enc.extend_from_slice(v.as_bytes());
        }
        Ok(Bid {
            bid_id: sha256(&enc),
            tx_id,
            bidder,
            fee_offered,
            urgency,
            gas_declared,
            metadata,
        })
    }

    pub fn bid_id(&self) -> Hash32 {
        self.bid_id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub index: u64,
    pub capacity_gas: u64,
}

impl Slot {
    pub fn new(index: u64, capacity_gas: u64) -> Self {
        Slot { index, capacity_gas }
    }

    /// Slot index as the 8-byte big-endian VRF input.
    pub fn alpha(&self) -> [u8; 8] {
        self.index.to_be_bytes()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub slot: Slot,
    pub ordered_txs: Vec<Transaction>,
    /// Absent only on the liveness fallback after a proof fault.
    pub selection_proof: Option<VrfProof>,
    pub ordering_proof: Option<VrfProof>,
    pub proposer: NodeId,
}

impl Block {
    pub fn new(
        slot: Slot,
        ordered_txs: Vec<Transaction>,
        selection_proof: Option<VrfProof>,
        ordering_proof: Option<VrfProof>,
        proposer: NodeId,
    ) -> Result<Self, ModelError> {
        let used: u64 = ordered_txs.iter().map(|t| t.gas_limit).sum();
        if used > slot.capacity_gas {
            return Err(ModelError::OverCapacity {
                used,
                capacity: slot.capacity_gas,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for tx in &ordered_txs {
            if !seen.insert(tx.tx_id()) {
                return Err(ModelError::DuplicateTx(tx.tx_id()));
            }
        }
        Ok(Block {
            slot,
            ordered_txs,
            selection_proof,
            ordering_proof,
            proposer,
        })
    }

    /// Empty block used when a slot aborts.
    pub fn empty(slot: Slot, proposer: NodeId) -> Self {
        Block {
            slot,
            ordered_txs: Vec::new(),
            selection_proof: None,
            ordering_proof: None,
            proposer,
        }
    }

    pub fn gas_used(&self) -> u64 {
        self.ordered_txs.iter().map(|t| t.gas_limit).sum()
    }
}
