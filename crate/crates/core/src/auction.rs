//! Block-space auction run by the Auction Manager role.
//!
//! A round collects public bids for one slot. Winners are chosen in two
//! tranches: a score tranche packs bids greedily by score up to
//! `(1 - lambda) * capacity`, then a lottery tranche fills the remaining
//! capacity by weighted sampling without replacement (Efraimidis-Spirakis
//! keys `u^(1/score)`), with every random draw derived from the round's VRF
//! output. Fees are split across node roles with largest-remainder
//! apportionment so that the ledger always sums to the fee total.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fraction::{self, Rational};
use crate::hash::{sha256_concat, Hash32};
use crate::model::{Bid, NodeId, Role, Slot};
use crate::vrf::{vrf_verify, VrfOutput, VrfProof};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuctionError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("selection proof does not verify against the manager key")]
    ProofRejected,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringWeights {
    #[serde(with = "fraction::serde_rational")]
    pub w_fee: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub w_urgency: Rational,
}

impl ScoringWeights {
    pub fn new(w_fee: Rational, w_urgency: Rational) -> Result<Self, AuctionError> {
        let w = ScoringWeights { w_fee, w_urgency };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        if self.w_fee.is_negative() || self.w_urgency.is_negative() {
            return Err(AuctionError::InvalidConfig(
                "scoring weights must be non-negative".into(),
            ));
        }
        if self.w_fee.is_zero() && self.w_urgency.is_zero() {
            return Err(AuctionError::InvalidConfig(
                "scoring weights cannot both be zero".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ScoringWeights {
    fn default() -> Self {
        ScoringWeights {
            w_fee: fraction::one(),
            w_urgency: fraction::zero(),
        }
    }
}

/// `w_fee * fee_offered / gas_declared + w_urgency * urgency`, exactly.
pub fn score_bid(bid: &Bid, weights: &ScoringWeights) -> Rational {
    let rate = Rational::new(BigInt::from(bid.fee_offered), BigInt::from(bid.gas_declared));
    &weights.w_fee * rate + &weights.w_urgency * fraction::int(u64::from(bid.urgency))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Open,
    Closed,
    Decided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Late,
    Duplicate,
    Oversize,
    /// The bid's tx id or declared gas disagrees with its envelope.
    EnvelopeMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BidOutcome {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionResult {
    pub slot: u64,
    /// Score tranche first, then lottery tranche.
    pub winners: Vec<Hash32>,
    pub score_tranche_len: usize,
    pub selection_output: VrfOutput,
    pub selection_proof: VrfProof,
    pub total_fees: u64,
    pub gas_used: u64,
}

#[derive(Clone, Debug)]
pub struct AuctionRound {
    pub slot: Slot,
    status: RoundStatus,
    bids: BTreeMap<Hash32, Bid>,
    pub weights: ScoringWeights,
    pub lottery_fraction: Rational,
    /// Auction Manager's published VRF key for this slot.
    pub manager_pk: Hash32,
    result: Option<AuctionResult>,
}

impl AuctionRound {
    pub fn status(&self) -> RoundStatus {
        self.status
    }

    pub fn bids(&self) -> impl Iterator<Item = &Bid> {
        self.bids.values()
    }

    pub fn bid(&self, bid_id: &Hash32) -> Option<&Bid> {
        self.bids.get(bid_id)
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn result(&self) -> Option<&AuctionResult> {
        self.result.as_ref()
    }

    pub fn submit_bid(&mut self, bid: Bid) -> BidOutcome {
        if self.status != RoundStatus::Open {
            return BidOutcome::Rejected(RejectReason::Late);
        }
        if bid.gas_declared > self.slot.capacity_gas {
            return BidOutcome::Rejected(RejectReason::Oversize);
        }
        if self.bids.contains_key(&bid.bid_id()) {
            return BidOutcome::Rejected(RejectReason::Duplicate);
        }
        self.bids.insert(bid.bid_id(), bid);
        BidOutcome::Accepted
    }

    pub fn close(&mut self) -> Result<(), AuctionError> {
        match self.status {
            RoundStatus::Open => {
                self.status = RoundStatus::Closed;
                Ok(())
            }
            s => Err(AuctionError::InvalidState(format!("cannot close a {s:?} round"))),
        }
    }

    /// Runs [`select_winners`] and records the result on the round.
    pub fn decide(&mut self, out: &VrfOutput, proof: &VrfProof) -> Result<AuctionResult, AuctionError> {
        let result = select_winners(self, out, proof)?;
        self.status = RoundStatus::Decided;
        self.result = Some(result.clone());
        Ok(result)
    }
}

/// Rounds by slot index. At most one round per slot.
#[derive(Debug, Default)]
pub struct AuctionBook {
    rounds: BTreeMap<u64, AuctionRound>,
}

impl AuctionBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_round(
        &mut self,
        slot: Slot,
        weights: ScoringWeights,
        lottery_fraction: Rational,
        manager_pk: Hash32,
    ) -> Result<&mut AuctionRound, AuctionError> {
        if self.rounds.contains_key(&slot.index) {
            return Err(AuctionError::InvalidState(format!(
                "round for slot {} already exists",
                slot.index
            )));
        }
        weights.validate()?;
        if !fraction::in_unit_interval(&lottery_fraction) {
            return Err(AuctionError::InvalidConfig(
                "lottery fraction must lie in [0, 1]".into(),
            ));
        }
        let round = AuctionRound {
            slot,
            status: RoundStatus::Open,
            bids: BTreeMap::new(),
            weights,
            lottery_fraction,
            manager_pk,
            result: None,
        };
        Ok(self.rounds.entry(slot.index).or_insert(round))
    }

    pub fn round(&self, slot_index: u64) -> Option<&AuctionRound> {
        self.rounds.get(&slot_index)
    }

    pub fn round_mut(&mut self, slot_index: u64) -> Option<&mut AuctionRound> {
        self.rounds.get_mut(&slot_index)
    }

    /// Drops decided rounds older than `slot_index`.
    pub fn prune_before(&mut self, slot_index: u64) {
        self.rounds
            .retain(|idx, r| *idx >= slot_index || r.status != RoundStatus::Decided);
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }
}

/// Verifies the proof and picks winners. Pure: the same closed round and
/// proof always produce the same result.
pub fn select_winners(round: &AuctionRound, out: &VrfOutput, proof: &VrfProof) -> Result<AuctionResult, AuctionError> {
    if round.status == RoundStatus::Open {
        return Err(AuctionError::InvalidState("round is still open".into()));
    }
    if !vrf_verify(&round.manager_pk, &round.slot.alpha(), out, proof) {
        return Err(AuctionError::ProofRejected);
    }
    let bids: Vec<&Bid> = round.bids.values().collect();
    let sel = compute_selection(&round.slot, &bids, &round.weights, &round.lottery_fraction, &out.beta);
    let mut total_fees = 0u64;
    let mut gas_used = 0u64;
    for id in &sel.winners {
        let b = &round.bids[id];
        total_fees += b.fee_offered;
        gas_used += b.gas_declared;
    }
    Ok(AuctionResult {
        slot: round.slot.index,
        winners: sel.winners,
        score_tranche_len: sel.score_tranche_len,
        selection_output: *out,
        selection_proof: *proof,
        total_fees,
        gas_used,
    })
}

pub struct Selection {
    pub winners: Vec<Hash32>,
    pub score_tranche_len: usize,
}

fn tie_key(beta: &Hash32, bid_id: &Hash32) -> Hash32 {
    sha256_concat(&[beta.as_bytes(), bid_id.as_bytes()])
}

/// Lottery uniform in (0, 1) from the top 53 bits of `H(beta || "lot" || bid_id)`.
pub fn lottery_uniform(beta: &Hash32, bid_id: &Hash32) -> f64 {
    let h = sha256_concat(&[beta.as_bytes(), b"lot", bid_id.as_bytes()]);
    ((h.prefix_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Efraimidis-Spirakis key in log form, `ln(u) / w`. Larger is better.
/// `libm` keeps the logarithm bit-identical across platforms.
fn lottery_key(u: f64, score: &Rational) -> f64 {
    libm::log(u) / fraction::to_f64(score)
}

/// Core two-tranche selection over an arbitrary bid list.
pub fn compute_selection(
    slot: &Slot,
    bids: &[&Bid],
    weights: &ScoringWeights,
    lottery_fraction: &Rational,
    beta: &Hash32,
) -> Selection {
    let capacity = slot.capacity_gas;
    let score_budget = fraction::floor_u128(&((fraction::one() - lottery_fraction) * fraction::int(capacity))) as u64;

    let mut scored: Vec<(Rational, Hash32, &Bid)> = bids
        .iter()
        .map(|b| (score_bid(b, weights), tie_key(beta, &b.bid_id()), *b))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut winners = Vec::new();
    let mut taken_txs = std::collections::HashSet::new();
    let mut used = 0u64;
    let mut remaining = Vec::new();
    for (score, _, bid) in scored {
        if used + bid.gas_declared <= score_budget && !taken_txs.contains(&bid.tx_id) {
            used += bid.gas_declared;
            taken_txs.insert(bid.tx_id);
            winners.push(bid.bid_id());
        } else {
            remaining.push((score, bid));
        }
    }
    let score_tranche_len = winners.len();

    let mut lottery: Vec<(f64, &Bid)> = remaining
        .into_iter()
        .filter(|(score, _)| score.is_positive())
        .map(|(score, bid)| (lottery_key(lottery_uniform(beta, &bid.bid_id()), &score), bid))
        .collect();
    lottery.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.bid_id().cmp(&b.1.bid_id()))
    });
    for (_, bid) in lottery {
        if used + bid.gas_declared <= capacity && !taken_txs.contains(&bid.tx_id) {
            used += bid.gas_declared;
            taken_txs.insert(bid.tx_id);
            winners.push(bid.bid_id());
        }
    }

    Selection {
        winners,
        score_tranche_len,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSplit {
    #[serde(with = "fraction::serde_rational")]
    pub proposer: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub auction_manager: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub order_guardian: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub privacy_keeper: Rational,
}

impl Default for RewardSplit {
    fn default() -> Self {
        RewardSplit {
            proposer: fraction::ratio(70, 100),
            auction_manager: fraction::ratio(15, 100),
            order_guardian: fraction::ratio(10, 100),
            privacy_keeper: fraction::ratio(5, 100),
        }
    }
}

impl RewardSplit {
    pub fn share(&self, role: Role) -> &Rational {
        match role {
            Role::Proposer => &self.proposer,
            Role::AuctionManager => &self.auction_manager,
            Role::OrderGuardian => &self.order_guardian,
            Role::PrivacyKeeper => &self.privacy_keeper,
        }
    }

    pub fn validate(&self) -> Result<(), AuctionError> {
        let mut sum = fraction::zero();
        for role in Role::ALL {
            let s = self.share(role);
            if s.is_negative() {
                return Err(AuctionError::InvalidConfig(format!("{role:?} share is negative")));
            }
            sum += s;
        }
        if sum != fraction::one() {
            return Err(AuctionError::InvalidConfig(format!(
                "reward shares sum to {}, not 1",
                fraction::format(&sum)
            )));
        }
        Ok(())
    }
}

/// Node ids per role. Active nodes rotate round-robin by slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub proposers: Vec<NodeId>,
    pub auction_managers: Vec<NodeId>,
    pub order_guardians: Vec<NodeId>,
    pub privacy_keepers: Vec<NodeId>,
}

impl Roster {
    pub fn with_sizes(
        proposers: usize,
        auction_managers: usize,
        order_guardians: usize,
        privacy_keepers: usize,
    ) -> Self {
        let names = |prefix: &str, n: usize| (0..n).map(|i| NodeId(format!("{prefix}-{i}"))).collect();
        Roster {
            proposers: names("proposer", proposers),
            auction_managers: names("auction-manager", auction_managers),
            order_guardians: names("order-guardian", order_guardians),
            privacy_keepers: names("privacy-keeper", privacy_keepers),
        }
    }

    pub fn members(&self, role: Role) -> &[NodeId] {
        match role {
            Role::Proposer => &self.proposers,
            Role::AuctionManager => &self.auction_managers,
            Role::OrderGuardian => &self.order_guardians,
            Role::PrivacyKeeper => &self.privacy_keepers,
        }
    }

    /// Index of the node of `role` on duty in `slot`.
    pub fn active_index(&self, role: Role, slot: u64) -> Option<usize> {
        let n = self.members(role).len();
        (n > 0).then(|| (slot % n as u64) as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub slot: u64,
    pub node: NodeId,
    pub role: Role,
    pub amount: u64,
}

/// Splits `total` across every node of every role with a positive share.
/// Each node's quota is `total * share(role) / |role|`; floors are paid
/// first and leftover units go to the largest fractional remainders, ties in
/// roster order.
pub fn apportion(
    slot: u64,
    total: u64,
    split: &RewardSplit,
    roster: &Roster,
) -> Result<Vec<LedgerEntry>, AuctionError> {
    split.validate()?;
    let mut quotas: Vec<(Role, &NodeId, Rational)> = Vec::new();
    for role in Role::ALL {
        let share = split.share(role);
        if share.is_zero() {
            continue;
        }
        let members = roster.members(role);
        if members.is_empty() {
            return Err(AuctionError::InvalidConfig(format!(
                "no {role:?} nodes but share is positive"
            )));
        }
        let per_node = share * fraction::int(total) / fraction::int(members.len() as u64);
        for node in members {
            quotas.push((role, node, per_node.clone()));
        }
    }

    let mut amounts: Vec<u64> = quotas.iter().map(|(_, _, q)| fraction::floor_u128(q) as u64).collect();
    let assigned: u64 = amounts.iter().sum();
    let mut leftover = total - assigned;
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = &quotas[a].2 - quotas[a].2.floor();
        let fb = &quotas[b].2 - quotas[b].2.floor();
        fb.cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if leftover == 0 {
            break;
        }
        amounts[i] += 1;
        leftover -= 1;
    }

    Ok(quotas
        .into_iter()
        .zip(amounts)
        .map(|((role, node, _), amount)| LedgerEntry {
            slot,
            node: node.clone(),
            role,
            amount,
        })
        .collect())
}

/// Distributes the result's announced fee total.
pub fn distribute_rewards(
    result: &AuctionResult,
    split: &RewardSplit,
    roster: &Roster,
) -> Result<Vec<LedgerEntry>, AuctionError> {
    apportion(result.slot, result.total_fees, split, roster)
}
