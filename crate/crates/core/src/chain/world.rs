//! The FairFlow slot pipeline: sealed submissions and bids, auction close,
//! VRF winner selection, VRF ordering, reveal, execution, block
//! finalization and reward distribution.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{apply_block, ChainState, ExecutionReceipt};
use crate::auction::{
    apportion, AuctionBook, AuctionError, AuctionResult, BidOutcome, RejectReason, RewardSplit, Roster, ScoringWeights,
};
use crate::envelope::{EncryptedTransaction, EnvelopeRegistry, RevealKey};
use crate::fraction::{self, Rational};
use crate::hash::{sha256_concat, Hash32};
use crate::model::{Bid, Block, NodeId, Role, Slot, Transaction};
use crate::ordering::{order_transactions, verify_ordering, OrderingRecord};
use crate::vrf::{VrfError, VrfKeyChain};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Vrf(#[from] VrfError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub capacity_gas: u64,
    pub weights: ScoringWeights,
    #[serde(with = "fraction::serde_rational")]
    pub lottery_fraction: Rational,
    pub reward_split: RewardSplit,
    pub roster: Roster,
    /// Number of slots the node key chains are provisioned for.
    pub rounds: u64,
}

/// Harness annotation of a transaction's role in an attack scenario. Carried
/// through the pipeline untouched; the protocol never reads it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TxLabel {
    Victim,
    /// Attacker trade meant to land before `victim` (plaintext tx id).
    Front {
        victim: Hash32,
    },
    /// Attacker trade meant to land after `victim`.
    Back {
        victim: Hash32,
    },
    Filler,
}

impl TxLabel {
    pub fn is_attacker(&self) -> bool {
        matches!(self, TxLabel::Front { .. } | TxLabel::Back { .. })
    }
}

/// A user's sealed transaction with its bid. The reveal key is handed to the
/// Privacy Keeper; `None` models a user who never releases it.
#[derive(Clone, Debug)]
pub struct Submission {
    pub envelope: EncryptedTransaction,
    pub bid: Bid,
    pub reveal_key: Option<RevealKey>,
    pub label: TxLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub envelope: EncryptedTransaction,
    pub bid: Bid,
    pub outcome: BidOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealRecord {
    pub tx_id_public: Hash32,
    pub key: Option<RevealKey>,
    pub opened: bool,
}

/// Node acting in a role for one slot, with that slot's VRF public key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Officer {
    pub node: NodeId,
    pub pk: Hash32,
}

/// Deliberate misbehaviour for exercising the liveness fallback.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultInjection {
    CorruptSelectionProof,
    CorruptOrderingProof,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot: Slot,
    pub proposer: NodeId,
    pub manager: Option<Officer>,
    pub guardian: Option<Officer>,
    pub submissions: Vec<SubmissionRecord>,
    pub selection: Option<AuctionResult>,
    pub ordering: Option<OrderingRecord>,
    pub reveals: Vec<RevealRecord>,
    pub block: Block,
    /// One label per transaction in `block.ordered_txs`.
    pub labels: Vec<TxLabel>,
    /// Block transactions in order, then one `dropped` receipt per winner
    /// whose envelope could not be opened.
    pub receipts: Vec<ExecutionReceipt>,
    pub fees_collected: u64,
    pub ledger: Vec<crate::auction::LedgerEntry>,
    pub height: u64,
    pub fault: Option<String>,
}

impl SlotReport {
    pub fn dropped_count(&self) -> usize {
        self.receipts.len() - self.block.ordered_txs.len()
    }
}

pub struct World {
    config: WorldConfig,
    state: ChainState,
    keychains: BTreeMap<NodeId, VrfKeyChain>,
    registry: EnvelopeRegistry,
    book: AuctionBook,
    next_slot: u64,
    faults: HashMap<u64, FaultInjection>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("next_slot", &self.next_slot)
            .field("height", &self.state.height)
            .finish_non_exhaustive()
    }
}

/// Key-chain seed of a node, derived from the world seed.
pub fn node_seed(world_seed: &[u8; 32], node: &NodeId) -> [u8; 32] {
    sha256_concat(&[b"node-key", world_seed, node.0.as_bytes()]).0
}

impl World {
    pub fn new(config: WorldConfig, genesis: ChainState, seed: [u8; 32]) -> Result<Self, WorldError> {
        let cfg_err = |e: AuctionError| WorldError::Config(e.to_string());
        config.weights.validate().map_err(cfg_err)?;
        config.reward_split.validate().map_err(cfg_err)?;
        if !fraction::in_unit_interval(&config.lottery_fraction) {
            return Err(WorldError::Config("lottery fraction must lie in [0, 1]".into()));
        }
        for role in [Role::Proposer, Role::AuctionManager, Role::OrderGuardian] {
            if config.roster.members(role).is_empty() {
                return Err(WorldError::Config(format!("roster has no {role:?} nodes")));
            }
        }
        let mut keychains = BTreeMap::new();
        for node in config
            .roster
            .auction_managers
            .iter()
            .chain(&config.roster.order_guardians)
        {
            keychains.insert(node.clone(), VrfKeyChain::new(node_seed(&seed, node), config.rounds)?);
        }
        let next_slot = genesis.height;
        Ok(World {
            config,
            state: genesis,
            keychains,
            registry: EnvelopeRegistry::new(),
            book: AuctionBook::new(),
            next_slot,
            faults: HashMap::new(),
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn next_slot(&self) -> Slot {
        Slot::new(self.next_slot, self.config.capacity_gas)
    }

    pub fn inject_fault(&mut self, slot_index: u64, fault: FaultInjection) {
        self.faults.insert(slot_index, fault);
    }

    fn active(&self, role: Role, slot: u64) -> NodeId {
        let roster = &self.config.roster;
        let i = roster.active_index(role, slot).expect("validated non-empty role");
        roster.members(role)[i].clone()
    }

    fn officer(&self, role: Role, slot: u64) -> Option<Officer> {
        let node = self.active(role, slot);
        let pk = self.keychains.get(&node)?.public_key(slot)?;
        Some(Officer { node, pk })
    }

    /// Runs one slot of the pipeline over `submissions`.
    pub fn run_slot(&mut self, submissions: Vec<Submission>) -> SlotReport {
        let slot = self.next_slot();
        let proposer = self.active(Role::Proposer, slot.index);
        let mut report = SlotReport {
            slot,
            proposer: proposer.clone(),
            manager: self.officer(Role::AuctionManager, slot.index),
            guardian: self.officer(Role::OrderGuardian, slot.index),
            submissions: Vec::with_capacity(submissions.len()),
            selection: None,
            ordering: None,
            reveals: Vec::new(),
            block: Block::empty(slot, proposer),
            labels: Vec::new(),
            receipts: Vec::new(),
            fees_collected: 0,
            ledger: Vec::new(),
            height: 0,
            fault: None,
        };

        let mut registered = Vec::new();
        if let Err(fault) = self.produce_block(submissions, &mut report, &mut registered) {
            tracing::warn!(slot = slot.index, %fault, "slot aborted; proposing an empty block");
            report.fault = Some(fault);
            report.selection = None;
            report.ordering = None;
            report.reveals.clear();
            report.block = Block::empty(slot, report.proposer.clone());
            report.labels.clear();
            report.receipts.clear();
        }

        // finalize, reward, post-process
        self.state.height += 1;
        report.height = self.state.height;
        report.fees_collected = report.receipts.iter().map(|r| r.fee_paid).sum();
        report.ledger = apportion(
            slot.index,
            report.fees_collected,
            &self.config.reward_split,
            &self.config.roster,
        )
        .expect("reward split validated at construction");
        for entry in &report.ledger {
            self.state
                .credit_reward(&entry.node, entry.amount)
                .expect("apportioned rewards sum to the collected fees");
        }
        for id in registered {
            self.registry.remove(&id);
        }
        self.book.prune_before(slot.index + 1);
        self.next_slot += 1;
        report
    }

    fn produce_block(
        &mut self,
        submissions: Vec<Submission>,
        report: &mut SlotReport,
        registered: &mut Vec<Hash32>,
    ) -> Result<(), String> {
        let slot = report.slot;
        let manager = report.manager.clone().ok_or("no auction-manager key for this slot")?;
        let guardian = report.guardian.clone().ok_or("no order-guardian key for this slot")?;
        let fault = self.faults.get(&slot.index).copied();

        // Steps 1-2: sealed submissions and bids.
        let mut custody: HashMap<Hash32, (Option<RevealKey>, TxLabel)> = HashMap::new();
        let round = self
            .book
            .open_round(
                slot,
                self.config.weights.clone(),
                self.config.lottery_fraction.clone(),
                manager.pk,
            )
            .map_err(|e| e.to_string())?;
        for sub in submissions {
            let id = sub.envelope.public_view.tx_id_public;
            let outcome = if sub.bid.tx_id != id || sub.bid.gas_declared != sub.envelope.public_view.gas_limit {
                BidOutcome::Rejected(RejectReason::EnvelopeMismatch)
            } else if custody.contains_key(&id) {
                BidOutcome::Rejected(RejectReason::Duplicate)
            } else {
                round.submit_bid(sub.bid.clone())
            };
            if outcome == BidOutcome::Accepted {
                custody.insert(id, (sub.reveal_key, sub.label));
                self.registry.register(sub.envelope.clone());
                registered.push(id);
            }
            report.submissions.push(SubmissionRecord {
                envelope: sub.envelope,
                bid: sub.bid,
                outcome,
            });
        }

        // Step 3: close and select.
        round.close().map_err(|e| e.to_string())?;
        let manager_chain = self.keychains.get_mut(&manager.node).ok_or("unknown auction manager")?;
        let (out, mut proof) = manager_chain
            .evaluate(slot.index, &slot.alpha())
            .map_err(|e| format!("auction manager VRF: {e}"))?;
        if fault == Some(FaultInjection::CorruptSelectionProof) {
            proof.revealed_secret.0[0] ^= 1;
        }
        let round = self.book.round_mut(slot.index).expect("opened above");
        let result = round
            .decide(&out, &proof)
            .map_err(|e| format!("winner selection: {e}"))?;
        let winners: Vec<EncryptedTransaction> = result
            .winners
            .iter()
            .map(|bid_id| {
                let tx_id = round.bid(bid_id).expect("winner is a submitted bid").tx_id;
                self.registry.get(&tx_id).expect("winner envelope registered").clone()
            })
            .collect();
        report.selection = Some(result);

        // Step 4: verifiable ordering, checked by the proposer.
        let guardian_chain = self.keychains.get_mut(&guardian.node).ok_or("unknown order guardian")?;
        let mut record = order_transactions(&winners, guardian_chain, &slot).map_err(|e| format!("ordering: {e}"))?;
        if fault == Some(FaultInjection::CorruptOrderingProof) {
            record.proof.revealed_secret.0[0] ^= 1;
        }
        if !verify_ordering(&record, &guardian.pk) {
            return Err("ordering proof rejected by proposer".into());
        }
        let ordered = record.ordered_tx_ids();
        report.ordering = Some(record);

        // Step 5: reveal in block order.
        let mut txs: Vec<Transaction> = Vec::with_capacity(ordered.len());
        let mut dropped = Vec::new();
        for id in ordered {
            let (key, label) = custody.get(&id).cloned().expect("winner in custody");
            let opened = match &key {
                Some(k) => self.registry.open(&id, k).ok(),
                None => None,
            };
            report.reveals.push(RevealRecord {
                tx_id_public: id,
                key,
                opened: opened.is_some(),
            });
            match opened {
                Some(tx) => {
                    txs.push(tx);
                    report.labels.push(label);
                }
                None => dropped.push(ExecutionReceipt::dropped(id)),
            }
        }
        let mut seen = HashSet::new();
        if !txs.iter().all(|t| seen.insert(t.tx_id())) {
            return Err("revealed block contains a transaction twice".into());
        }

        // Steps 6-7: execute and form the block.
        let block = Block::new(
            slot,
            txs,
            Some(proof),
            Some(report.ordering.as_ref().unwrap().proof),
            report.proposer.clone(),
        )
        .map_err(|e| e.to_string())?;
        report.receipts = apply_block(&mut self.state, &block.ordered_txs);
        report.receipts.extend(dropped);
        report.block = block;
        Ok(())
    }
}
