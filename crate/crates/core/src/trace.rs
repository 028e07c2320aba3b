//! JSONL event trace: one object per protocol event, enough to re-verify
//! every proof, replay every slot and recompute every metric.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{
    apportion, select_winners, AuctionBook, AuctionResult, BidOutcome, LedgerEntry, RejectReason, RewardSplit, Roster,
    ScoringWeights,
};
use crate::chain::world::{Officer, RevealRecord, SlotReport, SubmissionRecord, TxLabel};
use crate::chain::{apply_block, ChainState, ExecutionReceipt, TxStatus};
use crate::config::Regime;
use crate::envelope::{open, EncryptedTransaction};
use crate::fraction::{self, Rational};
use crate::harness::metrics::{MetricsAccumulator, MevMetrics, SlotObservation};
use crate::hash::Hash32;
use crate::model::{PoolId, Slot, Transaction};
use crate::ordering::{derive_permutation, ordering_alpha, OrderingRecord};
use crate::vrf::vrf_verify;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloseEvent {
    pub regime: Regime,
    pub slot: Slot,
    pub proposer: crate::model::NodeId,
    pub manager: Option<Officer>,
    pub guardian: Option<Officer>,
    pub weights: ScoringWeights,
    #[serde(with = "fraction::serde_rational")]
    pub lottery_fraction: Rational,
    pub reward_split: RewardSplit,
    pub roster: Roster,
    pub pool: PoolId,
    pub pre_state: ChainState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealEvent {
    pub entries: Vec<RevealRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteEvent {
    pub txs: Vec<Transaction>,
    pub labels: Vec<TxLabel>,
    pub receipts: Vec<ExecutionReceipt>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizeEvent {
    pub height: u64,
    pub gas_used: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub fees_collected: u64,
    pub entries: Vec<LedgerEntry>,
    /// State after the slot, rewards paid.
    pub post_state: ChainState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Bid(SubmissionRecord),
    Close(Box<CloseEvent>),
    Select(AuctionResult),
    Order(OrderingRecord),
    Reveal(RevealEvent),
    Execute(ExecuteEvent),
    Finalize(FinalizeEvent),
    Reward(Box<RewardEvent>),
    Fault(FaultEvent),
}

impl EventBody {
    pub fn phase(&self) -> &'static str {
        match self {
            EventBody::Bid(_) => "bid",
            EventBody::Close(_) => "close",
            EventBody::Select(_) => "select",
            EventBody::Order(_) => "order",
            EventBody::Reveal(_) => "reveal",
            EventBody::Execute(_) => "execute",
            EventBody::Finalize(_) => "finalize",
            EventBody::Reward(_) => "reward",
            EventBody::Fault(_) => "fault",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub slot: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Slot-independent parameters recorded in every close event.
#[derive(Clone, Debug)]
pub struct TraceContext {
    pub regime: Regime,
    pub weights: ScoringWeights,
    pub lottery_fraction: Rational,
    pub reward_split: RewardSplit,
    pub roster: Roster,
    pub pool: PoolId,
}

/// Events of one slot, in order.
pub fn slot_events(
    ctx: &TraceContext,
    pre_state: &ChainState,
    post_state: &ChainState,
    report: &SlotReport,
) -> Vec<TraceEvent> {
    let s = report.slot.index;
    let ev = |body| TraceEvent { slot: s, body };
    let mut out: Vec<TraceEvent> = report
        .submissions
        .iter()
        .cloned()
        .map(|r| ev(EventBody::Bid(r)))
        .collect();
    out.push(ev(EventBody::Close(Box::new(CloseEvent {
        regime: ctx.regime,
        slot: report.slot,
        proposer: report.proposer.clone(),
        manager: report.manager.clone(),
        guardian: report.guardian.clone(),
        weights: ctx.weights.clone(),
        lottery_fraction: ctx.lottery_fraction.clone(),
        reward_split: ctx.reward_split.clone(),
        roster: ctx.roster.clone(),
        pool: ctx.pool,
        pre_state: pre_state.clone(),
    }))));
    if let Some(sel) = &report.selection {
        out.push(ev(EventBody::Select(sel.clone())));
    }
    if let Some(ord) = &report.ordering {
        out.push(ev(EventBody::Order(ord.clone())));
    }
    if report.ordering.is_some() {
        out.push(ev(EventBody::Reveal(RevealEvent {
            entries: report.reveals.clone(),
        })));
    }
    if let Some(reason) = &report.fault {
        out.push(ev(EventBody::Fault(FaultEvent { reason: reason.clone() })));
    }
    out.push(ev(EventBody::Execute(ExecuteEvent {
        txs: report.block.ordered_txs.clone(),
        labels: report.labels.clone(),
        receipts: report.receipts.clone(),
    })));
    out.push(ev(EventBody::Finalize(FinalizeEvent {
        height: report.height,
        gas_used: report.block.gas_used(),
    })));
    out.push(ev(EventBody::Reward(Box::new(RewardEvent {
        fees_collected: report.fees_collected,
        entries: report.ledger.clone(),
        post_state: post_state.clone(),
    }))));
    out
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("incomplete trace: {0}")]
    Truncated(String),
}

pub fn write_jsonl<W: Write>(events: &[TraceEvent], mut w: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn to_jsonl(events: &[TraceEvent]) -> String {
    let mut buf = Vec::new();
    write_jsonl(events, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Recomputes the metrics of a run from its trace alone.
pub fn compute_metrics(events: &[TraceEvent]) -> Result<MevMetrics, TraceError> {
    let mut acc: Option<MetricsAccumulator> = None;
    let mut pre_pool = None;
    let mut final_state: Option<&ChainState> = None;
    let mut open_slot = false;
    for e in events {
        match &e.body {
            EventBody::Close(c) => {
                if open_slot {
                    return Err(TraceError::Truncated(format!(
                        "slot before {} has no reward event",
                        e.slot
                    )));
                }
                open_slot = true;
                pre_pool = c.pre_state.pools.get(&c.pool).copied();
                acc.get_or_insert_with(|| MetricsAccumulator::new(&c.pre_state, c.pool));
            }
            EventBody::Execute(x) => {
                let a = acc
                    .as_mut()
                    .ok_or_else(|| TraceError::Truncated("execute before any close".into()))?;
                if x.labels.len() != x.txs.len() || x.receipts.len() < x.txs.len() {
                    return Err(TraceError::Truncated(format!(
                        "slot {} execute event is inconsistent",
                        e.slot
                    )));
                }
                a.observe(SlotObservation {
                    pre_pool,
                    txs: &x.txs,
                    labels: &x.labels,
                    receipts: &x.receipts,
                });
            }
            EventBody::Reward(r) => {
                open_slot = false;
                final_state = Some(&r.post_state);
            }
            _ => {}
        }
    }
    match (acc, final_state) {
        (Some(a), Some(f)) if !open_slot => Ok(a.finish(f)),
        _ => Err(TraceError::Truncated("trace does not end with a completed slot".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Structure,
    Continuity,
    Proof,
    Selection,
    Ordering,
    Reveal,
    Execution,
    Capacity,
    RewardConservation,
    ValueConservation,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Check::Structure => "trace structure",
            Check::Continuity => "state continuity",
            Check::Proof => "VRF proof verification",
            Check::Selection => "winner selection replay",
            Check::Ordering => "ordering verification",
            Check::Reveal => "envelope reveal",
            Check::Execution => "execution replay",
            Check::Capacity => "block capacity",
            Check::RewardConservation => "reward conservation",
            Check::ValueConservation => "value conservation",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("event {index}: {check} failed: {detail}")]
pub struct Violation {
    pub index: usize,
    pub check: Check,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub events: usize,
    pub slots: u64,
    pub proofs_verified: u64,
    pub faults: u64,
}

struct SlotCursor<'a> {
    close: &'a CloseEvent,
    bids: Vec<&'a SubmissionRecord>,
    selection: Option<&'a AuctionResult>,
    ordering: Option<&'a OrderingRecord>,
    revealed: Option<Vec<Transaction>>,
    dropped: Vec<Hash32>,
    fault: bool,
    receipts_fee: Option<u64>,
    finalized: bool,
}

/// Re-verifies a trace: every proof, selection replay, ordering, reveals,
/// re-execution, capacity, reward conservation and value conservation.
/// Stops at the first violation.
pub fn verify_trace(events: &[TraceEvent]) -> Result<VerifySummary, Violation> {
    let fail = |index: usize, check: Check, detail: String| Violation { index, check, detail };
    let mut summary = VerifySummary {
        events: events.len(),
        ..Default::default()
    };
    if events.is_empty() {
        return Err(fail(0, Check::Structure, "trace is empty".into()));
    }
    let mut state: Option<ChainState> = None;
    let mut pending_bids: Vec<&SubmissionRecord> = Vec::new();
    let mut cur: Option<SlotCursor> = None;
    let mut expected_slot: Option<u64> = None;

    for (i, e) in events.iter().enumerate() {
        match &e.body {
            EventBody::Bid(b) => {
                if cur.is_some() {
                    return Err(fail(i, Check::Structure, "bid after the auction closed".into()));
                }
                pending_bids.push(b);
            }
            EventBody::Close(c) => {
                if cur.is_some() {
                    return Err(fail(i, Check::Structure, "previous slot has no reward event".into()));
                }
                if e.slot != c.slot.index || expected_slot.is_some_and(|s| s != e.slot) {
                    return Err(fail(i, Check::Continuity, format!("unexpected slot {}", e.slot)));
                }
                match &state {
                    None => state = Some(c.pre_state.clone()),
                    Some(s) if *s != c.pre_state => {
                        return Err(fail(
                            i,
                            Check::Continuity,
                            "pre-state differs from replayed state".into(),
                        ))
                    }
                    _ => {}
                }
                if c.regime != Regime::Fairflow && !pending_bids.is_empty() {
                    return Err(fail(i, Check::Structure, "baseline slot with sealed bids".into()));
                }
                cur = Some(SlotCursor {
                    close: c,
                    bids: std::mem::take(&mut pending_bids),
                    selection: None,
                    ordering: None,
                    revealed: None,
                    dropped: Vec::new(),
                    fault: false,
                    receipts_fee: None,
                    finalized: false,
                });
            }
            EventBody::Select(r) => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| fail(i, Check::Structure, "select outside a slot".into()))?;
                let manager = c
                    .close
                    .manager
                    .as_ref()
                    .ok_or_else(|| fail(i, Check::Structure, "select without an auction manager".into()))?;
                if r.slot != c.close.slot.index
                    || !vrf_verify(
                        &manager.pk,
                        &c.close.slot.alpha(),
                        &r.selection_output,
                        &r.selection_proof,
                    )
                {
                    return Err(fail(i, Check::Proof, "selection proof does not verify".into()));
                }
                summary.proofs_verified += 1;
                let replayed = replay_selection(c, manager.pk).map_err(|d| fail(i, Check::Selection, d))?;
                let replayed = select_winners(&replayed, &r.selection_output, &r.selection_proof)
                    .map_err(|err| fail(i, Check::Selection, err.to_string()))?;
                if replayed != *r {
                    return Err(fail(i, Check::Selection, "announced winners differ from replay".into()));
                }
                c.selection = Some(r);
            }
            EventBody::Order(o) => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| fail(i, Check::Structure, "order outside a slot".into()))?;
                let guardian = c
                    .close
                    .guardian
                    .as_ref()
                    .ok_or_else(|| fail(i, Check::Structure, "order without an order guardian".into()))?;
                let sel = c
                    .selection
                    .ok_or_else(|| fail(i, Check::Structure, "order before select".into()))?;
                let alpha = ordering_alpha(o.slot_index, &o.input_tx_ids);
                if o.slot_index != c.close.slot.index || !vrf_verify(&guardian.pk, &alpha, &o.output, &o.proof) {
                    return Err(fail(i, Check::Proof, "ordering proof does not verify".into()));
                }
                summary.proofs_verified += 1;
                let by_bid: HashMap<Hash32, Hash32> = c.bids.iter().map(|b| (b.bid.bid_id(), b.bid.tx_id)).collect();
                let mut winners: Vec<Hash32> = sel.winners.iter().filter_map(|w| by_bid.get(w).copied()).collect();
                winners.sort();
                if winners != o.input_tx_ids {
                    return Err(fail(i, Check::Ordering, "ordering input is not the winner set".into()));
                }
                if derive_permutation(&o.output, o.input_tx_ids.len()) != o.permutation {
                    return Err(fail(
                        i,
                        Check::Ordering,
                        "permutation does not match the VRF output".into(),
                    ));
                }
                c.ordering = Some(o);
            }
            EventBody::Reveal(rv) => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| fail(i, Check::Structure, "reveal outside a slot".into()))?;
                let o = c
                    .ordering
                    .ok_or_else(|| fail(i, Check::Structure, "reveal before order".into()))?;
                let ids: Vec<Hash32> = rv.entries.iter().map(|r| r.tx_id_public).collect();
                if ids != o.ordered_tx_ids() {
                    return Err(fail(i, Check::Reveal, "reveals do not follow the block order".into()));
                }
                let envelopes: HashMap<Hash32, &EncryptedTransaction> = c
                    .bids
                    .iter()
                    .filter(|b| b.outcome == BidOutcome::Accepted)
                    .map(|b| (b.envelope.public_view.tx_id_public, &b.envelope))
                    .collect();
                let mut txs = Vec::new();
                for r in &rv.entries {
                    let env = envelopes
                        .get(&r.tx_id_public)
                        .ok_or_else(|| fail(i, Check::Reveal, format!("no envelope for {}", r.tx_id_public)))?;
                    let opened = r.key.as_ref().and_then(|k| open(env, k).ok());
                    if opened.is_some() != r.opened {
                        return Err(fail(
                            i,
                            Check::Reveal,
                            format!("reveal outcome of {} is misreported", r.tx_id_public),
                        ));
                    }
                    match opened {
                        Some(tx) => txs.push(tx),
                        None => c.dropped.push(r.tx_id_public),
                    }
                }
                c.revealed = Some(txs);
            }
            EventBody::Fault(_) => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| fail(i, Check::Structure, "fault outside a slot".into()))?;
                c.fault = true;
                summary.faults += 1;
            }
            EventBody::Execute(x) => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| fail(i, Check::Structure, "execute outside a slot".into()))?;
                let st = state.as_mut().expect("set at close");
                if x.labels.len() != x.txs.len() {
                    return Err(fail(i, Check::Structure, "labels do not match transactions".into()));
                }
                if c.close.regime == Regime::Fairflow {
                    if c.fault {
                        if !x.txs.is_empty() || !x.receipts.is_empty() {
                            return Err(fail(
                                i,
                                Check::Execution,
                                "aborted slot must produce an empty block".into(),
                            ));
                        }
                    } else {
                        let revealed = c
                            .revealed
                            .as_ref()
                            .ok_or_else(|| fail(i, Check::Structure, "execute before reveal".into()))?;
                        if *revealed != x.txs {
                            return Err(fail(
                                i,
                                Check::Execution,
                                "block differs from the revealed order".into(),
                            ));
                        }
                    }
                } else if c.fault {
                    return Err(fail(i, Check::Structure, "baseline slots cannot fault".into()));
                }
                let gas: u64 = x.txs.iter().map(|t| t.gas_limit).sum();
                if gas > c.close.slot.capacity_gas {
                    return Err(fail(
                        i,
                        Check::Capacity,
                        format!("{gas} gas exceeds capacity {}", c.close.slot.capacity_gas),
                    ));
                }
                let mut seen = BTreeSet::new();
                if !x.txs.iter().all(|t| seen.insert(t.tx_id())) {
                    return Err(fail(i, Check::Execution, "duplicate transaction in block".into()));
                }
                let n = x.txs.len();
                if x.receipts.len() != n + c.dropped.len() {
                    return Err(fail(i, Check::Execution, "receipt count mismatch".into()));
                }
                let receipts = apply_block(st, &x.txs);
                if receipts[..] != x.receipts[..n] {
                    return Err(fail(i, Check::Execution, "receipts differ from re-execution".into()));
                }
                let dropped_ok = x.receipts[n..]
                    .iter()
                    .zip(&c.dropped)
                    .all(|(r, id)| *r == ExecutionReceipt::dropped(*id));
                if !dropped_ok {
                    return Err(fail(i, Check::Execution, "dropped receipts misreported".into()));
                }
                debug_assert!(x.receipts[n..].iter().all(|r| r.status == TxStatus::Dropped));
                c.receipts_fee = Some(x.receipts.iter().map(|r| r.fee_paid).sum());
            }
            EventBody::Finalize(f) => {
                let c = cur
                    .as_mut()
                    .ok_or_else(|| fail(i, Check::Structure, "finalize outside a slot".into()))?;
                if c.receipts_fee.is_none() {
                    return Err(fail(i, Check::Structure, "finalize before execute".into()));
                }
                let st = state.as_mut().expect("set at close");
                st.height += 1;
                if f.height != st.height {
                    return Err(fail(
                        i,
                        Check::Continuity,
                        format!("height {} but replay gives {}", f.height, st.height),
                    ));
                }
                c.finalized = true;
            }
            EventBody::Reward(r) => {
                let c = cur
                    .take()
                    .ok_or_else(|| fail(i, Check::Structure, "reward outside a slot".into()))?;
                if !c.finalized {
                    return Err(fail(i, Check::Structure, "reward before finalize".into()));
                }
                let fees = c.receipts_fee.expect("finalize requires execute");
                if r.fees_collected != fees {
                    return Err(fail(
                        i,
                        Check::RewardConservation,
                        format!("announced fees {} but receipts pay {fees}", r.fees_collected),
                    ));
                }
                let paid: u128 = r.entries.iter().map(|e| e.amount as u128).sum();
                if paid != fees as u128 {
                    return Err(fail(
                        i,
                        Check::RewardConservation,
                        format!("ledger pays {paid} of {fees} collected"),
                    ));
                }
                let expected = apportion(c.close.slot.index, fees, &c.close.reward_split, &c.close.roster)
                    .map_err(|e| fail(i, Check::RewardConservation, e.to_string()))?;
                if expected != r.entries {
                    return Err(fail(
                        i,
                        Check::RewardConservation,
                        "ledger differs from the reward split".into(),
                    ));
                }
                let st = state.as_mut().expect("set at close");
                for entry in &r.entries {
                    st.credit_reward(&entry.node, entry.amount)
                        .map_err(|e| fail(i, Check::RewardConservation, e.to_string()))?;
                }
                if st.total_eth() != c.close.pre_state.total_eth()
                    || st.total_token() != c.close.pre_state.total_token()
                {
                    return Err(fail(
                        i,
                        Check::ValueConservation,
                        "total value changed across the slot".into(),
                    ));
                }
                if *st != r.post_state {
                    return Err(fail(i, Check::Execution, "post-state differs from replay".into()));
                }
                summary.slots += 1;
                expected_slot = Some(c.close.slot.index + 1);
            }
        }
    }
    if cur.is_some() || !pending_bids.is_empty() {
        return Err(fail(events.len(), Check::Structure, "trace ends inside a slot".into()));
    }
    Ok(summary)
}

/// Rebuilds the closed auction round from the slot's bid events, checking
/// each recorded admission outcome.
fn replay_selection(c: &SlotCursor<'_>, manager_pk: Hash32) -> Result<crate::auction::AuctionRound, String> {
    let mut book = AuctionBook::new();
    let round = book
        .open_round(
            c.close.slot,
            c.close.weights.clone(),
            c.close.lottery_fraction.clone(),
            manager_pk,
        )
        .map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    for b in &c.bids {
        let id = b.envelope.public_view.tx_id_public;
        let outcome = if b.bid.tx_id != id || b.bid.gas_declared != b.envelope.public_view.gas_limit {
            BidOutcome::Rejected(RejectReason::EnvelopeMismatch)
        } else if seen.contains(&id) {
            BidOutcome::Rejected(RejectReason::Duplicate)
        } else {
            round.submit_bid(b.bid.clone())
        };
        if outcome == BidOutcome::Accepted {
            seen.insert(id);
        }
        if outcome != b.outcome {
            return Err(format!("bid {} admission replays as {outcome:?}", b.bid.bid_id()));
        }
    }
    round.close().map_err(|e| e.to_string())?;
    Ok(book.round(c.close.slot.index).expect("opened above").clone())
}
