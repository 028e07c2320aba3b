//! MEV and fairness metrics, computed slot by slot from what a trace records.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::chain::world::TxLabel;
use crate::chain::{ChainState, ExecutionReceipt, Pool, TxStatus};
use crate::hash::Hash32;
use crate::model::{AccountId, Payload, PoolId, Transaction};

use super::regimes::portfolio_value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MevMetrics {
    /// Change in the attackers' combined holdings, both ends marked at the
    /// final spot price. Fees are already reflected in the balances.
    pub attacker_profit: i128,
    /// Mean of `(expected_out - actual_out) / expected_out` over included
    /// victim swaps, `expected_out` quoted against the pre-slot pool.
    pub victim_slippage: Option<f64>,
    /// Mean over slots of Spearman's rho between fee per gas and position.
    pub fee_position_spearman: Option<f64>,
    /// Mean over slots of |rho|.
    pub fee_position_abs_spearman: Option<f64>,
    /// Share of attacked victims whose attack transactions all landed on the
    /// profitable side (front before, back after).
    pub favorable_order_rate: Option<f64>,
    pub dropped_tx_count: u64,
    pub slots: u64,
    pub included_tx_count: u64,
    pub reverted_tx_count: u64,
    pub attacked_victim_count: u64,
    pub spearman_slot_count: u64,
}

impl MevMetrics {
    /// Named numeric fields, for aggregation and CSV.
    pub fn fields(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("attacker_profit", Some(self.attacker_profit as f64)),
            ("victim_slippage", self.victim_slippage),
            ("fee_position_spearman", self.fee_position_spearman),
            ("fee_position_abs_spearman", self.fee_position_abs_spearman),
            ("favorable_order_rate", self.favorable_order_rate),
            ("dropped_tx_count", Some(self.dropped_tx_count as f64)),
            ("included_tx_count", Some(self.included_tx_count as f64)),
            ("reverted_tx_count", Some(self.reverted_tx_count as f64)),
        ]
    }
}

/// Ranks with ties averaged, 1-based.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho (Pearson correlation of average ranks). `None` when either
/// side is constant or there are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// One slot as the metrics see it.
pub struct SlotObservation<'a> {
    /// The pool before the slot executed.
    pub pre_pool: Option<Pool>,
    /// Block transactions in order.
    pub txs: &'a [Transaction],
    pub labels: &'a [TxLabel],
    /// Receipts of `txs`, followed by dropped receipts.
    pub receipts: &'a [ExecutionReceipt],
}

#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    pool: PoolId,
    initial: ChainState,
    attackers: BTreeSet<AccountId>,
    slots: u64,
    included: u64,
    reverted: u64,
    dropped: u64,
    attacked: u64,
    favorable: u64,
    slippage_sum: f64,
    slippage_n: u64,
    rho_sum: f64,
    rho_abs_sum: f64,
    rho_n: u64,
}

fn mean(sum: f64, n: u64) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

impl MetricsAccumulator {
    pub fn new(initial: &ChainState, pool: PoolId) -> Self {
        MetricsAccumulator {
            pool,
            initial: initial.clone(),
            attackers: BTreeSet::new(),
            slots: 0,
            included: 0,
            reverted: 0,
            dropped: 0,
            attacked: 0,
            favorable: 0,
            slippage_sum: 0.0,
            slippage_n: 0,
            rho_sum: 0.0,
            rho_abs_sum: 0.0,
            rho_n: 0,
        }
    }

    pub fn observe(&mut self, obs: SlotObservation<'_>) {
        self.slots += 1;
        let n = obs.txs.len();
        self.included += n as u64;
        self.dropped += obs.receipts[n..]
            .iter()
            .filter(|r| r.status == TxStatus::Dropped)
            .count() as u64;
        self.reverted += obs.receipts[..n]
            .iter()
            .filter(|r| matches!(r.status, TxStatus::Reverted { .. }))
            .count() as u64;

        let mut position: HashMap<Hash32, usize> = HashMap::with_capacity(n);
        for (i, (tx, label)) in obs.txs.iter().zip(obs.labels).enumerate() {
            position.insert(tx.tx_id(), i);
            if label.is_attacker() {
                self.attackers.insert(tx.sender);
            }
        }

        // victim outcomes and attack placement
        let mut fronts: HashMap<Hash32, Vec<usize>> = HashMap::new();
        let mut backs: HashMap<Hash32, Vec<usize>> = HashMap::new();
        for (i, label) in obs.labels.iter().enumerate() {
            match label {
                TxLabel::Front { victim } => fronts.entry(*victim).or_default().push(i),
                TxLabel::Back { victim } => backs.entry(*victim).or_default().push(i),
                _ => {}
            }
        }
        for (i, (tx, label)) in obs.txs.iter().zip(obs.labels).enumerate() {
            if *label != TxLabel::Victim {
                continue;
            }
            if let (
                Some(pool),
                Payload::Swap {
                    direction, amount_in, ..
                },
            ) = (obs.pre_pool, &tx.payload)
            {
                let expected = pool.quote(*direction, *amount_in).unwrap_or(0);
                if expected > 0 {
                    let actual = obs.receipts[i].amount_out.unwrap_or(0);
                    self.slippage_sum += (expected as f64 - actual as f64) / expected as f64;
                    self.slippage_n += 1;
                }
            }
            let id = tx.tx_id();
            let f = fronts.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            let b = backs.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            if f.is_empty() && b.is_empty() {
                continue;
            }
            self.attacked += 1;
            if f.iter().all(|&p| p < i) && b.iter().all(|&p| p > i) {
                self.favorable += 1;
            }
        }

        let fees: Vec<f64> = obs.txs.iter().map(|t| t.max_fee_per_gas as f64).collect();
        let pos: Vec<f64> = (0..n).map(|i| i as f64).collect();
        if let Some(rho) = spearman(&fees, &pos) {
            self.rho_sum += rho;
            self.rho_abs_sum += rho.abs();
            self.rho_n += 1;
        }
    }

    pub fn finish(self, final_state: &ChainState) -> MevMetrics {
        let end = portfolio_value(final_state, &self.attackers, self.pool);
        let start = match final_state.pools.get(&self.pool) {
            Some(p) => self
                .attackers
                .iter()
                .map(|a| p.mark_to_market(self.initial.account(a)) as i128)
                .sum(),
            None => portfolio_value(&self.initial, &self.attackers, self.pool),
        };
        MevMetrics {
            attacker_profit: end - start,
            victim_slippage: mean(self.slippage_sum, self.slippage_n),
            fee_position_spearman: mean(self.rho_sum, self.rho_n),
            fee_position_abs_spearman: mean(self.rho_abs_sum, self.rho_n),
            favorable_order_rate: (self.attacked > 0).then(|| self.favorable as f64 / self.attacked as f64),
            dropped_tx_count: self.dropped,
            slots: self.slots,
            included_tx_count: self.included,
            reverted_tx_count: self.reverted,
            attacked_victim_count: self.attacked,
            spearman_slot_count: self.rho_n,
        }
    }
}
