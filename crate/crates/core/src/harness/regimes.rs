//! Baseline block builders: the public-mempool fee auction and the
//! profit-maximizing builder that colludes with the attacker.

use std::collections::BTreeSet;

use crate::auction::{apportion, RewardSplit, Roster};
use crate::chain::world::{SlotReport, TxLabel};
use crate::chain::{apply_block, ChainState};
use crate::config::MEV_SEARCH_MAX_TXS;
use crate::fraction;
use crate::model::{AccountId, Block, NodeId, PoolId, Role, Slot, Transaction};

use super::HarnessError;

/// Reward split of the baselines: the proposer keeps every fee.
pub fn proposer_only_split() -> RewardSplit {
    RewardSplit {
        proposer: fraction::one(),
        auction_manager: fraction::zero(),
        order_guardian: fraction::zero(),
        privacy_keeper: fraction::zero(),
    }
}

/// Indices of the transactions a fee-greedy builder includes, in inclusion
/// order: descending fee per gas, ties by ascending tx id, first fit.
pub fn greedy_fee_order(txs: &[Transaction], capacity_gas: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..txs.len()).collect();
    idx.sort_by(|&a, &b| {
        txs[b]
            .max_fee_per_gas
            .cmp(&txs[a].max_fee_per_gas)
            .then_with(|| txs[a].tx_id().cmp(&txs[b].tx_id()))
    });
    let mut used = 0u64;
    idx.retain(|&i| {
        let fits = used + txs[i].gas_limit <= capacity_gas;
        if fits {
            used += txs[i].gas_limit;
        }
        fits
    });
    idx
}

/// Combined value of `accounts` at the pool's spot price.
pub fn portfolio_value(state: &ChainState, accounts: &BTreeSet<AccountId>, pool: PoolId) -> i128 {
    let Some(p) = state.pools.get(&pool) else {
        return accounts.iter().map(|a| state.account(a).eth as i128).sum();
    };
    accounts
        .iter()
        .map(|a| p.mark_to_market(state.account(a)) as i128)
        .sum()
}

/// Attacker gain from executing `txs` in order, with the before and after
/// holdings both marked at the post-block spot price.
pub fn block_profit(state: &ChainState, txs: &[Transaction], attackers: &BTreeSet<AccountId>, pool: PoolId) -> i128 {
    let mut after = state.clone();
    apply_block(&mut after, txs);
    let before_value = match after.pools.get(&pool) {
        Some(p) => attackers
            .iter()
            .map(|a| p.mark_to_market(state.account(a)) as i128)
            .sum(),
        None => portfolio_value(state, attackers, pool),
    };
    portfolio_value(&after, attackers, pool) - before_value
}

/// Lexicographically next permutation; false once `perm` was the last.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Exhaustive search for the order maximizing the attackers' block profit.
/// Returns a permutation of `0..txs.len()`; ties go to the
/// lexicographically smallest permutation.
pub fn mev_optimal_order(
    txs: &[Transaction],
    state: &ChainState,
    attackers: &BTreeSet<AccountId>,
    pool: PoolId,
) -> Result<Vec<usize>, HarnessError> {
    if txs.len() as u64 > MEV_SEARCH_MAX_TXS {
        return Err(HarnessError::SearchBound(txs.len()));
    }
    // only the touched accounts and the pools matter
    let mut local = ChainState {
        pools: state.pools.clone(),
        ..ChainState::default()
    };
    for tx in txs {
        local.accounts.insert(tx.sender, state.account(&tx.sender));
        if let crate::model::Payload::Transfer { to, .. } = &tx.payload {
            local.accounts.insert(*to, state.account(to));
        }
    }
    for a in attackers {
        local.accounts.insert(*a, state.account(a));
    }

    let mut perm: Vec<usize> = (0..txs.len()).collect();
    let mut best = perm.clone();
    let mut best_profit: Option<i128> = None;
    let mut ordered = Vec::with_capacity(txs.len());
    loop {
        ordered.clear();
        ordered.extend(perm.iter().map(|&i| txs[i].clone()));
        let profit = block_profit(&local, &ordered, attackers, pool);
        if best_profit.is_none_or(|b| profit > b) {
            best_profit = Some(profit);
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}

/// Everything a baseline builder sees for one slot.
pub struct BaselineSlot<'a> {
    pub slot: Slot,
    pub txs: &'a [Transaction],
    pub labels: &'a [TxLabel],
    pub roster: &'a Roster,
    pub attackers: &'a BTreeSet<AccountId>,
    pub pool: PoolId,
}

/// Builds, executes and rewards one baseline block in place.
pub fn run_baseline_slot(
    state: &mut ChainState,
    input: BaselineSlot<'_>,
    mev: bool,
) -> Result<SlotReport, HarnessError> {
    let selected = greedy_fee_order(input.txs, input.slot.capacity_gas);
    let order: Vec<usize> = if mev {
        let chosen: Vec<Transaction> = selected.iter().map(|&i| input.txs[i].clone()).collect();
        mev_optimal_order(&chosen, state, input.attackers, input.pool)?
            .into_iter()
            .map(|k| selected[k])
            .collect()
    } else {
        selected
    };
    let proposer_idx = input.roster.active_index(Role::Proposer, input.slot.index).unwrap_or(0);
    let proposer = input
        .roster
        .proposers
        .get(proposer_idx)
        .cloned()
        .unwrap_or_else(|| NodeId("proposer".into()));
    let txs: Vec<Transaction> = order.iter().map(|&i| input.txs[i].clone()).collect();
    let labels = order.iter().map(|&i| input.labels[i]).collect();
    let block =
        Block::new(input.slot, txs, None, None, proposer.clone()).map_err(|e| HarnessError::Internal(e.to_string()))?;
    let receipts = apply_block(state, &block.ordered_txs);
    state.height += 1;
    let fees_collected = receipts.iter().map(|r| r.fee_paid).sum();
    let ledger = apportion(input.slot.index, fees_collected, &proposer_only_split(), input.roster)
        .map_err(|e| HarnessError::Internal(e.to_string()))?;
    for e in &ledger {
        state
            .credit_reward(&e.node, e.amount)
            .map_err(|e| HarnessError::Internal(e.to_string()))?;
    }
    Ok(SlotReport {
        slot: input.slot,
        proposer,
        manager: None,
        guardian: None,
        submissions: Vec::new(),
        selection: None,
        ordering: None,
        reveals: Vec::new(),
        block,
        labels,
        receipts,
        fees_collected,
        ledger,
        height: state.height,
        fault: None,
    })
}
