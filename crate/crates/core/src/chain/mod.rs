//! Simulated chain: account balances, constant-product pools, transaction
//! execution and the end-to-end slot pipeline ([`world`]).

pub mod world;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hash::Hash32;
use crate::model::{AccountId, Direction, NodeId, Payload, PoolId, Transaction};

pub const PPM: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub eth: u64,
    pub token: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub reserve_eth: u64,
    pub reserve_token: u64,
    pub fee_ppm: u32,
}

impl Pool {
    /// Output of swapping `amount_in` through the pool, floor-rounded in the
    /// pool's favor. `None` on arithmetic overflow of the reserves.
    pub fn quote(&self, direction: Direction, amount_in: u64) -> Option<u64> {
        let (r_in, r_out) = match direction {
            Direction::Buy => (self.reserve_eth, self.reserve_token),
            Direction::Sell => (self.reserve_token, self.reserve_eth),
        };
        r_in.checked_add(amount_in)?;
        let in_net = amount_in as u128 * PPM.saturating_sub(self.fee_ppm as u64) as u128 / PPM as u128;
        let out = r_out as u128 * in_net / (r_in as u128 + in_net);
        Some(out as u64)
    }

    /// `reserve_eth * reserve_token`.
    pub fn k(&self) -> u128 {
        self.reserve_eth as u128 * self.reserve_token as u128
    }

    /// `eth + token * reserve_eth / reserve_token`, floored: a holding valued
    /// in ETH at the pool's spot price.
    pub fn mark_to_market(&self, holding: Account) -> u128 {
        holding.eth as u128 + holding.token as u128 * self.reserve_eth as u128 / self.reserve_token as u128
    }
}

/// World state. Fees paid by transactions collect in `fee_pot` until the
/// slot's rewards move them into `rewards`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub accounts: BTreeMap<AccountId, Account>,
    #[serde(with = "pool_list")]
    pub pools: BTreeMap<PoolId, Pool>,
    pub height: u64,
    pub fee_pot: u64,
    pub rewards: BTreeMap<NodeId, u64>,
}

impl ChainState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn account(&self, id: &AccountId) -> Account {
        self.accounts.get(id).copied().unwrap_or_default()
    }

    /// Total ETH-denominated value: balances, pool reserves, pending fees and
    /// paid rewards. Constant under execution and reward distribution.
    pub fn total_eth(&self) -> u128 {
        let balances: u128 = self.accounts.values().map(|a| a.eth as u128).sum();
        let reserves: u128 = self.pools.values().map(|p| p.reserve_eth as u128).sum();
        let rewards: u128 = self.rewards.values().map(|&r| r as u128).sum();
        balances + reserves + self.fee_pot as u128 + rewards
    }

    pub fn total_token(&self) -> u128 {
        let balances: u128 = self.accounts.values().map(|a| a.token as u128).sum();
        let reserves: u128 = self.pools.values().map(|p| p.reserve_token as u128).sum();
        balances + reserves
    }

    /// Moves `amount` from the fee pot to `node`.
    pub fn credit_reward(&mut self, node: &NodeId, amount: u64) -> Result<(), ChainError> {
        self.fee_pot = self.fee_pot.checked_sub(amount).ok_or(ChainError::RewardExceedsFees)?;
        let slot = self.rewards.entry(node.clone()).or_insert(0);
        *slot = slot.checked_add(amount).ok_or(ChainError::Overflow)?;
        Ok(())
    }
}

/// Pools serialize as a list of `{id, reserve_eth, reserve_token, fee_ppm}`
/// so that no integer map keys appear in JSON.
mod pool_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        id: PoolId,
        #[serde(flatten)]
        pool: Pool,
    }

    pub fn serialize<S: Serializer>(pools: &BTreeMap<PoolId, Pool>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(pools.iter().map(|(&id, &pool)| Entry { id, pool }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<PoolId, Pool>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        let n = entries.len();
        let map: BTreeMap<PoolId, Pool> = entries.into_iter().map(|e| (e.id, e.pool)).collect();
        if map.len() != n {
            return Err(serde::de::Error::custom("duplicate pool id"));
        }
        Ok(map)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("reward payout exceeds collected fees")]
    RewardExceedsFees,
    #[error("balance overflow")]
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevertReason {
    /// Sender cannot cover `gas_limit * max_fee_per_gas`.
    InsufficientFeeBalance,
    OutOfGas,
    InsufficientBalance,
    Slippage,
    UnknownPool,
    Overflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TxStatus {
    Success,
    Reverted {
        reason: RevertReason,
    },
    /// Won the auction but its envelope could not be opened.
    Dropped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReceipt {
    pub tx_id: Hash32,
    #[serde(flatten)]
    pub status: TxStatus,
    pub gas_used: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub amount_out: Option<u64>,
    pub fee_paid: u64,
}

impl ExecutionReceipt {
    pub fn dropped(tx_id_public: Hash32) -> Self {
        ExecutionReceipt {
            tx_id: tx_id_public,
            status: TxStatus::Dropped,
            gas_used: 0,
            amount_out: None,
            fee_paid: 0,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == TxStatus::Success
    }
}

/// Executes `tx` in place. Failures never panic; they become reverted
/// receipts that leave the state unchanged apart from the fee debit.
pub fn apply_transaction(state: &mut ChainState, tx: &Transaction) -> ExecutionReceipt {
    let price = tx.max_fee_per_gas;
    let revert = |reason, gas_used: u64, fee_paid: u64| ExecutionReceipt {
        tx_id: tx.tx_id(),
        status: TxStatus::Reverted { reason },
        gas_used,
        amount_out: None,
        fee_paid,
    };

    let sender = state.account(&tx.sender);
    let max_charge = tx.gas_limit as u128 * price as u128;
    if (sender.eth as u128) < max_charge {
        return revert(RevertReason::InsufficientFeeBalance, 0, 0);
    }
    let cost = tx.payload.gas_cost();
    let gas_used = cost.min(tx.gas_limit);
    // bounded by max_charge, which fits in the sender's u64 balance
    let fee = (gas_used as u128 * price as u128) as u64;
    let Some(pot) = state.fee_pot.checked_add(fee) else {
        return revert(RevertReason::Overflow, 0, 0);
    };
    state.fee_pot = pot;
    let mut sender = sender;
    sender.eth -= fee;
    state.accounts.insert(tx.sender, sender);
    if tx.gas_limit < cost {
        return revert(RevertReason::OutOfGas, gas_used, fee);
    }

    let mut receipt = ExecutionReceipt {
        tx_id: tx.tx_id(),
        status: TxStatus::Success,
        gas_used,
        amount_out: None,
        fee_paid: fee,
    };
    match &tx.payload {
        Payload::Noop => {}
        Payload::Transfer { to, amount } => {
            if sender.eth < *amount {
                return revert(RevertReason::InsufficientBalance, gas_used, fee);
            }
            if *to != tx.sender {
                let mut dest = state.account(to);
                let Some(credited) = dest.eth.checked_add(*amount) else {
                    return revert(RevertReason::Overflow, gas_used, fee);
                };
                dest.eth = credited;
                sender.eth -= amount;
                state.accounts.insert(tx.sender, sender);
                state.accounts.insert(*to, dest);
            }
        }
        Payload::Swap {
            pool_id,
            direction,
            amount_in,
            min_out,
        } => {
            let Some(pool) = state.pools.get(pool_id).copied() else {
                return revert(RevertReason::UnknownPool, gas_used, fee);
            };
            let held = match direction {
                Direction::Buy => sender.eth,
                Direction::Sell => sender.token,
            };
            if held < *amount_in {
                return revert(RevertReason::InsufficientBalance, gas_used, fee);
            }
            let Some(out) = pool.quote(*direction, *amount_in) else {
                return revert(RevertReason::Overflow, gas_used, fee);
            };
            if out < *min_out {
                return revert(RevertReason::Slippage, gas_used, fee);
            }
            let mut pool = pool;
            let credited = match direction {
                Direction::Buy => {
                    pool.reserve_eth += amount_in;
                    pool.reserve_token -= out;
                    sender.eth -= amount_in;
                    sender.token.checked_add(out).map(|t| sender.token = t)
                }
                Direction::Sell => {
                    pool.reserve_token += amount_in;
                    pool.reserve_eth -= out;
                    sender.token -= amount_in;
                    sender.eth.checked_add(out).map(|e| sender.eth = e)
                }
            };
            if credited.is_none() {
                return revert(RevertReason::Overflow, gas_used, fee);
            }
            state.pools.insert(*pool_id, pool);
            state.accounts.insert(tx.sender, sender);
            receipt.amount_out = Some(out);
        }
    }
    receipt
}

/// Functional form of [`apply_transaction`].
pub fn execute_transaction(state: &ChainState, tx: &Transaction) -> (ChainState, ExecutionReceipt) {
    let mut next = state.clone();
    let receipt = apply_transaction(&mut next, tx);
    (next, receipt)
}

/// Executes `txs` in order; reverted transactions stay in the block.
pub fn apply_block(state: &mut ChainState, txs: &[Transaction]) -> Vec<ExecutionReceipt> {
    txs.iter().map(|tx| apply_transaction(state, tx)).collect()
}

pub fn simulate_block(state: &ChainState, txs: &[Transaction]) -> (ChainState, Vec<ExecutionReceipt>) {
    let mut next = state.clone();
    let receipts = apply_block(&mut next, txs);
    (next, receipts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alice() -> AccountId {
        AccountId::from_label("alice")
    }

    fn state(reserve: u64, fee_ppm: u32) -> ChainState {
        let mut s = ChainState::new();
        s.pools.insert(
            PoolId(0),
            Pool {
                reserve_eth: reserve,
                reserve_token: reserve,
                fee_ppm,
            },
        );
        s.accounts.insert(
            alice(),
            Account {
                eth: 10_000_000_000,
                token: 10_000_000_000,
            },
        );
        s
    }

    fn swap(nonce: u64, direction: Direction, amount_in: u64, min_out: u64) -> Transaction {
        let payload = Payload::Swap {
            pool_id: PoolId(0),
            direction,
            amount_in,
            min_out,
        };
        Transaction::new(alice(), nonce, 100_000, 2, payload).unwrap()
    }

    #[test]
    fn constant_product_example() {
        let s = state(1_000_000, 0);
        let (next, r) = execute_transaction(&s, &swap(0, Direction::Buy, 10_000, 0));
        assert_eq!(r.amount_out, Some(9900));
        assert!(r.is_success());
        assert_eq!(r.fee_paid, 200_000);
        assert_eq!(next.pools[&PoolId(0)].reserve_eth, 1_010_000);
        assert_eq!(next.pools[&PoolId(0)].reserve_token, 1_000_000 - 9900);
        assert_eq!(next.total_eth(), s.total_eth());
    }

    #[test]
    fn fee_tier_rounds_down() {
        let s = state(1_000_000, 3000);
        let (_, r) = execute_transaction(&s, &swap(0, Direction::Buy, 10_000, 0));
        // in_net = 9970, out = floor(1e6 * 9970 / 1_009_970)
        assert_eq!(r.amount_out, Some(9871));
    }

    #[test]
    fn noop_only_charges_fee() {
        let s = state(1_000_000, 0);
        let tx = Transaction::new(alice(), 0, 21_000, 3, Payload::Noop).unwrap();
        let (next, r) = execute_transaction(&s, &tx);
        assert!(r.is_success());
        assert_eq!(r.fee_paid, 63_000);
        assert_eq!(next.account(&alice()).eth, s.account(&alice()).eth - 63_000);
        assert_eq!(next.pools, s.pools);
        assert_eq!(next.fee_pot, 63_000);
    }

    #[test]
    fn slippage_reverts_and_keeps_reserves() {
        let s = state(1_000_000, 0);
        let (next, r) = execute_transaction(&s, &swap(0, Direction::Buy, 10_000, 9901));
        assert_eq!(
            r.status,
            TxStatus::Reverted {
                reason: RevertReason::Slippage
            }
        );
        assert_eq!(next.pools, s.pools);
        assert_eq!(next.account(&alice()).token, s.account(&alice()).token);
        assert_eq!(next.account(&alice()).eth, s.account(&alice()).eth - r.fee_paid);
        assert_eq!(r.fee_paid, r.gas_used * 2);
    }

    #[test]
    fn failure_receipts() {
        let mut s = state(1_000_000, 0);
        let poor = AccountId::from_label("poor");
        s.accounts.insert(poor, Account { eth: 100, token: 0 });
        let tx = Transaction::new(poor, 0, 21_000, 1, Payload::Noop).unwrap();
        let (next, r) = execute_transaction(&s, &tx);
        assert_eq!(
            r.status,
            TxStatus::Reverted {
                reason: RevertReason::InsufficientFeeBalance
            }
        );
        assert_eq!((r.gas_used, r.fee_paid), (0, 0));
        assert_eq!(next, s);

        let short = Transaction::new(alice(), 0, 50_000, 1, swap(0, Direction::Buy, 1, 0).payload).unwrap();
        let (_, r) = execute_transaction(&s, &short);
        assert_eq!(
            r.status,
            TxStatus::Reverted {
                reason: RevertReason::OutOfGas
            }
        );
        assert_eq!((r.gas_used, r.fee_paid), (50_000, 50_000));

        let big = swap(0, Direction::Sell, u64::MAX / 2, 0);
        let (_, r) = execute_transaction(&s, &big);
        assert_eq!(
            r.status,
            TxStatus::Reverted {
                reason: RevertReason::InsufficientBalance
            }
        );

        let unknown = Transaction::new(
            alice(),
            0,
            100_000,
            1,
            Payload::Swap {
                pool_id: PoolId(9),
                direction: Direction::Buy,
                amount_in: 1,
                min_out: 0,
            },
        )
        .unwrap();
        let (_, r) = execute_transaction(&s, &unknown);
        assert_eq!(
            r.status,
            TxStatus::Reverted {
                reason: RevertReason::UnknownPool
            }
        );
    }

    #[test]
    fn transfer_moves_funds() {
        let s = state(1_000_000, 0);
        let bob = AccountId::from_label("bob");
        let tx = Transaction::new(alice(), 0, 21_000, 1, Payload::Transfer { to: bob, amount: 500 }).unwrap();
        let (next, r) = execute_transaction(&s, &tx);
        assert!(r.is_success());
        assert_eq!(next.account(&bob).eth, 500);
        assert_eq!(next.total_eth(), s.total_eth());
        let too_much = Transaction::new(
            alice(),
            1,
            21_000,
            1,
            Payload::Transfer {
                to: bob,
                amount: u64::MAX,
            },
        )
        .unwrap();
        let (next2, r) = execute_transaction(&s, &too_much);
        assert_eq!(
            r.status,
            TxStatus::Reverted {
                reason: RevertReason::InsufficientBalance
            }
        );
        assert_eq!(next2.account(&bob).eth, 0);
    }

    #[test]
    fn empty_block_is_identity() {
        let s = state(1_000_000, 0);
        let (next, receipts) = simulate_block(&s, &[]);
        assert_eq!(next, s);
        assert!(receipts.is_empty());
    }

    #[test]
    fn price_impact() {
        let s = state(1_000_000, 0);
        let (_, r) = simulate_block(
            &s,
            &[swap(0, Direction::Buy, 10_000, 0), swap(1, Direction::Buy, 10_000, 0)],
        );
        let (a, b) = (r[0].amount_out.unwrap(), r[1].amount_out.unwrap());
        assert_eq!(a, 9900);
        // reserves after the first swap: (1_010_000, 990_100)
        assert_eq!(b, (990_100u128 * 10_000 / 1_020_000) as u64);
        assert!(b < a);
    }

    #[test]
    fn ordering_changes_receipts_but_not_k_growth() {
        let s = state(1_000_000, 0);
        let x = swap(0, Direction::Buy, 30_000, 0);
        let y = swap(1, Direction::Sell, 20_000, 0);
        let (s1, r1) = simulate_block(&s, &[x.clone(), y.clone()]);
        let (s2, r2) = simulate_block(&s, &[y, x]);
        assert_ne!(r1[0].amount_out, r2[1].amount_out);
        assert!(r1.iter().chain(&r2).all(|r| r.is_success()));
        let k0 = s.pools[&PoolId(0)].k();
        assert!(s1.pools[&PoolId(0)].k() >= k0);
        assert!(s2.pools[&PoolId(0)].k() >= k0);
    }

    #[test]
    fn credit_reward_is_bounded_by_pot() {
        let mut s = state(10, 0);
        s.fee_pot = 5;
        let n = NodeId("p".into());
        s.credit_reward(&n, 3).unwrap();
        assert_eq!(s.credit_reward(&n, 3), Err(ChainError::RewardExceedsFees));
        assert_eq!(s.rewards[&n], 3);
    }

    #[test]
    fn state_json_round_trip() {
        let mut s = state(1_000, 0);
        s.rewards.insert(NodeId("x".into()), 4);
        let back: ChainState = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn swaps_conserve_and_never_shrink_k(
            reserve in 1_000u64..1_000_000_000,
            fee_ppm in 0u32..10_000,
            ops in proptest::collection::vec((any::<bool>(), 1u64..50_000_000, 0u64..3), 1..20),
        ) {
            let mut s = state(reserve, fee_ppm);
            let eth0 = s.total_eth();
            let tok0 = s.total_token();
            for (i, (buy, amount, price)) in ops.into_iter().enumerate() {
                let dir = if buy { Direction::Buy } else { Direction::Sell };
                let k0 = s.pools[&PoolId(0)].k();
                let tx = Transaction::new(alice(), i as u64, 100_000, price, Payload::Swap {
                    pool_id: PoolId(0), direction: dir, amount_in: amount, min_out: 0,
                }).unwrap();
                let r = apply_transaction(&mut s, &tx);
                prop_assert_eq!(r.fee_paid, r.gas_used * price);
                prop_assert!(s.pools[&PoolId(0)].k() >= k0);
                prop_assert!(s.pools[&PoolId(0)].reserve_token > 0 && s.pools[&PoolId(0)].reserve_eth > 0);
                prop_assert_eq!(s.total_eth(), eth0);
                prop_assert_eq!(s.total_token(), tok0);
            }
        }
    }
}
