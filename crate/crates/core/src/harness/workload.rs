//! Deterministic workload generation: victim swaps, attacker injections and
//! filler traffic, slot by slot, from `(spec, seed)` alone.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::chain::world::{Submission, TxLabel};
use crate::chain::{ChainState, Pool};
use crate::config::{AttackKind, FillerKind, ScenarioConfig, UniformRange};
use crate::envelope::{seal, RevealKey};
use crate::fraction::{self, Rational};
use crate::hash::{sha256_concat, Hash32};
use crate::model::{
    canonical_serialize, AccountId, Bid, Direction, Payload, PoolId, Transaction, NOOP_GAS, SWAP_GAS, TRANSFER_GAS,
};

/// One generated transaction with everything needed to submit it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkItem {
    pub tx: Transaction,
    pub label: TxLabel,
    pub urgency: u8,
    pub reveal_key: RevealKey,
    /// The user never hands over the reveal key.
    pub withhold: bool,
}

impl WorkItem {
    /// Seals the transaction and prices its bid at the full fee ceiling.
    pub fn to_submission(&self) -> Submission {
        let envelope = seal(&self.tx, self.reveal_key.key, self.reveal_key.salt);
        let view = envelope.public_view;
        let mut bidder = [0u8; 20];
        bidder.copy_from_slice(&view.sender_blinded.0[..20]);
        let bid = Bid::new(
            view.tx_id_public,
            AccountId(bidder),
            self.tx.max_fee(),
            self.urgency,
            view.gas_limit,
            BTreeMap::new(),
        )
        .expect("generated bids are well formed");
        Submission {
            envelope,
            bid,
            reveal_key: (!self.withhold).then_some(self.reveal_key),
            label: self.label,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SlotWorkload {
    pub items: Vec<WorkItem>,
}

impl SlotWorkload {
    pub fn submissions(&self) -> Vec<Submission> {
        self.items.iter().map(WorkItem::to_submission).collect()
    }

    pub fn transactions(&self) -> Vec<Transaction> {
        self.items.iter().map(|i| i.tx.clone()).collect()
    }

    pub fn labels(&self) -> Vec<TxLabel> {
        self.items.iter().map(|i| i.label).collect()
    }

    /// Bytes hashed into the workload digest.
    fn digest_into(&self, h: &mut Sha256) {
        h.update((self.items.len() as u64).to_be_bytes());
        for item in &self.items {
            h.update(canonical_serialize(&item.tx));
            h.update(serde_json::to_vec(&item.label).expect("label serializes"));
            h.update([item.urgency, item.withhold as u8]);
            h.update(item.reveal_key.key);
            h.update(item.reveal_key.salt);
        }
    }
}

pub fn victim_account(i: u32) -> AccountId {
    AccountId::from_label(&format!("victim-{i}"))
}

pub fn attacker_account(i: usize) -> AccountId {
    AccountId::from_label(&format!("attacker-{i}"))
}

pub fn filler_account(i: u32) -> AccountId {
    AccountId::from_label(&format!("filler-{i}"))
}

/// Stream of slot workloads for one `(scenario, seed)`.
pub struct WorkloadGenerator {
    config: ScenarioConfig,
    reference_pool: Pool,
    rng: ChaCha8Rng,
    nonces: BTreeMap<AccountId, u64>,
    digest: Sha256,
    produced: u64,
}

fn sample(rng: &mut ChaCha8Rng, r: UniformRange) -> u64 {
    rng.random_range(r.min..=r.max)
}

fn bernoulli(rng: &mut ChaCha8Rng, p: &Rational) -> bool {
    // exact: draw u in [0, 2^53) and compare u < p * 2^53
    let u: u64 = rng.random::<u64>() >> 11;
    let threshold = fraction::floor_u128(&(p * fraction::int(1 << 53)));
    (u as u128) < threshold
}

fn scale(amount: u64, factor: &Rational) -> u64 {
    (fraction::floor_u128(&(fraction::int(amount) * factor)) as u64).max(1)
}

impl WorkloadGenerator {
    pub fn new(config: &ScenarioConfig, seed: u64) -> Self {
        let rng_seed = sha256_concat(&[b"workload", &seed.to_be_bytes()]).0;
        WorkloadGenerator {
            reference_pool: config.pool.pool(),
            config: config.clone(),
            rng: ChaCha8Rng::from_seed(rng_seed),
            nonces: BTreeMap::new(),
            digest: Sha256::new(),
            produced: 0,
        }
    }

    /// Every account the workload can use.
    pub fn accounts(config: &ScenarioConfig) -> Vec<AccountId> {
        let w = &config.workload;
        let mut out: Vec<AccountId> = (0..w.victims_per_slot).map(victim_account).collect();
        out.extend((0..w.attackers.len()).map(attacker_account));
        out.extend((0..w.fillers_per_slot).map(filler_account));
        out
    }

    pub fn attacker_accounts(config: &ScenarioConfig) -> BTreeSet<AccountId> {
        (0..config.workload.attackers.len()).map(attacker_account).collect()
    }

    /// Genesis: the configured pool and every workload account funded.
    pub fn genesis(config: &ScenarioConfig) -> ChainState {
        let mut state = config.genesis_pools();
        for id in Self::accounts(config) {
            state.accounts.insert(id, config.workload.account_funding);
        }
        state
    }

    /// Digest of every slot produced so far.
    pub fn digest(&self) -> Hash32 {
        Hash32(self.digest.clone().finalize().into())
    }

    pub fn produced(&self) -> u64 {
        self.produced
    }

    fn next_nonce(&mut self, account: AccountId) -> u64 {
        let n = self.nonces.entry(account).or_insert(0);
        *n += 1;
        *n - 1
    }

    fn item(&mut self, tx: Transaction, label: TxLabel, urgency: u8) -> WorkItem {
        let reveal_key = RevealKey {
            key: self.rng.random(),
            salt: self.rng.random(),
        };
        let withhold = bernoulli(&mut self.rng, &self.config.workload.withhold_probability);
        WorkItem {
            tx,
            label,
            urgency,
            reveal_key,
            withhold,
        }
    }

    fn swap(&mut self, sender: AccountId, direction: Direction, amount_in: u64, min_out: u64, fee: u64) -> Transaction {
        let nonce = self.next_nonce(sender);
        let payload = Payload::Swap {
            pool_id: PoolId(self.config.pool.id),
            direction,
            amount_in,
            min_out,
        };
        Transaction::new(sender, nonce, SWAP_GAS, fee, payload).expect("generated swaps are well formed")
    }

    pub fn next_slot(&mut self) -> SlotWorkload {
        let w = self.config.workload.clone();
        let mut items = Vec::new();

        let mut victims = Vec::with_capacity(w.victims_per_slot as usize);
        for i in 0..w.victims_per_slot {
            let direction = if bernoulli(&mut self.rng, &w.victim_buy_probability) {
                Direction::Buy
            } else {
                Direction::Sell
            };
            let amount = sample(&mut self.rng, w.victim_amount);
            let fee = sample(&mut self.rng, w.victim_fee_per_gas);
            let urgency = sample(&mut self.rng, w.victim_urgency) as u8;
            let quote = self.reference_pool.quote(direction, amount).unwrap_or(0);
            let min_out =
                fraction::floor_u128(&(fraction::int(quote) * (fraction::one() - &w.victim_slippage_tolerance))) as u64;
            let tx = self.swap(victim_account(i), direction, amount, min_out, fee);
            victims.push((tx.tx_id(), direction, amount, fee));
            items.push(self.item(tx, TxLabel::Victim, urgency));
        }

        let mut targeted = BTreeSet::new();
        for (a, strategy) in w.attackers.iter().enumerate() {
            let account = attacker_account(a);
            let mut taken = 0;
            for &(victim, direction, amount, fee) in &victims {
                if taken >= strategy.max_targets_per_slot {
                    break;
                }
                let sel = &strategy.target;
                if targeted.contains(&victim)
                    || amount < sel.min_amount_in
                    || sel.direction.is_some_and(|d| d != direction)
                {
                    continue;
                }
                targeted.insert(victim);
                taken += 1;
                let size = scale(amount, &strategy.size);
                let reverse = match direction {
                    Direction::Buy => Direction::Sell,
                    Direction::Sell => Direction::Buy,
                };
                // the attacker expects to unwind roughly what the front trade buys
                let unwind = self.reference_pool.quote(direction, size).unwrap_or(0).max(1);
                let front_fee = fee + strategy.fee_policy.front_premium;
                let back_fee = fee.saturating_sub(strategy.fee_policy.back_discount).max(1);
                if matches!(strategy.kind, AttackKind::Sandwich | AttackKind::Frontrun) {
                    let tx = self.swap(account, direction, size, 0, front_fee);
                    items.push(self.item(tx, TxLabel::Front { victim }, 0));
                }
                if matches!(strategy.kind, AttackKind::Sandwich | AttackKind::Backrun) {
                    let tx = self.swap(account, reverse, unwind, 0, back_fee);
                    items.push(self.item(tx, TxLabel::Back { victim }, 0));
                }
            }
        }

        let n_fillers = w.fillers_per_slot;
        for i in 0..n_fillers {
            let sender = filler_account(i);
            let fee = sample(&mut self.rng, w.filler_fee_per_gas);
            let urgency = sample(&mut self.rng, w.filler_urgency) as u8;
            let nonce = self.next_nonce(sender);
            let (gas, payload) = match w.filler_kind {
                FillerKind::Noop => (NOOP_GAS, Payload::Noop),
                FillerKind::Transfer => (
                    TRANSFER_GAS,
                    Payload::Transfer {
                        to: filler_account((i + 1) % n_fillers),
                        amount: 1,
                    },
                ),
            };
            let tx = Transaction::new(sender, nonce, gas, fee, payload).expect("filler is well formed");
            items.push(self.item(tx, TxLabel::Filler, urgency));
        }

        let slot = SlotWorkload { items };
        self.digest.update(self.produced.to_be_bytes());
        slot.digest_into(&mut self.digest);
        self.produced += 1;
        slot
    }
}

impl Iterator for WorkloadGenerator {
    type Item = SlotWorkload;

    fn next(&mut self) -> Option<SlotWorkload> {
        (self.produced < self.config.slots).then(|| self.next_slot())
    }
}

/// The whole workload for `(config, seed)` in memory.
pub fn generate_workload(config: &ScenarioConfig, seed: u64) -> Vec<SlotWorkload> {
    WorkloadGenerator::new(config, seed).collect()
}
