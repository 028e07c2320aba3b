//! Scenario configuration: chain parameters, protocol parameters, workload
//! and the regimes to compare. Validated before any run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{RewardSplit, Roster, ScoringWeights};
use crate::chain::world::WorldConfig;
use crate::chain::{Account, ChainState, Pool, PPM};
use crate::fraction::{self, Rational};
use crate::model::{Direction, PoolId, MAX_URGENCY};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Public mempool: highest fee per gas first.
    GreedyFee,
    /// Builder colluding with the attacker: profit-maximizing order.
    MevBuilder,
    /// Sealed auction with VRF selection and VRF ordering.
    Fairflow,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::GreedyFee, Regime::MevBuilder, Regime::Fairflow];

    pub fn name(&self) -> &'static str {
        match self {
            Regime::GreedyFee => "greedy_fee",
            Regime::MevBuilder => "mev_builder",
            Regime::Fairflow => "fairflow",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s.trim())
            .map_or_else(|| invalid(format!("unknown regime {s:?}")), Ok)
    }
}

/// Parses a comma-separated regime list; empty lists and duplicates are errors.
pub fn parse_regimes(list: &str) -> Result<Vec<Regime>, ConfigError> {
    let regimes = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Regime::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    check_regimes(&regimes)?;
    Ok(regimes)
}

fn check_regimes(regimes: &[Regime]) -> Result<(), ConfigError> {
    if regimes.is_empty() {
        return invalid("regime list is empty");
    }
    let mut sorted = regimes.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != regimes.len() {
        return invalid("regime list contains duplicates");
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    #[serde(default)]
    pub id: u32,
    pub reserve_eth: u64,
    pub reserve_token: u64,
    #[serde(default = "default_fee_ppm")]
    pub fee_ppm: u32,
}

fn default_fee_ppm() -> u32 {
    3000
}

impl PoolConfig {
    pub fn pool(&self) -> Pool {
        Pool {
            reserve_eth: self.reserve_eth,
            reserve_token: self.reserve_token,
            fee_ppm: self.fee_ppm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterSizes {
    pub proposers: usize,
    pub auction_managers: usize,
    pub order_guardians: usize,
    pub privacy_keepers: usize,
}

impl Default for RosterSizes {
    fn default() -> Self {
        RosterSizes {
            proposers: 4,
            auction_managers: 3,
            order_guardians: 3,
            privacy_keepers: 2,
        }
    }
}

/// Inclusive integer range sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformRange {
    pub min: u64,
    pub max: u64,
}

impl UniformRange {
    pub const fn fixed(v: u64) -> Self {
        UniformRange { min: v, max: v }
    }

    fn check(&self, what: &str) -> Result<(), ConfigError> {
        if self.min > self.max {
            return invalid(format!("{what}: min {} exceeds max {}", self.min, self.max));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Trade before and after the victim.
    Sandwich,
    /// Trade in the victim's direction ahead of it.
    Frontrun,
    /// Trade against the victim's direction after it.
    Backrun,
}

/// Which victims an attacker goes after.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSelector {
    #[serde(default)]
    pub min_amount_in: u64,
    #[serde(default)]
    pub direction: Option<Direction>,
}

/// Fee per gas of attacker transactions relative to the victim's.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeePolicy {
    #[serde(default = "one_u64")]
    pub front_premium: u64,
    #[serde(default = "one_u64")]
    pub back_discount: u64,
}

fn one_u64() -> u64 {
    1
}

impl Default for FeePolicy {
    fn default() -> Self {
        FeePolicy {
            front_premium: 1,
            back_discount: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerStrategy {
    pub kind: AttackKind,
    #[serde(default)]
    pub target: TargetSelector,
    #[serde(default)]
    pub fee_policy: FeePolicy,
    /// Attack trade size as a multiple of the victim's `amount_in`.
    #[serde(with = "fraction::serde_rational", default = "fraction::one")]
    pub size: Rational,
    #[serde(default = "one_u32")]
    pub max_targets_per_slot: u32,
}

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillerKind {
    #[default]
    Noop,
    Transfer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Initial balances of every workload account.
    pub account_funding: Account,
    #[serde(default)]
    pub victims_per_slot: u32,
    #[serde(default = "default_amount")]
    pub victim_amount: UniformRange,
    #[serde(default = "default_fee")]
    pub victim_fee_per_gas: UniformRange,
    #[serde(with = "fraction::serde_rational", default = "half")]
    pub victim_buy_probability: Rational,
    /// Victims set `min_out` this fraction below their quote.
    #[serde(with = "fraction::serde_rational", default = "twentieth")]
    pub victim_slippage_tolerance: Rational,
    #[serde(default = "zero_range")]
    pub victim_urgency: UniformRange,
    #[serde(default)]
    pub fillers_per_slot: u32,
    #[serde(default = "default_fee")]
    pub filler_fee_per_gas: UniformRange,
    #[serde(default)]
    pub filler_kind: FillerKind,
    #[serde(default = "zero_range")]
    pub filler_urgency: UniformRange,
    /// Probability that a user never releases the reveal key.
    #[serde(with = "fraction::serde_rational", default = "fraction::zero")]
    pub withhold_probability: Rational,
    #[serde(default)]
    pub attackers: Vec<AttackerStrategy>,
}

fn default_amount() -> UniformRange {
    UniformRange {
        min: 1_000,
        max: 10_000,
    }
}

fn default_fee() -> UniformRange {
    UniformRange { min: 1, max: 20 }
}

fn zero_range() -> UniformRange {
    UniformRange::fixed(0)
}

fn half() -> Rational {
    fraction::ratio(1, 2)
}

fn twentieth() -> Rational {
    fraction::ratio(1, 20)
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.victim_amount.check("victim_amount")?;
        self.victim_fee_per_gas.check("victim_fee_per_gas")?;
        self.victim_urgency.check("victim_urgency")?;
        self.filler_fee_per_gas.check("filler_fee_per_gas")?;
        self.filler_urgency.check("filler_urgency")?;
        if self.victim_amount.min == 0 {
            return invalid("victim_amount.min must be positive");
        }
        if self.victim_fee_per_gas.min == 0 || self.filler_fee_per_gas.min == 0 {
            return invalid("fee per gas must be positive");
        }
        if self.victim_urgency.max > MAX_URGENCY as u64 || self.filler_urgency.max > MAX_URGENCY as u64 {
            return invalid(format!("urgency must not exceed {MAX_URGENCY}"));
        }
        for (name, p) in [
            ("victim_buy_probability", &self.victim_buy_probability),
            ("victim_slippage_tolerance", &self.victim_slippage_tolerance),
            ("withhold_probability", &self.withhold_probability),
        ] {
            if !fraction::in_unit_interval(p) {
                return invalid(format!("{name} must lie in [0, 1]"));
            }
        }
        for a in &self.attackers {
            if a.size <= fraction::zero() {
                return invalid("attacker size must be positive");
            }
        }
        Ok(())
    }

    /// Largest number of transactions a slot can contain.
    pub fn max_txs_per_slot(&self) -> u64 {
        let per_victim = self
            .attackers
            .iter()
            .map(|a| match a.kind {
                AttackKind::Sandwich => 2,
                _ => 1,
            })
            .max()
            .unwrap_or(0);
        self.victims_per_slot as u64 * (1 + per_victim) + self.fillers_per_slot as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub slots: u64,
    pub capacity_gas: u64,
    pub pool: PoolConfig,
    #[serde(default)]
    pub scoring: ScoringWeights,
    #[serde(with = "fraction::serde_rational", default = "default_lottery")]
    pub lottery_fraction: Rational,
    #[serde(default)]
    pub reward_split: RewardSplit,
    #[serde(default)]
    pub roster: RosterSizes,
    pub workload: WorkloadSpec,
    #[serde(default = "all_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn default_lottery() -> Rational {
    fraction::ratio(1, 5)
}

fn all_regimes() -> Vec<Regime> {
    Regime::ALL.to_vec()
}

/// Exhaustive search bound of the MEV builder.
pub const MEV_SEARCH_MAX_TXS: u64 = 8;

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.slots == 0 {
            return invalid("slots must be positive");
        }
        if self.capacity_gas == 0 {
            return invalid("capacity_gas must be positive");
        }
        if self.pool.reserve_eth == 0 || self.pool.reserve_token == 0 {
            return invalid("pool reserves must be positive");
        }
        if self.pool.fee_ppm as u64 >= PPM {
            return invalid("pool fee_ppm must be below 1000000");
        }
        self.scoring
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !fraction::in_unit_interval(&self.lottery_fraction) {
            return invalid("lottery_fraction must lie in [0, 1]");
        }
        self.reward_split
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let r = &self.roster;
        if r.proposers == 0 || r.auction_managers == 0 || r.order_guardians == 0 {
            return invalid("roster needs at least one proposer, auction manager and order guardian");
        }
        if r.privacy_keepers == 0 && self.reward_split.privacy_keeper > fraction::zero() {
            return invalid("privacy keepers have a reward share but the roster has none");
        }
        self.workload.validate()?;
        check_regimes(&self.regimes)?;
        if self.regimes.contains(&Regime::MevBuilder) && self.workload.max_txs_per_slot() > MEV_SEARCH_MAX_TXS {
            return invalid(format!(
                "mev_builder searches at most {MEV_SEARCH_MAX_TXS} transactions per block; workload produces up to {}",
                self.workload.max_txs_per_slot()
            ));
        }
        Ok(())
    }

    pub fn pool_id(&self) -> PoolId {
        PoolId(self.pool.id)
    }

    pub fn roster(&self) -> Roster {
        let r = &self.roster;
        Roster::with_sizes(r.proposers, r.auction_managers, r.order_guardians, r.privacy_keepers)
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            capacity_gas: self.capacity_gas,
            weights: self.scoring.clone(),
            lottery_fraction: self.lottery_fraction.clone(),
            reward_split: self.reward_split.clone(),
            roster: self.roster(),
            rounds: self.slots,
        }
    }

    /// Genesis pool without accounts; the workload adds funded accounts.
    pub fn genesis_pools(&self) -> ChainState {
        let mut state = ChainState::new();
        state.pools.insert(self.pool_id(), self.pool.pool());
        state
    }

    /// Seeds to use when the caller does not give a count.
    pub fn default_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![0]
        } else {
            self.seeds.clone()
        }
    }
}
