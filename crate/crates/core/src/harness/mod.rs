//! Attack harness: runs one scenario under each ordering regime on identical
//! workloads and compares MEV and fairness metrics.

pub mod metrics;
pub mod regimes;
pub mod workload;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::world::{SlotReport, World};
use crate::chain::ChainState;
use crate::config::{Regime, ScenarioConfig};
use crate::hash::{sha256_concat, Hash32};
use crate::model::Slot;
use crate::trace::{slot_events, TraceContext, TraceEvent};

use metrics::{MetricsAccumulator, MevMetrics, SlotObservation};
use regimes::{proposer_only_split, run_baseline_slot, BaselineSlot};
use workload::WorkloadGenerator;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("block of {0} transactions exceeds the exhaustive search bound")]
    SearchBound(usize),
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("internal fault: {0}")]
    Internal(String),
}

/// Per-run conservation bookkeeping; every count should be zero.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConservationCheck {
    pub slots_checked: u64,
    /// Slots whose ledger total differs from the fees of included txs.
    pub reward_mismatches: u64,
    /// Slots across which total ETH or token value changed.
    pub value_mismatches: u64,
}

impl ConservationCheck {
    pub fn holds(&self) -> bool {
        self.reward_mismatches == 0 && self.value_mismatches == 0
    }

    fn record(&mut self, pre: (u128, u128), post: &ChainState, report: &SlotReport) {
        self.slots_checked += 1;
        let ledger: u128 = report.ledger.iter().map(|e| e.amount as u128).sum();
        let fees: u128 = report.receipts.iter().map(|r| r.fee_paid as u128).sum();
        if ledger != fees || fees != report.fees_collected as u128 {
            self.reward_mismatches += 1;
        }
        if (post.total_eth(), post.total_token()) != pre {
            self.value_mismatches += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub regime: Regime,
    pub seed: u64,
    pub metrics: MevMetrics,
    pub workload_digest: Hash32,
    pub conservation: ConservationCheck,
    pub final_height: u64,
    pub total_fees: u64,
    pub faults: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub trace: bool,
}

/// Result of one `(scenario, seed, regime)` run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Vec<TraceEvent>,
}

pub fn world_seed(seed: u64) -> [u8; 32] {
    sha256_concat(&[b"world", &seed.to_be_bytes()]).0
}

/// Runs `config` under `regime`. `on_slot` sees every slot report as it is
/// produced.
pub fn run_regime(
    config: &ScenarioConfig,
    seed: u64,
    regime: Regime,
    options: RunOptions,
    mut on_slot: impl FnMut(&SlotReport),
) -> Result<RunOutput, HarnessError> {
    config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let pool = config.pool_id();
    let genesis = WorkloadGenerator::genesis(config);
    let mut generator = WorkloadGenerator::new(config, seed);
    let attackers = WorkloadGenerator::attacker_accounts(config);
    let roster = config.roster();
    let ctx = TraceContext {
        regime,
        weights: config.scoring.clone(),
        lottery_fraction: config.lottery_fraction.clone(),
        reward_split: match regime {
            Regime::Fairflow => config.reward_split.clone(),
            _ => proposer_only_split(),
        },
        roster: roster.clone(),
        pool,
    };

    let mut acc = MetricsAccumulator::new(&genesis, pool);
    let mut conservation = ConservationCheck::default();
    let mut trace = Vec::new();
    let mut total_fees = 0u64;
    let mut faults = 0u64;

    let mut world = match regime {
        Regime::Fairflow => Some(
            World::new(config.world_config(), genesis.clone(), world_seed(seed))
                .map_err(|e| HarnessError::Config(e.to_string()))?,
        ),
        _ => None,
    };
    let mut baseline_state = genesis;

    for index in 0..config.slots {
        let work = generator.next_slot();
        let state_before: &ChainState = match &world {
            Some(w) => w.state(),
            None => &baseline_state,
        };
        let pre_pool = state_before.pools.get(&pool).copied();
        let pre_totals = (state_before.total_eth(), state_before.total_token());
        let pre_state = options.trace.then(|| state_before.clone());

        let report = match &mut world {
            Some(w) => w.run_slot(work.submissions()),
            None => {
                let txs = work.transactions();
                let labels = work.labels();
                run_baseline_slot(
                    &mut baseline_state,
                    BaselineSlot {
                        slot: Slot::new(index, config.capacity_gas),
                        txs: &txs,
                        labels: &labels,
                        roster: &roster,
                        attackers: &attackers,
                        pool,
                    },
                    regime == Regime::MevBuilder,
                )?
            }
        };
        let post: &ChainState = match &world {
            Some(w) => w.state(),
            None => &baseline_state,
        };
        conservation.record(pre_totals, post, &report);
        if let Some(pre) = pre_state {
            trace.extend(slot_events(&ctx, &pre, post, &report));
        }
        acc.observe(SlotObservation {
            pre_pool,
            txs: &report.block.ordered_txs,
            labels: &report.labels,
            receipts: &report.receipts,
        });
        total_fees += report.fees_collected;
        faults += report.fault.is_some() as u64;
        on_slot(&report);
    }

    let final_state = match &world {
        Some(w) => w.state(),
        None => &baseline_state,
    };
    Ok(RunOutput {
        summary: RunSummary {
            scenario: config.name.clone(),
            regime,
            seed,
            metrics: acc.finish(final_state),
            workload_digest: generator.digest(),
            conservation,
            final_height: final_state.height,
            total_fees,
            faults,
        },
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1 denominator).
    pub std: Option<f64>,
}

pub fn aggregate(name: &str, values: &[f64]) -> Aggregate {
    let n = values.len();
    let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
    let std = match (mean, n) {
        (Some(m), n) if n > 1 => Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()),
        _ => None,
    };
    Aggregate {
        metric: name.to_string(),
        n,
        mean,
        std,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub runs: Vec<RunSummary>,
    pub aggregates: Vec<Aggregate>,
}

impl RegimeReport {
    pub fn aggregate(&self, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.metric == metric)
    }
}

pub const INFORMATION_NOTE: &str = "All regimes execute byte-identical workloads. Attacker transactions are generated with \
knowledge of each victim's plaintext in every regime, including fairflow, where sealed envelopes would normally hide it; \
fairflow results are therefore an upper bound on attacker success.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub slots_per_seed: u64,
    pub note: String,
    pub regimes: Vec<RegimeReport>,
}

impl ComparisonReport {
    pub fn regime(&self, regime: Regime) -> Option<&RegimeReport> {
        self.regimes.iter().find(|r| r.regime == regime)
    }

    /// One row per (regime, seed).
    pub fn to_csv(&self) -> String {
        let mut header = vec!["regime".to_string(), "seed".to_string()];
        let mut rows = Vec::new();
        for r in &self.regimes {
            for run in &r.runs {
                let fields = run.metrics.fields();
                if header.len() == 2 {
                    header.extend(fields.iter().map(|(n, _)| n.to_string()));
                    header.push("conservation_holds".into());
                }
                let mut row = vec![r.regime.to_string(), run.seed.to_string()];
                row.extend(fields.iter().map(|(_, v)| v.map(|x| x.to_string()).unwrap_or_default()));
                row.push(run.conservation.holds().to_string());
                rows.push(row.join(","));
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for row in rows {
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}

/// Runs every regime over every seed. Seeds run in parallel; results are
/// collected in seed order, so the report does not depend on scheduling.
pub fn run_comparison(
    config: &ScenarioConfig,
    seeds: &[u64],
    regimes: &[Regime],
) -> Result<ComparisonReport, HarnessError> {
    use rayon::prelude::*;
    config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    if regimes.is_empty() {
        return Err(HarnessError::Config("no regimes selected".into()));
    }
    let mut out = Vec::with_capacity(regimes.len());
    for &regime in regimes {
        let runs: Vec<RunSummary> = seeds
            .par_iter()
            .map(|&seed| run_regime(config, seed, regime, RunOptions::default(), |_| {}).map(|o| o.summary))
            .collect::<Result<_, _>>()?;
        let names: Vec<&'static str> = runs
            .first()
            .map(|r| r.metrics.fields().into_iter().map(|(n, _)| n).collect())
            .unwrap_or_default();
        let aggregates = names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let values: Vec<f64> = runs.iter().filter_map(|r| r.metrics.fields()[k].1).collect();
                aggregate(name, &values)
            })
            .collect();
        out.push(RegimeReport {
            regime,
            runs,
            aggregates,
        });
    }
    Ok(ComparisonReport {
        scenario: config.name.clone(),
        seeds: seeds.to_vec(),
        slots_per_seed: config.slots,
        note: INFORMATION_NOTE.to_string(),
        regimes: out,
    })
}
