mod common;

use std::collections::BTreeSet;

use fairflow_core::chain::world::TxLabel;
use fairflow_core::chain::{apply_block, ChainState};
use fairflow_core::config::{Regime, ScenarioConfig};
use fairflow_core::harness::metrics::{MetricsAccumulator, SlotObservation};
use fairflow_core::harness::workload::{generate_workload, WorkloadGenerator};
use fairflow_core::harness::{run_comparison, run_regime, RunOptions};
use fairflow_core::model::{Direction, Payload, Transaction};
use fairflow_core::trace::{compute_metrics, read_jsonl, to_jsonl};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn without_attackers(mut config: ScenarioConfig) -> ScenarioConfig {
    config.workload.attackers.clear();
    config
}

#[test]
fn workload_is_a_function_of_spec_and_seed() {
    let config = common::quickstart();
    let a = generate_workload(&config, 9);
    let b = generate_workload(&config, 9);
    let c = generate_workload(&config, 10);
    let bytes = |w: &[fairflow_core::harness::workload::SlotWorkload]| {
        w.iter()
            .flat_map(|s| s.transactions())
            .map(|t| t.tx_id())
            .collect::<Vec<_>>()
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn zero_attackers_means_no_attack_traffic_and_no_profit() {
    let config = without_attackers(common::sandwich());
    for slot in generate_workload(&config, 1) {
        assert!(slot.labels().iter().all(|l| !l.is_attacker()));
    }
    for regime in Regime::ALL {
        let out = run_regime(&config, 1, regime, RunOptions::default(), |_| {}).unwrap();
        assert_eq!(out.summary.metrics.attacker_profit, 0, "{regime}");
        assert_eq!(out.summary.metrics.favorable_order_rate, None);
    }
}

#[test]
fn sandwich_spec_adds_two_attacker_txs_per_victim() {
    let config = common::quickstart();
    for slot in generate_workload(&config, 4) {
        let labels = slot.labels();
        let txs = slot.transactions();
        for (tx, label) in txs.iter().zip(&labels) {
            if *label != TxLabel::Victim {
                continue;
            }
            let id = tx.tx_id();
            let fronts = labels.iter().filter(|l| **l == TxLabel::Front { victim: id }).count();
            let backs = labels.iter().filter(|l| **l == TxLabel::Back { victim: id }).count();
            assert_eq!(fronts, backs);
            assert!(fronts <= 1);
        }
        let attackers = labels.iter().filter(|l| l.is_attacker()).count();
        let attacked = labels.iter().filter(|l| matches!(l, TxLabel::Front { .. })).count();
        assert_eq!(attackers, 2 * attacked);
    }
}

/// Step-by-step constant-product execution without fees, floor rounding.
fn amm_out(reserve_in: i128, reserve_out: i128, amount_in: i128) -> i128 {
    reserve_out * amount_in / (reserve_in + amount_in)
}

#[test]
fn hand_sandwich_profit_matches_constant_product_oracle() {
    let (mut x, mut y) = (1_000_000i128, 1_000_000i128);
    let front_out = amm_out(x, y, 10_000);
    x += 10_000;
    y -= front_out;
    let victim_out = amm_out(x, y, 10_000);
    x += 10_000;
    y -= victim_out;
    let back_out = amm_out(y, x, front_out);
    assert_eq!((front_out, victim_out, back_out), (9900, 9706, 10_196));
    let fees = 100_000 * (3 + 1);
    let expected = back_out - 10_000 - fees;
    assert_eq!(expected, -399_804);

    let config = common::hand_sandwich();
    for regime in [Regime::GreedyFee, Regime::MevBuilder] {
        let out = run_regime(&config, 0, regime, RunOptions { trace: true }, |_| {}).unwrap();
        let m = compute_metrics(&out.trace).unwrap();
        assert_eq!(m.attacker_profit, expected, "{regime}");
        assert_eq!(m, out.summary.metrics);
        assert_eq!(m.favorable_order_rate, Some(1.0));
        let slip = (9900.0 - 9706.0) / 9900.0;
        assert!((m.victim_slippage.unwrap() - slip).abs() < 1e-12);
    }
}

#[test]
fn metrics_survive_a_trace_round_trip() {
    let config = common::quickstart();
    for regime in Regime::ALL {
        let mut config = config.clone();
        if regime == Regime::MevBuilder {
            config.workload.fillers_per_slot = 0;
        }
        let out = run_regime(&config, 2, regime, RunOptions { trace: true }, |_| {}).unwrap();
        let text = to_jsonl(&out.trace);
        let reparsed = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(reparsed, out.trace);
        assert_eq!(compute_metrics(&reparsed).unwrap(), out.summary.metrics);
        assert_eq!(to_jsonl(&reparsed), text);
    }
}

#[test]
fn truncated_trace_is_an_error() {
    let config = common::quickstart();
    let out = run_regime(&config, 2, Regime::Fairflow, RunOptions { trace: true }, |_| {}).unwrap();
    assert!(compute_metrics(&out.trace[..out.trace.len() - 1]).is_err());
    assert!(compute_metrics(&[]).is_err());
}

#[test]
fn every_regime_sees_the_same_workload() {
    let config = common::sandwich();
    let report = run_comparison(&config, &[0, 1, 2], &Regime::ALL).unwrap();
    for i in 0..3 {
        let digests: BTreeSet<_> = report.regimes.iter().map(|r| r.runs[i].workload_digest).collect();
        assert_eq!(digests.len(), 1);
    }
}

#[test]
fn builder_dominates_fee_ordering_per_seed() {
    let mut config = common::sandwich();
    config.slots = 40;
    let seeds: Vec<u64> = (0..10).collect();
    let report = run_comparison(&config, &seeds, &[Regime::GreedyFee, Regime::MevBuilder]).unwrap();
    let greedy = report.regime(Regime::GreedyFee).unwrap();
    let mev = report.regime(Regime::MevBuilder).unwrap();
    for (g, m) in greedy.runs.iter().zip(&mev.runs) {
        assert_eq!(g.seed, m.seed);
        assert!(
            m.metrics.attacker_profit >= g.metrics.attacker_profit,
            "seed {}",
            g.seed
        );
    }
    let rho = greedy.aggregate("fee_position_spearman").unwrap().mean.unwrap();
    assert!(rho <= -0.9, "greedy spearman {rho}");
}

/// Runs the workload with every block shuffled by an ordinary seeded RNG
/// instead of the VRF pipeline.
fn uniform_shuffle_profit(config: &ScenarioConfig, seed: u64) -> i128 {
    let mut state: ChainState = WorkloadGenerator::genesis(config);
    let mut acc = MetricsAccumulator::new(&state, config.pool_id());
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let mut generator = WorkloadGenerator::new(config, seed);
    for _ in 0..config.slots {
        let work = generator.next_slot();
        let mut pairs: Vec<(Transaction, TxLabel)> = work.transactions().into_iter().zip(work.labels()).collect();
        pairs.shuffle(&mut rng);
        let (txs, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let pre_pool = state.pools.get(&config.pool_id()).copied();
        let receipts = apply_block(&mut state, &txs);
        acc.observe(SlotObservation {
            pre_pool,
            txs: &txs,
            labels: &labels,
            receipts: &receipts,
        });
    }
    acc.finish(&state).attacker_profit
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn fairflow_profit_matches_uniform_random_ordering() {
    let mut config = common::sandwich();
    config.slots = 60;
    let seeds: Vec<u64> = (0..40).collect();
    let report = run_comparison(&config, &seeds, &[Regime::Fairflow]).unwrap();
    let fairflow: Vec<f64> = report.regimes[0]
        .runs
        .iter()
        .map(|r| r.metrics.attacker_profit as f64)
        .collect();
    let shuffled: Vec<f64> = seeds
        .iter()
        .map(|&s| uniform_shuffle_profit(&config, s + 1000) as f64)
        .collect();
    let (mf, sf) = mean_and_se(&fairflow);
    let (ms, ss) = mean_and_se(&shuffled);
    let z = (mf - ms) / (sf * sf + ss * ss).sqrt();
    assert!(z.abs() < 4.0, "fairflow {mf:.3e} vs shuffle {ms:.3e}, z = {z:.2}");
}

#[test]
fn victims_trade_in_the_configured_direction() {
    let config = common::hand_sandwich();
    for slot in generate_workload(&config, 0) {
        for (tx, label) in slot.transactions().iter().zip(slot.labels()) {
            if label == TxLabel::Victim {
                assert!(matches!(
                    tx.payload,
                    Payload::Swap {
                        direction: Direction::Buy,
                        amount_in: 10_000,
                        ..
                    }
                ));
            }
        }
    }
}
