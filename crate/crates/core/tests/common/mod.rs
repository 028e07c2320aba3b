#![allow(dead_code)]

use fairflow_core::config::ScenarioConfig;

pub const SANDWICH: &str = include_str!("../../../../scenarios/sandwich.json");
pub const QUICKSTART: &str = include_str!("../../../../scenarios/quickstart.json");

pub fn sandwich() -> ScenarioConfig {
    ScenarioConfig::from_json(SANDWICH).expect("shipped scenario parses")
}

pub fn quickstart() -> ScenarioConfig {
    ScenarioConfig::from_json(QUICKSTART).expect("shipped scenario parses")
}

/// One victim buying 10 000 on a (10^6, 10^6) fee-free pool, sandwiched by an
/// attacker trading the same size. Victim pays 2 per gas, so the front pays 3
/// and the back 1.
pub fn hand_sandwich() -> ScenarioConfig {
    ScenarioConfig::from_json(
        r#"{
          "name": "hand-sandwich",
          "slots": 1,
          "capacity_gas": 300000,
          "pool": { "id": 0, "reserve_eth": 1000000, "reserve_token": 1000000, "fee_ppm": 0 },
          "workload": {
            "account_funding": { "eth": 1000000000, "token": 1000000000 },
            "victims_per_slot": 1,
            "victim_amount": { "min": 10000, "max": 10000 },
            "victim_fee_per_gas": { "min": 2, "max": 2 },
            "victim_buy_probability": "1",
            "attackers": [ { "kind": "sandwich" } ]
          },
          "regimes": ["greedy_fee", "mev_builder", "fairflow"]
        }"#,
    )
    .expect("hand scenario parses")
}
