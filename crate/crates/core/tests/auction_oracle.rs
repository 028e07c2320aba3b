use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use fairflow_core::auction::{AuctionBook, BidOutcome, ScoringWeights};
use fairflow_core::fraction;
use fairflow_core::hash::{sha256_concat, Hash32};
use fairflow_core::model::{AccountId, Bid, Slot};
use fairflow_core::vrf::VrfKeyChain;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Instance {
    capacity: u64,
    w_fee: u64,
    w_urgency: u64,
    bids: Vec<Bid>,
}

fn instance(rng: &mut ChaCha20Rng, k: u64) -> Instance {
    let capacity = rng.random_range(1..=400u64);
    let (w_fee, w_urgency) = loop {
        let w = (rng.random_range(0..=3u64), rng.random_range(0..=3u64));
        if w != (0, 0) {
            break w;
        }
    };
    let n = rng.random_range(0..=6usize);
    let bids = (0..n)
        .map(|i| {
            let mut tag = [0u8; 32];
            tag[..8].copy_from_slice(&k.to_be_bytes());
            tag[8] = i as u8;
            Bid::new(
                Hash32(tag),
                AccountId([i as u8; 20]),
                rng.random_range(0..=30u64),
                rng.random_range(0..=3u8),
                rng.random_range(1..=capacity),
                BTreeMap::new(),
            )
            .unwrap()
        })
        .collect();
    Instance {
        capacity,
        w_fee,
        w_urgency,
        bids,
    }
}

/// Exact score comparison: w_fee * fee / gas + w_urgency * urgency.
fn cmp_score(a: &Bid, b: &Bid, w_fee: u64, w_urgency: u64) -> Ordering {
    let num = |x: &Bid| {
        w_fee as u128 * x.fee_offered as u128 + w_urgency as u128 * x.urgency as u128 * x.gas_declared as u128
    };
    (num(a) * b.gas_declared as u128).cmp(&(num(b) * a.gas_declared as u128))
}

/// Greedy-by-score packing is the lexicographically greatest feasible subset
/// when bids are listed in priority order, so enumerate every subset.
fn brute_force(inst: &Instance, beta: &Hash32) -> BTreeSet<Hash32> {
    let mut order: Vec<&Bid> = inst.bids.iter().collect();
    order.sort_by(|a, b| {
        cmp_score(b, a, inst.w_fee, inst.w_urgency).then_with(|| {
            sha256_concat(&[beta.as_bytes(), a.bid_id().as_bytes()])
                .cmp(&sha256_concat(&[beta.as_bytes(), b.bid_id().as_bytes()]))
        })
    });
    let n = order.len();
    let mut best: Option<Vec<bool>> = None;
    for mask in 0u32..(1 << n) {
        let chosen: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let gas: u64 = (0..n).filter(|&i| chosen[i]).map(|i| order[i].gas_declared).sum();
        if gas > inst.capacity {
            continue;
        }
        if best.as_ref().is_none_or(|b| chosen > *b) {
            best = Some(chosen);
        }
    }
    let best = best.unwrap();
    (0..n).filter(|&i| best[i]).map(|i| order[i].bid_id()).collect()
}

#[test]
fn pure_score_selection_matches_brute_force_packing() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut nonempty = 0;
    for k in 0..200u64 {
        let inst = instance(&mut rng, k);
        let mut chain = VrfKeyChain::new([k as u8; 32], 1).unwrap();
        let slot = Slot::new(0, inst.capacity);
        let weights = ScoringWeights::new(fraction::int(inst.w_fee), fraction::int(inst.w_urgency)).unwrap();
        let mut book = AuctionBook::new();
        let round = book
            .open_round(slot, weights, fraction::zero(), chain.public_key(0).unwrap())
            .unwrap();
        for b in &inst.bids {
            assert_eq!(round.submit_bid(b.clone()), BidOutcome::Accepted);
        }
        round.close().unwrap();
        let (out, proof) = chain.evaluate(0, &slot.alpha()).unwrap();
        let result = round.decide(&out, &proof).unwrap();

        let winners: BTreeSet<Hash32> = result.winners.iter().copied().collect();
        assert_eq!(winners.len(), result.winners.len(), "instance {k}: duplicate winner");
        assert_eq!(winners, brute_force(&inst, &out.beta), "instance {k}");
        let gas: u64 = inst
            .bids
            .iter()
            .filter(|b| winners.contains(&b.bid_id()))
            .map(|b| b.gas_declared)
            .sum();
        assert!(gas <= inst.capacity, "instance {k}: capacity exceeded");
        assert_eq!(gas, result.gas_used);
        assert_eq!(result.score_tranche_len, result.winners.len());
        nonempty += !winners.is_empty() as u32;
    }
    assert!(nonempty > 150);
}
