//! End-of-run metrics.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::digest::{BlockHash, SpendRef, TxHash};

use super::{RunOutput, Sim};

/// Everything measured in one run. The leading fields match the CSV columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub n: u32,
    pub alpha: u32,
    pub config: u8,
    pub tau_s: f64,
    pub block_bytes: u64,
    pub malicious_frac: f64,
    pub seed: u64,
    pub slots: u32,
    pub throughput_tps: f64,
    pub latency_min_s: f64,
    pub latency_avg_s: f64,
    pub latency_max_s: f64,
    pub orphan_rate: f64,
    pub avg_round_s: f64,
    pub avg_blocks_per_cblock: f64,

    pub delta: u64,
    pub buckets: u32,
    /// First tournament counted by the windowed metrics.
    pub window_start: u64,
    pub blocks_proposed: u64,
    pub blocks_on_main_chain: u64,
    pub blocks_in_flight: u64,
    pub confirmed_txs: u64,
    pub double_spends_injected: u64,
    pub qualifiers_per_slot: Vec<u32>,
    pub fouls_declared: u64,
    /// Transactions with a shared input inside one honest confirmed prefix.
    pub safety_violations: u64,
    /// Honest confirmed prefixes never disagree.
    pub agreement: bool,
    pub confirmed_reorgs: u64,
    /// Confirmation latency of each windowed main-chain block, in seconds.
    pub latencies_s: Vec<f64>,
}

pub(super) fn build(sim: Sim) -> RunOutput {
    let cfg = &sim.cfg;
    let slots = cfg.slots as u64;
    let w0 = (cfg.f_min as u64 + 1).min(slots / 2);
    let in_window = |t: u64| t > w0 && t <= slots;
    let window_s = (slots - w0) as f64 * sim.tau.as_secs_f64();

    let honest: Vec<usize> = (0..sim.nodes.len())
        .filter(|&i| sim.nodes[i].behavior.is_honest())
        .collect();
    let main_idx = honest
        .iter()
        .copied()
        .max_by_key(|&i| (sim.nodes[i].confirmed.len(), std::cmp::Reverse(i)))
        .unwrap_or(0);
    let main = &sim.nodes[main_idx];
    let chain = main.store.chain(&main.tip).unwrap_or_default();
    let tip_t = chain.last().map_or(0, |c| c.tournament_no);
    let on_main: FxHashSet<BlockHash> = chain.iter().flat_map(|c| c.included.iter().copied()).collect();
    let confirmed_set: FxHashSet<BlockHash> = main
        .confirmed
        .iter()
        .filter_map(|h| main.store.cblock(h))
        .flat_map(|c| c.included.iter().copied())
        .collect();

    let mut proposed = 0u64;
    let mut main_count = 0u64;
    let mut in_flight = 0u64;
    let mut confirmed_txs = 0u64;
    let mut latencies = Vec::new();
    for (h, e) in &sim.emitted {
        if !in_window(e.t) {
            continue;
        }
        proposed += 1;
        if on_main.contains(h) {
            main_count += 1;
        } else if e.t >= tip_t {
            in_flight += 1;
        }
        if confirmed_set.contains(h) {
            confirmed_txs += e.txs as u64;
            if let Some(s) = sim.confirm.get(h).filter(|s| s.count > 0) {
                let mean_us = (s.sum_us / s.count as u128) as u64;
                latencies.push(mean_us.saturating_sub(e.at.0) as f64 / 1e6);
            }
        }
    }
    let settled = proposed - in_flight;
    let orphan_rate = if settled == 0 {
        0.0
    } else {
        1.0 - main_count as f64 / settled as f64
    };
    let (lmin, lavg, lmax) = if latencies.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let min = latencies.iter().copied().fold(f64::INFINITY, f64::min);
        let max = latencies.iter().copied().fold(0.0, f64::max);
        (min, latencies.iter().sum::<f64>() / latencies.len() as f64, max)
    };
    let window_cblocks: Vec<_> = chain.iter().filter(|c| in_window(c.tournament_no)).collect();
    let avg_bpc = if window_cblocks.is_empty() {
        0.0
    } else {
        window_cblocks.iter().map(|c| c.included.len()).sum::<usize>() as f64 / window_cblocks.len() as f64
    };

    let mut safety_violations = 0;
    let mut agreement = true;
    for &i in &honest {
        let n = &sim.nodes[i];
        let mut spent: FxHashMap<SpendRef, TxHash> = FxHashMap::default();
        for c in n.confirmed.iter().filter_map(|h| n.store.cblock(h)) {
            for b in c.included.iter().filter_map(|h| n.store.block(h)) {
                for tx in &b.txs {
                    for &inp in &tx.inputs {
                        match spent.insert(inp, tx.hash) {
                            Some(prev) if prev != tx.hash => safety_violations += 1,
                            _ => {}
                        }
                    }
                }
            }
        }
        if !main.confirmed.starts_with(&n.confirmed) {
            agreement = false;
        }
    }

    let malicious = sim.nodes.len() - honest.len();
    let report = RunReport {
        n: cfg.n,
        alpha: cfg.alpha,
        config: cfg.config,
        tau_s: cfg.tau_s,
        block_bytes: cfg.block_bytes,
        malicious_frac: malicious as f64 / cfg.n as f64,
        seed: cfg.seed,
        slots: cfg.slots,
        throughput_tps: confirmed_txs as f64 / window_s.max(f64::MIN_POSITIVE),
        latency_min_s: lmin,
        latency_avg_s: lavg,
        latency_max_s: lmax,
        orphan_rate,
        avg_round_s: if sim.round_time.1 == 0 {
            0.0
        } else {
            sim.round_time.0 / sim.round_time.1 as f64
        },
        avg_blocks_per_cblock: avg_bpc,
        delta: sim.delta,
        buckets: sim.rules.buckets,
        window_start: w0 + 1,
        blocks_proposed: proposed,
        blocks_on_main_chain: main_count,
        blocks_in_flight: in_flight,
        confirmed_txs,
        double_spends_injected: sim.double_spends,
        qualifiers_per_slot: (1..=slots)
            .map(|t| sim.qualifiers.get(&t).copied().unwrap_or(0))
            .collect(),
        fouls_declared: sim.fouls_declared,
        safety_violations,
        agreement,
        confirmed_reorgs: sim.confirmed_reorgs,
        latencies_s: latencies,
    };
    let mut sim = sim;
    RunOutput {
        report,
        trace: sim.trace.take().unwrap_or_default(),
        ledger: sim.nodes.swap_remove(main_idx).store,
    }
}
