use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bucketing::{Transaction, TxFeed};
use crate::digest::SpendRef;
use crate::time::SimTime;

/// Double-spends pick their victim among this many most recent transactions.
const VICTIM_WINDOW: usize = 2_000;

/// Poisson arrivals at `rate` per second until `end`. Each transaction
/// spends one fresh input; a double-spend also spends an earlier
/// transaction's input. Every pool sees a transaction `delay` after it is
/// created.
pub(crate) fn generate_feed(
    buckets: u32,
    rate: f64,
    double_spend_rate: f64,
    tx_bytes: u32,
    end: SimTime,
    delay: SimTime,
    rng: &mut ChaCha8Rng,
) -> (TxFeed, u64) {
    let mut feed = TxFeed::new(buckets).expect("buckets > 0");
    let mut recent: Vec<SpendRef> = Vec::new();
    let mut next_input = 0u64;
    let mut double_spends = 0u64;
    if rate <= 0.0 {
        return (feed, 0);
    }
    let mut now = 0.0f64;
    loop {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        now += -u.ln() / rate;
        let at = SimTime::from_secs_f64(now);
        if at >= end {
            break;
        }
        let fresh = SpendRef(next_input);
        next_input += 1;
        let mut inputs = vec![fresh];
        if !recent.is_empty() && rng.gen_bool(double_spend_rate) {
            let lo = recent.len().saturating_sub(VICTIM_WINDOW);
            inputs.push(recent[rng.gen_range(lo..recent.len())]);
            double_spends += 1;
        }
        recent.push(fresh);
        let tx = Transaction::new(inputs, Vec::new(), tx_bytes);
        feed.push(Arc::new(tx), at + delay);
    }
    (feed, double_spends)
}
