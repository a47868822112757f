//! What happens when the pipe is too small: the same 90 puts/s mechanic
//! load offered to a store with only 30 workers and 500 ms base latency.
//! Completed throughput plateaus at the queueing bound while the backlog
//! grows — demand outrunning service, made visible.
//!
//! Run with: cargo run --example store_saturation

use movo::harness::{run_scenario, Scenario, ScenarioConfig};

fn main() {
    let config = ScenarioConfig::preset(Scenario::Saturation);
    println!(
        "running {}: {} puts/s offered to a store with {} workers, {} ms base latency\n",
        config.scenario,
        config.vehicle_rate_per_s,
        config.store_concurrent_limit,
        config.store_base_latency_ms
    );

    let outcome = run_scenario(&config).expect("run");
    assert!(outcome.breaches.is_empty(), "breaches: {:?}", outcome.breaches);
    let r = &outcome.report;
    let bound = r.saturation_bound_puts_per_s.expect("bound");

    println!("offered:    {:>8.2} puts/s", r.dfs_puts_per_sec);
    println!("completed:  {:>8.2} puts/s", r.dfs_completed_puts_per_sec);
    println!(
        "bound:      {:>8.2} puts/s  (workers x 1000 / per-put service ms)",
        bound
    );
    println!(
        "\nthe store accepted every request (conservation still holds end to\n\
         end: {} of {} bytes recovered) but completions ran at {:.0}% of the\n\
         offered load — the backlog at the end of the minute is the gap.",
        r.end_to_end_recovered_bytes,
        r.produced_bytes,
        100.0 * r.dfs_completed_puts_per_sec / r.dfs_puts_per_sec
    );
    assert!(r.dfs_completed_puts_per_sec < r.dfs_puts_per_sec);
    assert!((r.dfs_completed_puts_per_sec - bound).abs() <= bound * 0.10);
}
