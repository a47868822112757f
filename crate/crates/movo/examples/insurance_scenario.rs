//! The insurance use case as a packaged scenario: a minute of dash-cam
//! video (10 frames/s at 100 KB) streamed through the full pipeline, then
//! recovered by the insurer. Prints the metrics report and the headline
//! rates, including the 70-minute commute projection.
//!
//! Run with: cargo run --example insurance_scenario

use movo::harness::{run_scenario, Scenario, ScenarioConfig};

fn main() {
    let config = ScenarioConfig::preset(Scenario::Insurance);
    println!(
        "running {}: {} s of {} frames/s x {} B, manifest every {} s, seed {}\n",
        config.scenario,
        config.duration_s,
        config.camera_fps,
        config.frame_bytes,
        config.anchor_every_s,
        config.seed
    );

    let outcome = run_scenario(&config).expect("run");
    assert!(outcome.breaches.is_empty(), "breaches: {:?}", outcome.breaches);
    let r = &outcome.report;

    println!("store traffic:   {:>12.0} bytes/min ({:.2} MB/min)", r.dfs_bytes_per_min, r.dfs_bytes_per_min / 1e6);
    println!("store puts:      {:>12.1} per second", r.dfs_puts_per_sec);
    println!("channel anchors: {:>12} messages ({} ledger txs each)", r.mam_message_count, r.ledger_txs_per_mam_message);
    println!("anchor latency:  {:>12.0} ms mean to confirmation", r.mean_anchor_confirmation_ms);
    println!("recovered:       {:>12} of {} produced bytes", r.end_to_end_recovered_bytes, r.produced_bytes);
    println!("stream conserved: {:>11}", r.stream_conserved);
    println!(
        "70-min commute:  {:>12.2} GB projected",
        r.projected_70min_bytes / 1e9
    );

    println!("\nfull report:\n{}", r.to_json());
    println!("event log ({} events):", outcome.events.len());
    for event in outcome.events.iter().take(8) {
        println!("  {event}");
    }
    if outcome.events.len() > 8 {
        println!("  ... {} more", outcome.events.len() - 8);
    }
}
