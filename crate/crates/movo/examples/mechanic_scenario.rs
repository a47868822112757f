//! The mechanic use case plus report verification: a minute of 90
//! drive-train points per second (258 B each, sealed to 300 B objects),
//! the garage checking in with an on-chain fee and grant, and the report
//! then checked against an expectations file — the same machinery behind
//! `movo-sim verify`.
//!
//! Run with: cargo run --example mechanic_scenario

use movo::harness::{run_scenario, verify_report, Scenario, ScenarioConfig};

fn main() {
    let config = ScenarioConfig::preset(Scenario::Mechanic);
    println!(
        "running {}: {} s of {} points/s x {} B, check-in fee {} tokens, seed {}\n",
        config.scenario,
        config.duration_s,
        config.vehicle_rate_per_s,
        config.vehicle_point_bytes,
        config.check_in_fee,
        config.seed
    );

    let outcome = run_scenario(&config).expect("run");
    assert!(outcome.breaches.is_empty(), "breaches: {:?}", outcome.breaches);
    let r = &outcome.report;
    println!("store puts:      {:>10.1} per second", r.dfs_puts_per_sec);
    println!("store traffic:   {:>10.0} bytes/min ({:.2} MB/min)", r.dfs_bytes_per_min, r.dfs_bytes_per_min / 1e6);
    println!("channel anchors: {:>10} messages", r.mam_message_count);
    println!("on-chain txs:    {:>10} (fee transfer + grant at check-in)", r.onchain_tx_count);
    println!("recovered:       {:>10} of {} produced bytes\n", r.end_to_end_recovered_bytes, r.produced_bytes);

    // Expectations are a JSON map from metric name (dotted paths reach
    // nested fields) to a bound: equals / approx+tolerance_pct / at_least /
    // at_most. This is exactly what `movo-sim verify --expect` consumes.
    let expectations = r#"{
        "dfs_puts_per_sec":       { "approx": 90.0, "tolerance_pct": 5 },
        "dfs_bytes_per_min":      { "approx": 1620000.0, "tolerance_pct": 5 },
        "mam_message_count":      { "equals": 3 },
        "onchain_tx_count":       { "equals": 2 },
        "stream_conserved":       { "equals": 1 },
        "integrity_alarms":       { "at_most": 0 }
    }"#;
    let results = verify_report(&r.to_json(), expectations).expect("verify");
    for result in &results {
        println!("{}", result.line());
    }
    assert!(results.iter().all(|c| c.passed));
}
