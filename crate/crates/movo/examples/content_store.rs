//! The content-addressed store: objects live under their own digest,
//! duplicate puts cost nothing, service time scales with size, and a
//! bounded worker pool queues what it cannot start.
//!
//! Run with: cargo run --example content_store

use movo::clock::SimClock;
use movo::store::{Store, StoreConfig};

fn main() {
    let clock = SimClock::new();
    let store = Store::new(
        clock.clone(),
        StoreConfig {
            base_latency_ms: 50,
            bandwidth_bytes_per_s: 50_000_000,
            concurrent_limit: 4,
            capacity_bytes: None,
            stats_window_ms: 60_000,
            persist_dir: None,
        },
    )
    .expect("store");

    // Every object is addressed by the hash of its bytes.
    let frame = vec![0xAB; 100_000];
    let receipt = store.put(&frame).expect("put");
    println!("object digest:  {}", receipt.digest);
    println!(
        "accepted t={} ms, service completes t={} ms ({} ms for 100 KB)",
        receipt.accepted_at,
        receipt.completes_at,
        receipt.completes_at - receipt.accepted_at
    );
    assert_eq!(store.get(&receipt.digest).as_deref(), Some(&frame[..]));

    // Identical bytes deduplicate: same digest, no new object.
    let again = store.put(&frame).expect("put");
    println!(
        "same bytes again: deduplicated={}, object_count={}",
        again.deduplicated,
        store.stats().object_count
    );

    // With 4 workers, a burst of 8 equal-sized puts starts in two waves:
    // the queue holds what the pool cannot service yet.
    println!("\nburst of 8 puts through 4 workers:");
    for n in 0..8u8 {
        let receipt = store.put(&vec![n; 250_000]).expect("put");
        println!(
            "  put {n}: starts {:>4} ms, completes {:>4} ms",
            receipt.completes_at - store.service_time_ms(250_000),
            receipt.completes_at
        );
    }
    let stats = store.stats();
    println!(
        "stats: {} objects, {} bytes, {} puts in flight",
        stats.object_count, stats.total_bytes, stats.in_flight
    );

    // Corruption flips a stored bit in place; readers see different bytes
    // under the same digest, which integrity checks upstream will catch.
    store.corrupt(&receipt.digest, 99);
    let tampered = store.get(&receipt.digest).expect("still present");
    println!(
        "\nafter corrupt(): stored bytes still {} long, byte 99 is now 0x{:02X} (was 0xAB)",
        tampered.len(),
        tampered[99]
    );
}
