//! Desk-scale smart-mobility middleware simulator.
//!
//! Everything a connected vehicle's data economy needs, modeled in one
//! process on a virtual clock: encrypted sensor streams anchored to a DAG
//! ledger, packets in a content-addressed store, sharing decisions on a
//! deterministic account chain, key release gated by that chain, and
//! pay-per-unit charging over off-chain micropayment channels. Every run is
//! reproducible from a seed; time is simulated, so a minute of telemetry
//! takes well under a second of wall clock.
//!
//! # Architecture
//!
//! | module | role |
//! |---|---|
//! | [`clock`] | shared virtual clock ([`clock::SimClock`]); all latency is modeled, never slept |
//! | [`crypto`] | signatures, content digests, authenticated encryption, key wrapping |
//! | [`ledger`] | DAG ledger ([`ledger::Tangle`]) with fixed confirmation latency, plus [`ledger::mam`] encrypted channel messaging |
//! | [`store`] | content-addressed object store with bandwidth, worker-pool and capacity modeling |
//! | [`chain`] | deterministic account chain: tokens, channel ACLs, payment channels; replayable from its log |
//! | [`authz`] | key-release service answering only to the chain's ACL state |
//! | [`p2p`] | in-process duplex transport with latency; charging protocol and road-side units |
//! | [`pipeline`] | producer ([`pipeline::Pipeline`]) and consumer ([`pipeline::Consumer`]) of encrypted sensor streams |
//! | [`harness`] | packaged scenarios, metrics reports, expectation checking — the engine behind `movo-sim` |
//!
//! The data path: a [`pipeline::Pipeline`] batches sensor samples into
//! packets, seals each with a rotating interval key, uploads them to the
//! [`store`], and anchors a per-interval manifest of packet digests to the
//! ledger over an encrypted channel. A [`pipeline::Consumer`] granted access
//! on the [`chain`] obtains keys from [`authz`], walks the channel, fetches
//! and verifies every packet, and proves byte-exact conservation.
//!
//! # Quick start
//!
//! ```
//! use movo::harness::{run_scenario, Scenario, ScenarioConfig};
//!
//! let config = ScenarioConfig::preset(Scenario::Mechanic);
//! let outcome = run_scenario(&config).unwrap();
//! assert!(outcome.breaches.is_empty());
//! assert_eq!(outcome.report.dfs_puts_per_sec, 90.0);
//! assert!(outcome.report.stream_conserved);
//! ```
//!
//! # Examples
//!
//! Each major capability has a runnable example (`cargo run --example <name>`):
//!
//! - `tangle_basics` — attach, confirm, dump and reload ledger transactions
//! - `mam_stream` — encrypted channel publish/fetch, chunking, tamper detection
//! - `content_store` — digests, deduplication, service latency, queueing
//! - `token_and_acl` — mint/transfer, grants and revocations, log replay
//! - `key_release` — chain-gated key release, wrapped to the requester
//! - `sensor_pipeline` — the full producer-to-consumer data path by hand
//! - `charging_micropayments` — escrow, signed balance updates, settlement
//! - `location_certificate` — road-side units attesting presence
//! - `insurance_scenario`, `mechanic_scenario`, `store_saturation` — packaged
//!   scenarios with their metrics reports
//!
//! The `movo-sim` binary wraps the harness for the command line: `movo-sim
//! run <scenario>` emits a metrics report (and, with `--out`, an event log),
//! `movo-sim verify` checks a report against an expectations file.

pub mod authz;
pub mod chain;
pub mod clock;
pub mod crypto;
pub mod harness;
pub mod ledger;
pub mod p2p;
pub mod pipeline;
pub mod store;
