//! Paying for energy one signed balance update at a time: escrow a deposit
//! in an on-chain payment channel, stream co-signed updates off-chain over
//! a latency-modeled pipe (with a pause mid-session), then settle with a
//! single closing transaction.
//!
//! Run with: cargo run --example charging_micropayments

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use movo::chain::{Chain, ChainConfig, ContractCall};
use movo::clock::SimClock;
use movo::crypto::KeyPair;
use movo::p2p::{
    close_session, run_charging_session, ChargingClient, ChargingServer, PeerRegistry,
    SessionPlan,
};

fn main() {
    let clock = SimClock::new();
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let minter = KeyPair::generate(&mut rng);
    let driver = KeyPair::generate(&mut rng);
    let station_keys = KeyPair::generate(&mut rng);

    let chain = Arc::new(Chain::new(
        clock.clone(),
        ChainConfig::with_minter(minter.address()),
    ));

    // On-chain setup: fund the driver, escrow 100 tokens against the
    // station. These are the first of exactly two on-chain transactions
    // the driver's session will need.
    chain
        .submit_call(&minter, ContractCall::Mint { to: driver.address(), amount: 100 })
        .expect_ok();
    let receipt = chain
        .submit_call(
            &driver,
            ContractCall::PaychanOpen { server_pk: station_keys.public_key(), deposit: 100 },
        )
        .expect_ok();
    let channel_id = receipt.opened_channel.expect("channel id");
    let channel = chain.paychan(&channel_id).expect("channel record");
    println!("escrowed {} tokens in channel {channel_id}", channel.deposit);

    // Off-chain setup: the station listens on the registry; the driver
    // connects over a 5 ms duplex pipe.
    let registry = PeerRegistry::new(clock.clone());
    let listener = registry.register("charging-station", station_keys.address());
    let price = 5;
    let station = ChargingServer::new(station_keys, chain.clone(), price);
    let driver_ep = registry
        .connect_with_latency("charging-station", 5)
        .expect("connect");
    let station_ep = listener.accept().expect("accept");

    // The session: one signed balance update per unit, pausing once after
    // unit 3 (a plug check, say) and resuming.
    let mut client = ChargingClient::new(driver.clone(), &channel, price);
    let plan = SessionPlan { units_wanted: 8, pause_after: Some(3) };
    let report = run_charging_session(&mut client, &station, &driver_ep, &station_ep, &plan)
        .expect("session");
    println!(
        "delivered {} units for {} updates sent ({} rejected), t={} ms",
        report.units_delivered,
        report.updates_sent,
        report.updates_rejected,
        clock.now_ms()
    );

    // Every co-signed update is on the session transcript, verifiable by
    // a third party offline.
    let transcript = client.transcript();
    transcript.verify().expect("transcript verifies");
    println!("transcript: {} co-signed entries, all signatures check", transcript.entries.len());

    // Settlement: the server submits the final co-signed balance on-chain
    // (the session's second and last on-chain transaction). Escrow splits
    // exactly; nothing is lost or invented.
    let settlement = close_session(&mut client, &station, &driver_ep, &station_ep)
        .expect("settle");
    println!(
        "settled: station payout {}, driver refund {} (deposit {})",
        settlement.server_payout, settlement.client_refund, channel.deposit
    );
    assert_eq!(settlement.server_payout + settlement.client_refund, channel.deposit);
    assert_eq!(settlement.server_payout, report.units_delivered * price);
    println!(
        "on-chain balances: driver {}, station {}",
        chain.balance(&driver.address()),
        chain.balance(&station.address())
    );
}
