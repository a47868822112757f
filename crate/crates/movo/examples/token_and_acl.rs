//! The deterministic account chain: token mint and transfer, channel
//! ownership and consumer grants in the ACL contract, and a full
//! export-then-replay proving the state machine is its transaction log.
//!
//! Run with: cargo run --example token_and_acl

use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use movo::chain::{Chain, ChainConfig, ContractCall};
use movo::clock::SimClock;
use movo::crypto::{hash, KeyPair};

fn main() {
    let clock = SimClock::new();
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let minter = KeyPair::generate(&mut rng);
    let garage = KeyPair::generate(&mut rng);
    let vehicle = KeyPair::generate(&mut rng);

    let config = ChainConfig::with_minter(minter.address());
    let chain = Chain::new(clock.clone(), config);
    println!("minter:  {}", minter.address());
    println!("vehicle: {}", vehicle.address());
    println!("garage:  {}\n", garage.address());

    // Tokens: only the configured minter may mint; anyone may transfer what
    // they hold. Every transaction is signed and nonce-sequenced.
    chain
        .submit_call(&minter, ContractCall::Mint { to: vehicle.address(), amount: 100 })
        .expect_ok();
    chain
        .submit_call(&vehicle, ContractCall::TokenTransfer { to: garage.address(), amount: 10 })
        .expect_ok();
    println!(
        "balances after mint 100 + transfer 10: vehicle={}, garage={}",
        chain.balance(&vehicle.address()),
        chain.balance(&garage.address())
    );

    // An overdraft is rejected, not applied; the receipt carries the reason.
    let receipt = chain.submit_call(
        &vehicle,
        ContractCall::TokenTransfer { to: garage.address(), amount: 1_000_000 },
    );
    println!("overdraft attempt: {:?}", receipt.status);

    // The ACL contract maps a channel root to its owner, and the owner
    // curates the consumer set. Authorization is a pure chain-state lookup.
    let channel_root = hash(b"the vehicle's telemetry channel");
    chain
        .submit_call(&vehicle, ContractCall::AclRegisterChannel { channel_root })
        .expect_ok();
    chain
        .submit_call(
            &vehicle,
            ContractCall::AclGrant { consumer: garage.address(), channel_root },
        )
        .expect_ok();
    println!(
        "\ngarage authorized after grant?   {}",
        chain.is_authorized(&garage.address(), &channel_root)
    );
    chain
        .submit_call(
            &vehicle,
            ContractCall::AclRevoke { consumer: garage.address(), channel_root },
        )
        .expect_ok();
    println!(
        "garage authorized after revoke?  {}",
        chain.is_authorized(&garage.address(), &channel_root)
    );

    // Only the registered owner can grant. A hostile grant fails cleanly.
    let receipt = chain.submit_call(
        &garage,
        ContractCall::AclGrant { consumer: garage.address(), channel_root },
    );
    println!("grant by a non-owner: {:?}", receipt.status);

    // The whole chain replays from its exported log: same transactions at
    // the same timestamps rebuild byte-identical state.
    let mut log = Vec::new();
    chain.export_log(&mut log).expect("export");
    let replayed = Chain::replay(SimClock::new(), chain.config(), BufReader::new(&log[..]))
        .expect("replay");
    assert_eq!(replayed.snapshot(), chain.snapshot());
    println!(
        "\nexported {} txs and replayed them: snapshots byte-identical ({} bytes)",
        chain.tx_count(),
        chain.snapshot().len()
    );
}
