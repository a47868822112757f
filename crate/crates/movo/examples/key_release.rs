//! The authorization service: a data owner lodges per-interval stream keys,
//! and the service releases them only to consumers the chain's ACL says are
//! authorized — wrapped to the requester so only they can unwrap.
//!
//! Run with: cargo run --example key_release

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use movo::authz::{AuthzService, KeyRegistration, KeyRequest, SIDE_KEY_INTERVAL};
use movo::chain::{Chain, ChainConfig, ContractCall};
use movo::clock::SimClock;
use movo::crypto::{hash, unwrap_key, KeyPair, SymmetricKey};

fn main() {
    let clock = SimClock::new();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let minter = KeyPair::generate(&mut rng);
    let owner = KeyPair::generate(&mut rng);
    let insurer = KeyPair::generate(&mut rng);
    let stranger = KeyPair::generate(&mut rng);

    let chain = Arc::new(Chain::new(
        clock.clone(),
        ChainConfig::with_minter(minter.address()),
    ));
    let authz = AuthzService::new(chain.clone(), 99);

    // The owner registers the channel on-chain, then lodges its side key
    // (interval id SIDE_KEY_INTERVAL) and two rotating interval keys.
    let channel_root = hash(b"camera channel");
    chain
        .submit_call(&owner, ContractCall::AclRegisterChannel { channel_root })
        .expect_ok();
    let side_key = SymmetricKey::generate(&mut rng);
    let interval_keys = [
        SymmetricKey::generate(&mut rng),
        SymmetricKey::generate(&mut rng),
    ];
    authz
        .register_key(&KeyRegistration::signed(
            &owner,
            channel_root,
            SIDE_KEY_INTERVAL,
            side_key,
        ))
        .expect("side key");
    for (interval, key) in interval_keys.iter().enumerate() {
        authz
            .register_key(&KeyRegistration::signed(
                &owner,
                channel_root,
                interval as u64,
                *key,
            ))
            .expect("interval key");
    }
    println!("owner lodged {} keys for channel {channel_root}\n", authz.key_count());

    // Before any grant, even a well-formed signed request is refused.
    let req = KeyRequest::signed(&insurer, channel_root, 0);
    println!("insurer before grant: {:?}", authz.request_key(&req).err());

    // Grant on-chain, then the same request succeeds. The reply is wrapped
    // to the requester's exchange key; only their keypair unwraps it.
    chain
        .submit_call(
            &owner,
            ContractCall::AclGrant { consumer: insurer.address(), channel_root },
        )
        .expect_ok();
    let wrapped = authz.request_key(&req).expect("authorized release");
    let recovered = unwrap_key(&insurer, &wrapped).expect("unwrap");
    assert_eq!(recovered, interval_keys[0]);
    println!("insurer after grant:  interval-0 key released and unwrapped");

    // The wrapped key is useless to anyone else.
    println!(
        "stranger unwrapping the insurer's release: {:?}",
        unwrap_key(&stranger, &wrapped).expect_err("must fail")
    );

    // Strangers are denied without learning whether the interval exists.
    for interval in [1u64, 7777] {
        let req = KeyRequest::signed(&stranger, channel_root, interval);
        println!(
            "stranger requesting interval {interval:>4}: {:?}",
            authz.request_key(&req).expect_err("denied")
        );
    }

    // Revocation turns the tap off at the next request.
    chain
        .submit_call(
            &owner,
            ContractCall::AclRevoke { consumer: insurer.address(), channel_root },
        )
        .expect_ok();
    let req = KeyRequest::signed(&insurer, channel_root, 1);
    println!("\ninsurer after revoke: {:?}", authz.request_key(&req).err());
}
