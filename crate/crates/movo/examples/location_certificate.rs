//! Road-side units attest presence: a vehicle asks the RSU it is passing
//! for a signed "you were here at this time" certificate, verifiable
//! offline by anyone holding the RSU's public key.
//!
//! Run with: cargo run --example location_certificate

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use movo::clock::SimClock;
use movo::crypto::KeyPair;
use movo::p2p::{request_location_certificate, PeerRegistry, Rsu};

fn main() {
    let clock = SimClock::new();
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let rsu_keys = KeyPair::generate(&mut rng);
    let vehicle = KeyPair::generate(&mut rng);
    let intruder = KeyPair::generate(&mut rng);

    // An RSU at a fixed position, restricted to enrolled vehicles.
    let rsu_pk = rsu_keys.public_key();
    let rsu = Rsu::new(rsu_keys, 52.5163, 13.3777, clock.clone())
        .with_allowlist([vehicle.address()]);

    let registry = PeerRegistry::new(clock.clone());
    let listener = registry.register("rsu-brandenburg-gate", rsu.address());
    let vehicle_ep = registry
        .connect_with_latency("rsu-brandenburg-gate", 2)
        .expect("connect");
    let rsu_ep = listener.accept().expect("accept");

    clock.advance_ms(37_000);
    let cert = request_location_certificate(&vehicle_ep, &rsu, &rsu_ep, vehicle.address())
        .expect("certificate");
    println!(
        "certificate: subject {} at ({:.4}, {:.4}), issued t={} ms",
        cert.subject, cert.lat, cert.lon, cert.issued_at
    );
    println!("verifies against the RSU key: {}", cert.verify(&rsu_pk));

    // Verification is bound to the exact field values...
    let mut forged = cert.clone();
    forged.lat += 0.5;
    println!("with a shifted latitude:      {}", forged.verify(&rsu_pk));

    // ...and unknown subjects are refused at the protocol level.
    let refused =
        request_location_certificate(&vehicle_ep, &rsu, &rsu_ep, intruder.address());
    println!("unenrolled subject: {:?}", refused.expect_err("refused"));
}
