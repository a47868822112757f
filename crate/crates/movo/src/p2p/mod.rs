//! Direct device-to-device messaging: a simulated radio-range peer registry,
//! reliable in-process duplex pipes, and a framed canonical-JSON protocol.
//!
//! The transport stands in for Wi-Fi Direct. It is ordered and reliable by
//! construction; configurable latency and a drop-injection hook cover the
//! fault cases worth testing. Everything above the pipe (framing, message
//! vocabulary, certificate issuance, the micropayment session) is the real
//! protocol and is specified bit-exactly.

mod charging;
mod rsu;

pub use charging::{
    close_session, run_charging_session, ChargingClient, ChargingReport, ChargingServer,
    SessionPlan, Transcript, TranscriptError,
};
pub use rsu::{request_location_certificate, LocationCertificate, Rsu};

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SimClock;
use crate::crypto::{canonical_json, Address, Digest, SignatureBytes};

#[derive(Debug, Error)]
pub enum P2pError {
    #[error("unknown peer: {0}")]
    UnknownPeer(String),
    /// The pipe was closed under the session; both sides observe this.
    #[error("session dropped")]
    SessionDropped,
    #[error("no frame pending")]
    NoFrame,
    #[error("malformed frame: {0}")]
    BadFrame(String),
    /// The peer answered with an `ERR` message.
    #[error("protocol error {code}: {detail}")]
    Protocol { code: String, detail: String },
    #[error("invalid session transition {from:?} -> {to:?}")]
    BadTransition {
        from: SessionState,
        to: SessionState,
    },
    #[error("unexpected message, wanted {0}")]
    Unexpected(&'static str),
}

// ---------------------------------------------------------------------------
// Message vocabulary
// ---------------------------------------------------------------------------

/// Every frame body is one of these, tagged by its mandatory `"type"` field.
/// The vocabulary is closed: decoding rejects unknown types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    #[serde(rename = "LOC_CERT_REQ")]
    LocCertReq { subject: Address },
    #[serde(rename = "LOC_CERT_RESP")]
    LocCertResp { certificate: LocationCertificate },
    /// Client opens a session over an already-escrowed on-chain channel.
    #[serde(rename = "PAY_OPEN_INFO")]
    PayOpenInfo {
        channel_id: Digest,
        deposit: u64,
        price_per_unit: u64,
    },
    /// Client-signed balance statement; one per requested service unit.
    #[serde(rename = "PAY_UPDATE")]
    PayUpdate {
        channel_id: Digest,
        seq: u64,
        balance: u64,
        client_sig: SignatureBytes,
    },
    /// Server countersignature over the same (channel, seq, balance) payload.
    /// `seq` 0 acknowledges session open before any unit is delivered.
    #[serde(rename = "PAY_RECEIPT")]
    PayReceipt {
        channel_id: Digest,
        seq: u64,
        balance: u64,
        price_per_unit: u64,
        units_delivered: u64,
        server_sig: SignatureBytes,
    },
    #[serde(rename = "PAY_PAUSE")]
    PayPause { channel_id: Digest },
    #[serde(rename = "PAY_RESUME")]
    PayResume { channel_id: Digest },
    /// Client's final statement; the server settles it on-chain.
    #[serde(rename = "PAY_CLOSE")]
    PayClose {
        channel_id: Digest,
        final_seq: u64,
        final_balance: u64,
        client_sig: SignatureBytes,
    },
    #[serde(rename = "ERR")]
    Err { code: String, detail: String },
}

/// Shared session lifecycle. Only the edges below are legal:
/// Init -> Active -> (Paused <-> Active) -> Closing -> Done, plus
/// Init -> Closing for sessions aborted before activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Init,
    Active,
    Paused,
    Closing,
    Done,
}

impl SessionState {
    pub(crate) fn transition(&mut self, to: SessionState) -> Result<(), P2pError> {
        use SessionState::*;
        let ok = matches!(
            (*self, to),
            (Init, Active)
                | (Active, Paused)
                | (Paused, Active)
                | (Active, Closing)
                | (Paused, Closing)
                | (Init, Closing)
                | (Closing, Done)
        );
        if !ok {
            return Err(P2pError::BadTransition { from: *self, to });
        }
        *self = to;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Frame codec: 4-byte big-endian length prefix + canonical JSON body
// ---------------------------------------------------------------------------

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let body = canonical_json(msg);
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decode exactly one frame. The length prefix must equal the body length
/// and the body must parse as a known message type.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, P2pError> {
    if bytes.len() < 4 {
        return Err(P2pError::BadFrame("truncated length prefix".into()));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() != len {
        return Err(P2pError::BadFrame(format!(
            "length prefix {len} != body length {}",
            body.len()
        )));
    }
    serde_json::from_slice(body).map_err(|e| P2pError::BadFrame(e.to_string()))
}

// ---------------------------------------------------------------------------
// Transport: registry + duplex pipe
// ---------------------------------------------------------------------------

/// A frame in flight, stamped with its delivery time.
type InFlight = (u64, Vec<u8>);

struct PipeShared {
    closed: AtomicBool,
    latency_ms: u64,
    /// queue[d] holds frames in flight toward the endpoint with dir == d.
    queues: [Mutex<VecDeque<InFlight>>; 2],
}

/// One end of a connected duplex pipe. Frames arrive in send order, without
/// duplication, `latency_ms` after they were sent.
pub struct Endpoint {
    clock: SimClock,
    shared: Arc<PipeShared>,
    dir: usize,
    drop_next: AtomicBool,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("dir", &self.dir)
            .field("open", &self.is_open())
            .finish()
    }
}

impl Endpoint {
    fn pair(clock: &SimClock, latency_ms: u64) -> (Endpoint, Endpoint) {
        let shared = Arc::new(PipeShared {
            closed: AtomicBool::new(false),
            latency_ms,
            queues: [Mutex::new(VecDeque::new()), Mutex::new(VecDeque::new())],
        });
        let a = Endpoint {
            clock: clock.clone(),
            shared: Arc::clone(&shared),
            dir: 0,
            drop_next: AtomicBool::new(false),
        };
        let b = Endpoint {
            clock: clock.clone(),
            shared,
            dir: 1,
            drop_next: AtomicBool::new(false),
        };
        (a, b)
    }

    /// Queue raw bytes toward the peer.
    pub fn send_bytes(&self, frame: &[u8]) -> Result<(), P2pError> {
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(P2pError::SessionDropped);
        }
        if self.drop_next.swap(false, Ordering::SeqCst) {
            // Fault injection: the radio ate the frame; the sender is none
            // the wiser.
            return Ok(());
        }
        let deliver_at = self.clock.now_ms() + self.shared.latency_ms;
        self.shared.queues[1 - self.dir]
            .lock()
            .unwrap()
            .push_back((deliver_at, frame.to_vec()));
        Ok(())
    }

    /// Take the next frame, waiting out transit latency if needed (the wait
    /// advances the simulated clock). Frames already in flight remain
    /// readable after a disconnect; afterwards the drop surfaces.
    pub fn recv_bytes(&self) -> Result<Vec<u8>, P2pError> {
        let mut q = self.shared.queues[self.dir].lock().unwrap();
        if let Some((deliver_at, frame)) = q.pop_front() {
            self.clock.advance_to_ms(deliver_at);
            return Ok(frame);
        }
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(P2pError::SessionDropped);
        }
        Err(P2pError::NoFrame)
    }

    /// Take the next frame if one has been sent, waiting out its transit
    /// latency (the wait advances the simulated clock). `Ok(None)` means
    /// the peer has sent nothing — the discrete-event idiom for a server
    /// that sleeps until a request arrives or its queue is empty.
    pub fn recv_sent_bytes(&self) -> Result<Option<Vec<u8>>, P2pError> {
        let mut q = self.shared.queues[self.dir].lock().unwrap();
        if let Some((deliver_at, frame)) = q.pop_front() {
            self.clock.advance_to_ms(deliver_at);
            return Ok(Some(frame));
        }
        if self.shared.closed.load(Ordering::SeqCst) {
            return Err(P2pError::SessionDropped);
        }
        Ok(None)
    }

    /// Non-waiting variant: only frames whose delivery time has passed.
    pub fn try_recv_bytes(&self) -> Result<Option<Vec<u8>>, P2pError> {
        let mut q = self.shared.queues[self.dir].lock().unwrap();
        match q.front() {
            Some((deliver_at, _)) if *deliver_at <= self.clock.now_ms() => {
                Ok(Some(q.pop_front().unwrap().1))
            }
            Some(_) => Ok(None),
            None if self.shared.closed.load(Ordering::SeqCst) => Err(P2pError::SessionDropped),
            None => Ok(None),
        }
    }

    pub fn send(&self, msg: &Message) -> Result<(), P2pError> {
        self.send_bytes(&encode_frame(msg))
    }

    pub fn recv(&self) -> Result<Message, P2pError> {
        decode_frame(&self.recv_bytes()?)
    }

    /// True while neither side has hung up.
    pub fn is_open(&self) -> bool {
        !self.shared.closed.load(Ordering::SeqCst)
    }

    /// Hang up. Both sides observe the drop once in-flight frames drain.
    pub fn disconnect(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
    }

    /// Fault injection: silently discard the next frame this endpoint sends.
    pub fn inject_drop_next(&self) {
        self.drop_next.store(true, Ordering::SeqCst);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PeerInfo {
    pub name: String,
    pub address: Address,
}

struct RegisteredPeer {
    address: Address,
    backlog: Arc<Mutex<VecDeque<Endpoint>>>,
}

/// Accept side of a registration: connections queue here until taken.
pub struct Listener {
    backlog: Arc<Mutex<VecDeque<Endpoint>>>,
}

impl Listener {
    pub fn accept(&self) -> Option<Endpoint> {
        self.backlog.lock().unwrap().pop_front()
    }
}

/// Simulated radio range: whoever is registered can be discovered and
/// connected to by name.
pub struct PeerRegistry {
    clock: SimClock,
    peers: Mutex<BTreeMap<String, RegisteredPeer>>,
}

impl PeerRegistry {
    pub fn new(clock: SimClock) -> PeerRegistry {
        PeerRegistry {
            clock,
            peers: Mutex::new(BTreeMap::new()),
        }
    }

    /// Enter radio range. Re-registering a name replaces the entry.
    pub fn register(&self, name: &str, address: Address) -> Listener {
        let backlog = Arc::new(Mutex::new(VecDeque::new()));
        self.peers.lock().unwrap().insert(
            name.to_string(),
            RegisteredPeer {
                address,
                backlog: Arc::clone(&backlog),
            },
        );
        Listener { backlog }
    }

    pub fn deregister(&self, name: &str) {
        self.peers.lock().unwrap().remove(name);
    }

    /// All peers currently in range, in name order.
    pub fn discover(&self) -> Vec<PeerInfo> {
        self.peers
            .lock()
            .unwrap()
            .iter()
            .map(|(name, p)| PeerInfo {
                name: name.clone(),
                address: p.address,
            })
            .collect()
    }

    pub fn connect(&self, name: &str) -> Result<Endpoint, P2pError> {
        self.connect_with_latency(name, 0)
    }

    pub fn connect_with_latency(&self, name: &str, latency_ms: u64) -> Result<Endpoint, P2pError> {
        let peers = self.peers.lock().unwrap();
        let peer = peers
            .get(name)
            .ok_or_else(|| P2pError::UnknownPeer(name.to_string()))?;
        let (caller, callee) = Endpoint::pair(&self.clock, latency_ms);
        peer.backlog.lock().unwrap().push_back(callee);
        Ok(caller)
    }
}

/// Map an `ERR` message into the error type; anything else passes through.
pub(crate) fn reject_err(msg: Message) -> Result<Message, P2pError> {
    match msg {
        Message::Err { code, detail } => Err(P2pError::Protocol { code, detail }),
        other => Ok(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn clock() -> SimClock {
        SimClock::new()
    }

    #[test]
    fn register_then_discover_finds_one_peer() {
        let registry = PeerRegistry::new(clock());
        let addr = Address([7u8; 20]);
        let _listener = registry.register("rsu-1", addr);
        let found = registry.discover();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].name, "rsu-1");
        assert_eq!(found[0].address, addr);
    }

    #[test]
    fn connect_send_echo_is_byte_exact() {
        let registry = PeerRegistry::new(clock());
        let listener = registry.register("echo", Address([1u8; 20]));
        let client = registry.connect("echo").unwrap();
        let server = listener.accept().unwrap();

        let payload = b"\x00\x01\xfe frame bytes \xff";
        client.send_bytes(payload).unwrap();
        let got = server.recv_bytes().unwrap();
        server.send_bytes(&got).unwrap();
        assert_eq!(client.recv_bytes().unwrap(), payload.to_vec());
    }

    #[test]
    fn connect_to_unregistered_peer_fails() {
        let registry = PeerRegistry::new(clock());
        match registry.connect("nobody") {
            Err(P2pError::UnknownPeer(name)) => assert_eq!(name, "nobody"),
            other => panic!("expected UnknownPeer, got {other:?}"),
        }
    }

    #[test]
    fn latency_delays_delivery_and_recv_waits_it_out() {
        let c = clock();
        let registry = PeerRegistry::new(c.clone());
        let listener = registry.register("far", Address([2u8; 20]));
        let client = registry.connect_with_latency("far", 50).unwrap();
        let server = listener.accept().unwrap();

        client.send_bytes(b"hello").unwrap();
        assert!(server.try_recv_bytes().unwrap().is_none());
        assert_eq!(server.recv_bytes().unwrap(), b"hello");
        assert_eq!(c.now_ms(), 50);
    }

    #[test]
    fn disconnect_surfaces_to_both_sides_after_draining() {
        let registry = PeerRegistry::new(clock());
        let listener = registry.register("peer", Address([3u8; 20]));
        let a = registry.connect("peer").unwrap();
        let b = listener.accept().unwrap();

        a.send_bytes(b"in flight").unwrap();
        b.disconnect();
        // The frame already in transit is still readable, then the drop shows.
        assert_eq!(b.recv_bytes().unwrap(), b"in flight");
        assert!(matches!(b.recv_bytes(), Err(P2pError::SessionDropped)));
        assert!(matches!(a.send_bytes(b"x"), Err(P2pError::SessionDropped)));
        assert!(matches!(a.recv_bytes(), Err(P2pError::SessionDropped)));
    }

    #[test]
    fn injected_drop_discards_exactly_one_frame() {
        let registry = PeerRegistry::new(clock());
        let listener = registry.register("lossy", Address([4u8; 20]));
        let a = registry.connect("lossy").unwrap();
        let b = listener.accept().unwrap();

        a.inject_drop_next();
        a.send_bytes(b"lost").unwrap();
        a.send_bytes(b"kept").unwrap();
        assert_eq!(b.recv_bytes().unwrap(), b"kept");
        assert!(matches!(b.recv_bytes(), Err(P2pError::NoFrame)));
    }

    #[test]
    fn frames_round_trip_and_reject_unknown_types() {
        let msg = Message::PayPause {
            channel_id: Digest([9u8; 32]),
        };
        let frame = encode_frame(&msg);
        assert_eq!(&frame[..4], &(frame.len() as u32 - 4).to_be_bytes());
        assert_eq!(decode_frame(&frame).unwrap(), msg);

        let body = br#"{"type":"NOPE","x":1}"#;
        let mut bad = ((body.len()) as u32).to_be_bytes().to_vec();
        bad.extend_from_slice(body);
        assert!(matches!(decode_frame(&bad), Err(P2pError::BadFrame(_))));
    }

    #[test]
    fn frame_length_mismatch_is_rejected() {
        let mut frame = encode_frame(&Message::PayResume {
            channel_id: Digest([1u8; 32]),
        });
        let wrong = (frame.len() as u32) + 3; // anything but body length
        frame[..4].copy_from_slice(&wrong.to_be_bytes());
        assert!(matches!(decode_frame(&frame), Err(P2pError::BadFrame(_))));
        assert!(matches!(decode_frame(&[0, 0]), Err(P2pError::BadFrame(_))));
    }

    #[test]
    fn fuzzed_traffic_arrives_in_order_without_duplication() {
        let c = clock();
        let registry = PeerRegistry::new(c.clone());
        let listener = registry.register("sink", Address([5u8; 20]));
        let tx = registry.connect_with_latency("sink", 3).unwrap();
        let rx = listener.accept().unwrap();

        let mut rng = ChaCha12Rng::seed_from_u64(0xf00d);
        let mut next_send = 0u64;
        let mut expected = 0u64;
        while expected < 500 {
            // Randomly interleave bursts of sends with receives.
            if next_send < 500 && (next_send == expected || rng.random_bool(0.6)) {
                let n = rng.random_range(1..5u64);
                for _ in 0..n.min(500 - next_send) {
                    tx.send_bytes(&next_send.to_be_bytes()).unwrap();
                    next_send += 1;
                }
            } else {
                let frame = rx.recv_bytes().unwrap();
                let seq = u64::from_be_bytes(frame.as_slice().try_into().unwrap());
                assert_eq!(seq, expected, "out-of-order or duplicated frame");
                expected += 1;
            }
            if rng.random_bool(0.3) {
                c.advance_ms(rng.random_range(0..4));
            }
        }
        assert!(matches!(rx.recv_bytes(), Err(P2pError::NoFrame)));
    }

    #[test]
    fn session_state_edges_are_enforced() {
        let mut s = SessionState::Init;
        assert!(matches!(
            s.transition(SessionState::Paused),
            Err(P2pError::BadTransition { .. })
        ));
        s.transition(SessionState::Active).unwrap();
        s.transition(SessionState::Paused).unwrap();
        s.transition(SessionState::Active).unwrap();
        s.transition(SessionState::Closing).unwrap();
        assert!(matches!(
            s.transition(SessionState::Active),
            Err(P2pError::BadTransition { .. })
        ));
        s.transition(SessionState::Done).unwrap();
        assert_eq!(s, SessionState::Done);
    }
}
