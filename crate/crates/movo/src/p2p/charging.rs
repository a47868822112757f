//! Off-chain micropayment sessions for the charging service.
//!
//! The deposit is escrowed on-chain before the session starts; afterwards the
//! only other ledger touch is the close. In between, every service unit costs
//! one client-signed balance update which the server countersigns and answers
//! with a receipt. The co-signed transcript is self-verifying and the final
//! co-signed state is exactly what the contract settles.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Endpoint, Message, P2pError, SessionState};
use crate::chain::{
    balance_update_payload, BalanceUpdate, Chain, ChannelStatus, ContractCall, PaymentChannel,
    Settlement,
};
use crate::crypto::{canonical_json, verify, Digest, KeyPair, PublicKeyBytes, SignatureBytes};

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("line {0} is not in canonical form")]
    NonCanonical(usize),
    #[error("transcript must begin with exactly one header line")]
    Header,
    #[error("entry {index}: {reason}")]
    Entry { index: usize, reason: String },
    #[error("close entry: {0}")]
    Close(String),
}

/// Complete record of one charging session: the channel parameters and every
/// co-signed balance update in order. Self-verifying: signatures and the
/// seq/balance arithmetic are checkable by anyone, offline.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    pub channel_id: Digest,
    pub client_pk: PublicKeyBytes,
    pub server_pk: PublicKeyBytes,
    pub deposit: u64,
    pub price_per_unit: u64,
    /// One entry per delivered service unit, seq 1..=n.
    pub entries: Vec<BalanceUpdate>,
    /// The co-signed statement the channel was (or will be) closed with.
    pub close_entry: Option<BalanceUpdate>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "line")]
enum TranscriptLine {
    #[serde(rename = "header")]
    Header {
        channel_id: Digest,
        client_pk: PublicKeyBytes,
        server_pk: PublicKeyBytes,
        deposit: u64,
        price_per_unit: u64,
    },
    #[serde(rename = "update")]
    Update { update: BalanceUpdate },
    #[serde(rename = "close")]
    Close { update: BalanceUpdate },
}

impl Transcript {
    fn new(channel: &PaymentChannel, price_per_unit: u64) -> Transcript {
        Transcript {
            channel_id: channel.channel_id,
            client_pk: channel.client_pk,
            server_pk: channel.server_pk,
            deposit: channel.deposit,
            price_per_unit,
            entries: Vec::new(),
            close_entry: None,
        }
    }

    fn check_entry(&self, index: usize, e: &BalanceUpdate) -> Result<(), TranscriptError> {
        let fail = |reason: String| TranscriptError::Entry { index, reason };
        if e.channel_id != self.channel_id {
            return Err(fail("wrong channel".into()));
        }
        let seq = (index + 1) as u64;
        if e.seq != seq {
            return Err(fail(format!("seq {} where {} expected", e.seq, seq)));
        }
        if e.balance != seq * self.price_per_unit {
            return Err(fail(format!(
                "balance {} is not seq x price {}",
                e.balance,
                seq * self.price_per_unit
            )));
        }
        if e.balance > self.deposit {
            return Err(fail("balance exceeds deposit".into()));
        }
        let payload = balance_update_payload(&e.channel_id, e.seq, e.balance);
        if !verify(&self.client_pk, &payload, &e.client_sig) {
            return Err(fail("client signature invalid".into()));
        }
        if !verify(&self.server_pk, &payload, &e.server_sig) {
            return Err(fail("server signature invalid".into()));
        }
        Ok(())
    }

    /// Full audit: consecutive seq from 1, balance = seq x price and never
    /// past the deposit, and a valid co-signature pair on every entry.
    pub fn verify(&self) -> Result<(), TranscriptError> {
        for (i, e) in self.entries.iter().enumerate() {
            self.check_entry(i, e)?;
        }
        if let Some(close) = &self.close_entry {
            let (want_seq, want_balance) = match self.entries.last() {
                Some(last) => (last.seq, last.balance),
                None => (1, 0), // cooperative zero-balance close
            };
            if close.channel_id != self.channel_id {
                return Err(TranscriptError::Close("wrong channel".into()));
            }
            if (close.seq, close.balance) != (want_seq, want_balance) {
                return Err(TranscriptError::Close(format!(
                    "close ({}, {}) does not match final state ({}, {})",
                    close.seq, close.balance, want_seq, want_balance
                )));
            }
            let payload = balance_update_payload(&close.channel_id, close.seq, close.balance);
            if !verify(&self.client_pk, &payload, &close.client_sig) {
                return Err(TranscriptError::Close("client signature invalid".into()));
            }
            if !verify(&self.server_pk, &payload, &close.server_sig) {
                return Err(TranscriptError::Close("server signature invalid".into()));
            }
        }
        Ok(())
    }

    /// JSON-lines export: one header line, one line per update, one optional
    /// close line. Every line is canonical JSON.
    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut push = |line: &TranscriptLine| {
            out.extend_from_slice(&canonical_json(line));
            out.push(b'\n');
        };
        push(&TranscriptLine::Header {
            channel_id: self.channel_id,
            client_pk: self.client_pk,
            server_pk: self.server_pk,
            deposit: self.deposit,
            price_per_unit: self.price_per_unit,
        });
        for update in &self.entries {
            push(&TranscriptLine::Update {
                update: update.clone(),
            });
        }
        if let Some(update) = &self.close_entry {
            push(&TranscriptLine::Close {
                update: update.clone(),
            });
        }
        out
    }

    /// Strict parse: each line must round-trip byte-exactly to its canonical
    /// form, so any bit-level tampering surfaces even before verification.
    pub fn from_jsonl(data: &[u8]) -> Result<Transcript, TranscriptError> {
        let text = std::str::from_utf8(data)
            .map_err(|e| TranscriptError::Parse(0, format!("not UTF-8: {e}")))?;
        let mut transcript: Option<Transcript> = None;
        for (no, line) in text.lines().enumerate() {
            let parsed: TranscriptLine = serde_json::from_str(line)
                .map_err(|e| TranscriptError::Parse(no + 1, e.to_string()))?;
            if canonical_json(&parsed) != line.as_bytes() {
                return Err(TranscriptError::NonCanonical(no + 1));
            }
            match (parsed, &mut transcript) {
                (
                    TranscriptLine::Header {
                        channel_id,
                        client_pk,
                        server_pk,
                        deposit,
                        price_per_unit,
                    },
                    t @ None,
                ) => {
                    *t = Some(Transcript {
                        channel_id,
                        client_pk,
                        server_pk,
                        deposit,
                        price_per_unit,
                        entries: Vec::new(),
                        close_entry: None,
                    });
                }
                (TranscriptLine::Header { .. }, Some(_)) => return Err(TranscriptError::Header),
                (_, None) => return Err(TranscriptError::Header),
                (TranscriptLine::Update { update }, Some(t)) => {
                    if t.close_entry.is_some() {
                        return Err(TranscriptError::Close("update after close line".into()));
                    }
                    t.entries.push(update);
                }
                (TranscriptLine::Close { update }, Some(t)) => {
                    if t.close_entry.is_some() {
                        return Err(TranscriptError::Close("duplicate close line".into()));
                    }
                    t.close_entry = Some(update);
                }
            }
        }
        transcript.ok_or(TranscriptError::Header)
    }
}

// ---------------------------------------------------------------------------
// Client state machine
// ---------------------------------------------------------------------------

/// Client half of a charging session. Pure state machine: methods build
/// outbound messages and digest inbound ones; transport is the caller's job.
pub struct ChargingClient {
    keys: KeyPair,
    state: SessionState,
    /// Last co-signed (seq, balance); None until the first receipt.
    last: Option<(u64, u64)>,
    /// In-flight update awaiting its receipt.
    pending: Option<(u64, u64)>,
    transcript: Transcript,
    rejections: u64,
}

impl ChargingClient {
    /// `channel` is this client's open on-chain escrow; `price_per_unit` is
    /// the tariff agreed with the server out of band.
    pub fn new(keys: KeyPair, channel: &PaymentChannel, price_per_unit: u64) -> ChargingClient {
        assert_eq!(
            channel.client_pk,
            keys.public_key(),
            "channel was escrowed by a different client key"
        );
        ChargingClient {
            keys,
            state: SessionState::Init,
            last: None,
            pending: None,
            transcript: Transcript::new(channel, price_per_unit),
            rejections: 0,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn channel_id(&self) -> Digest {
        self.transcript.channel_id
    }

    pub fn units_received(&self) -> u64 {
        self.transcript.entries.len() as u64
    }

    pub fn rejections(&self) -> u64 {
        self.rejections
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    fn last_balance(&self) -> u64 {
        self.last.map_or(0, |(_, b)| b)
    }

    /// Can one more unit be paid for without overrunning the deposit?
    pub fn can_afford_next(&self) -> bool {
        self.last_balance() + self.transcript.price_per_unit <= self.transcript.deposit
    }

    pub fn open_msg(&self) -> Message {
        Message::PayOpenInfo {
            channel_id: self.transcript.channel_id,
            deposit: self.transcript.deposit,
            price_per_unit: self.transcript.price_per_unit,
        }
    }

    /// Sign the next balance statement, paying for one more unit.
    pub fn update_msg(&mut self) -> Result<Message, P2pError> {
        if self.state != SessionState::Active {
            return Err(P2pError::BadTransition {
                from: self.state,
                to: SessionState::Active,
            });
        }
        if self.pending.is_some() {
            return Err(P2pError::Unexpected("receipt for the in-flight update"));
        }
        let seq = self.last.map_or(0, |(s, _)| s) + 1;
        let balance = self.last_balance() + self.transcript.price_per_unit;
        let sig = self
            .keys
            .sign(&balance_update_payload(&self.transcript.channel_id, seq, balance));
        self.pending = Some((seq, balance));
        Ok(Message::PayUpdate {
            channel_id: self.transcript.channel_id,
            seq,
            balance,
            client_sig: sig,
        })
    }

    pub fn pause_msg(&self) -> Result<Message, P2pError> {
        if self.state != SessionState::Active || self.pending.is_some() {
            return Err(P2pError::BadTransition {
                from: self.state,
                to: SessionState::Paused,
            });
        }
        Ok(Message::PayPause {
            channel_id: self.transcript.channel_id,
        })
    }

    pub fn resume_msg(&self) -> Result<Message, P2pError> {
        if self.state != SessionState::Paused {
            return Err(P2pError::BadTransition {
                from: self.state,
                to: SessionState::Active,
            });
        }
        Ok(Message::PayResume {
            channel_id: self.transcript.channel_id,
        })
    }

    /// Final statement for settlement: the last co-signed state, or the
    /// zero-balance proposal if no unit was ever delivered.
    pub fn close_msg(&mut self) -> Result<Message, P2pError> {
        let (final_seq, final_balance) = self.last.unwrap_or((1, 0));
        self.state.transition(SessionState::Closing)?;
        // Ed25519 is deterministic, so re-signing the last payload yields the
        // exact signature already on file.
        let sig = self.keys.sign(&balance_update_payload(
            &self.transcript.channel_id,
            final_seq,
            final_balance,
        ));
        Ok(Message::PayClose {
            channel_id: self.transcript.channel_id,
            final_seq,
            final_balance,
            client_sig: sig,
        })
    }

    /// Digest one inbound message. `ERR` replies mark the session Closing
    /// (the server has halted delivery) and surface as `Protocol` errors.
    pub fn handle(&mut self, msg: &Message) -> Result<(), P2pError> {
        match msg {
            Message::Err { code, detail } => {
                self.rejections += 1;
                self.pending = None;
                if matches!(self.state, SessionState::Init | SessionState::Active | SessionState::Paused) {
                    self.state.transition(SessionState::Closing)?;
                }
                Err(P2pError::Protocol {
                    code: code.clone(),
                    detail: detail.clone(),
                })
            }
            Message::PayReceipt {
                channel_id,
                seq,
                balance,
                price_per_unit,
                units_delivered,
                server_sig,
            } => {
                if *channel_id != self.transcript.channel_id {
                    return Err(P2pError::Unexpected("receipt for this channel"));
                }
                if *price_per_unit != self.transcript.price_per_unit {
                    return Err(P2pError::Protocol {
                        code: "PRICE_MISMATCH".into(),
                        detail: format!("receipt quotes price {price_per_unit}"),
                    });
                }
                let payload = balance_update_payload(channel_id, *seq, *balance);
                if !verify(&self.transcript.server_pk, &payload, server_sig) {
                    return Err(P2pError::Protocol {
                        code: "BAD_SIG".into(),
                        detail: "server receipt signature invalid".into(),
                    });
                }
                match self.state {
                    SessionState::Init => {
                        // Open acknowledgement carries the session's starting
                        // state; a fresh session starts at (0, 0).
                        if (*seq, *balance) != (0, 0) {
                            return Err(P2pError::Unexpected("fresh-session ack"));
                        }
                        self.state.transition(SessionState::Active)
                    }
                    SessionState::Active => {
                        if self.pending != Some((*seq, *balance)) {
                            return Err(P2pError::Unexpected("receipt for the in-flight update"));
                        }
                        if *units_delivered != self.units_received() + 1 {
                            return Err(P2pError::Protocol {
                                code: "BAD_COUNT".into(),
                                detail: "server unit count diverged".into(),
                            });
                        }
                        let client_sig = self.keys.sign(&payload);
                        self.transcript.entries.push(BalanceUpdate {
                            channel_id: *channel_id,
                            seq: *seq,
                            balance: *balance,
                            client_sig,
                            server_sig: *server_sig,
                        });
                        self.last = Some((*seq, *balance));
                        self.pending = None;
                        Ok(())
                    }
                    SessionState::Closing => {
                        let want = self.last.unwrap_or((1, 0));
                        if (*seq, *balance) != want {
                            return Err(P2pError::Unexpected("receipt for the final state"));
                        }
                        let client_sig = self.keys.sign(&payload);
                        self.transcript.close_entry = Some(BalanceUpdate {
                            channel_id: *channel_id,
                            seq: *seq,
                            balance: *balance,
                            client_sig,
                            server_sig: *server_sig,
                        });
                        self.state.transition(SessionState::Done)
                    }
                    _ => Err(P2pError::Unexpected("receipt outside Init/Active/Closing")),
                }
            }
            Message::PayPause { channel_id } if *channel_id == self.channel_id() => {
                self.state.transition(SessionState::Paused)
            }
            Message::PayResume { channel_id } if *channel_id == self.channel_id() => {
                self.state.transition(SessionState::Active)
            }
            _ => Err(P2pError::Unexpected("receipt, pause/resume ack, or ERR")),
        }
    }

    /// Receive one frame and digest it.
    pub fn handle_next(&mut self, ep: &Endpoint) -> Result<(), P2pError> {
        let msg = ep.recv()?;
        self.handle(&msg)
    }
}

// ---------------------------------------------------------------------------
// Server state machine
// ---------------------------------------------------------------------------

struct ServerSession {
    state: SessionState,
    client_pk: PublicKeyBytes,
    deposit: u64,
    /// Last co-signed update; None until the first unit is paid for.
    last: Option<BalanceUpdate>,
    units_delivered: u64,
    settlement: Option<Settlement>,
}

/// Charging service endpoint: validates sessions against the chain's escrow
/// records, meters delivery, and settles channels on close. Handles any
/// number of concurrent sessions, each keyed and isolated by channel id.
pub struct ChargingServer {
    keys: KeyPair,
    chain: Arc<Chain>,
    price_per_unit: u64,
    sessions: Mutex<BTreeMap<Digest, ServerSession>>,
}

impl ChargingServer {
    pub fn new(keys: KeyPair, chain: Arc<Chain>, price_per_unit: u64) -> ChargingServer {
        assert!(price_per_unit > 0, "free service breaks session accounting");
        ChargingServer {
            keys,
            chain,
            price_per_unit,
            sessions: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn address(&self) -> crate::crypto::Address {
        self.keys.address()
    }

    pub fn public_key(&self) -> PublicKeyBytes {
        self.keys.public_key()
    }

    pub fn units_delivered(&self, channel_id: &Digest) -> u64 {
        self.sessions
            .lock()
            .unwrap()
            .get(channel_id)
            .map_or(0, |s| s.units_delivered)
    }

    /// Settlement recorded when this session's channel was closed.
    pub fn settlement(&self, channel_id: &Digest) -> Option<Settlement> {
        self.sessions
            .lock()
            .unwrap()
            .get(channel_id)
            .and_then(|s| s.settlement)
    }

    fn err(code: &str, detail: impl Into<String>) -> Message {
        Message::Err {
            code: code.into(),
            detail: detail.into(),
        }
    }

    fn receipt(&self, channel_id: Digest, seq: u64, balance: u64, units: u64) -> Message {
        let sig = self
            .keys
            .sign(&balance_update_payload(&channel_id, seq, balance));
        Message::PayReceipt {
            channel_id,
            seq,
            balance,
            price_per_unit: self.price_per_unit,
            units_delivered: units,
            server_sig: sig,
        }
    }

    /// Process one protocol message and produce the reply.
    pub fn handle(&self, msg: &Message) -> Message {
        match msg {
            Message::PayOpenInfo {
                channel_id,
                deposit,
                price_per_unit,
            } => self.handle_open(channel_id, *deposit, *price_per_unit),
            Message::PayUpdate {
                channel_id,
                seq,
                balance,
                client_sig,
            } => self.handle_update(channel_id, *seq, *balance, client_sig),
            Message::PayPause { channel_id } => {
                let mut sessions = self.sessions.lock().unwrap();
                match sessions.get_mut(channel_id) {
                    None => Self::err("UNKNOWN_CHANNEL", "no such session"),
                    Some(s) => match s.state.transition(SessionState::Paused) {
                        Ok(()) => Message::PayPause {
                            channel_id: *channel_id,
                        },
                        Err(e) => Self::err("BAD_STATE", e.to_string()),
                    },
                }
            }
            Message::PayResume { channel_id } => {
                let mut sessions = self.sessions.lock().unwrap();
                match sessions.get_mut(channel_id) {
                    None => Self::err("UNKNOWN_CHANNEL", "no such session"),
                    Some(s) => match s.state.transition(SessionState::Active) {
                        Ok(()) => Message::PayResume {
                            channel_id: *channel_id,
                        },
                        Err(e) => Self::err("BAD_STATE", e.to_string()),
                    },
                }
            }
            Message::PayClose {
                channel_id,
                final_seq,
                final_balance,
                client_sig,
            } => self.handle_close(channel_id, *final_seq, *final_balance, client_sig),
            _ => Self::err("UNEXPECTED", "server handles PAY_* messages only"),
        }
    }

    fn handle_open(&self, channel_id: &Digest, deposit: u64, price_per_unit: u64) -> Message {
        let Some(record) = self.chain.paychan(channel_id) else {
            return Self::err("UNKNOWN_CHANNEL", "no escrow on chain for this channel");
        };
        if record.status != ChannelStatus::Open {
            return Self::err("BAD_CHANNEL", "channel is not open");
        }
        if record.server != self.keys.address() {
            return Self::err("BAD_CHANNEL", "escrow names a different server");
        }
        if record.deposit != deposit {
            return Self::err("DEPOSIT_MISMATCH", "deposit differs from the escrow");
        }
        if price_per_unit != self.price_per_unit {
            return Self::err(
                "PRICE_MISMATCH",
                format!("tariff is {} per unit", self.price_per_unit),
            );
        }

        let mut sessions = self.sessions.lock().unwrap();
        let session = sessions.entry(*channel_id).or_insert_with(|| ServerSession {
            state: SessionState::Init,
            client_pk: record.client_pk,
            deposit: record.deposit,
            last: None,
            units_delivered: 0,
            settlement: None,
        });
        match session.state {
            SessionState::Init => {
                if let Err(e) = session.state.transition(SessionState::Active) {
                    return Self::err("BAD_STATE", e.to_string());
                }
            }
            // Re-announcing an in-progress session is harmless; ack with the
            // current co-signed state so a stateful client can continue.
            SessionState::Active | SessionState::Paused => {}
            SessionState::Closing | SessionState::Done => {
                return Self::err("BAD_STATE", "session already settled")
            }
        }
        let (seq, balance) = session.last.as_ref().map_or((0, 0), |u| (u.seq, u.balance));
        let units = session.units_delivered;
        self.receipt(*channel_id, seq, balance, units)
    }

    fn handle_update(
        &self,
        channel_id: &Digest,
        seq: u64,
        balance: u64,
        client_sig: &SignatureBytes,
    ) -> Message {
        let mut sessions = self.sessions.lock().unwrap();
        let Some(session) = sessions.get_mut(channel_id) else {
            return Self::err("UNKNOWN_CHANNEL", "no such session");
        };
        if session.state != SessionState::Active {
            return Self::err("BAD_STATE", format!("session is {:?}", session.state));
        }

        // A forged signature is a protocol violation: abort to Closing,
        // keeping the last valid co-signed update for settlement.
        let payload = balance_update_payload(channel_id, seq, balance);
        if !verify(&session.client_pk, &payload, client_sig) {
            let _ = session.state.transition(SessionState::Closing);
            return Self::err("BAD_SIG", "client signature invalid");
        }

        // Monotonicity and deposit ceiling; violations halt delivery.
        let (want_seq, last_balance) =
            session.last.as_ref().map_or((1, 0), |u| (u.seq + 1, u.balance));
        let want_balance = last_balance + self.price_per_unit;
        if seq != want_seq || balance != want_balance || balance > session.deposit {
            let _ = session.state.transition(SessionState::Closing);
            return Self::err(
                "BAD_UPDATE",
                format!(
                    "got (seq {seq}, balance {balance}), expected (seq {want_seq}, \
                     balance {want_balance}) within deposit {}",
                    session.deposit
                ),
            );
        }

        let server_sig = self.keys.sign(&payload);
        session.last = Some(BalanceUpdate {
            channel_id: *channel_id,
            seq,
            balance,
            client_sig: *client_sig,
            server_sig,
        });
        session.units_delivered += 1; // the unit ships with this receipt
        let units = session.units_delivered;
        self.receipt(*channel_id, seq, balance, units)
    }

    fn handle_close(
        &self,
        channel_id: &Digest,
        final_seq: u64,
        final_balance: u64,
        client_sig: &SignatureBytes,
    ) -> Message {
        let mut sessions = self.sessions.lock().unwrap();
        let Some(session) = sessions.get_mut(channel_id) else {
            return Self::err("UNKNOWN_CHANNEL", "no such session");
        };
        if session.state == SessionState::Done {
            return Self::err("BAD_STATE", "session already settled");
        }

        // The close must restate the final co-signed state exactly, or the
        // zero-balance proposal when nothing was delivered.
        let (want_seq, want_balance) =
            session.last.as_ref().map_or((1, 0), |u| (u.seq, u.balance));
        if (final_seq, final_balance) != (want_seq, want_balance) {
            return Self::err(
                "BAD_CLOSE",
                format!("final state is (seq {want_seq}, balance {want_balance})"),
            );
        }
        let payload = balance_update_payload(channel_id, final_seq, final_balance);
        if !verify(&session.client_pk, &payload, client_sig) {
            return Self::err("BAD_SIG", "client close signature invalid");
        }

        if session.state != SessionState::Closing {
            if let Err(e) = session.state.transition(SessionState::Closing) {
                return Self::err("BAD_STATE", e.to_string());
            }
        }

        let server_sig = self.keys.sign(&payload);
        let update = BalanceUpdate {
            channel_id: *channel_id,
            seq: final_seq,
            balance: final_balance,
            client_sig: *client_sig,
            server_sig,
        };
        let receipt = self
            .chain
            .submit_call(&self.keys, ContractCall::PaychanClose { update });
        match (&receipt.status, receipt.settlement) {
            (status, Some(settlement)) if status.is_ok() => {
                session.settlement = Some(settlement);
                let _ = session.state.transition(SessionState::Done);
                let units = session.units_delivered;
                self.receipt(*channel_id, final_seq, final_balance, units)
            }
            (status, _) => Self::err("CHAIN", format!("close rejected: {status:?}")),
        }
    }

    /// Drain and answer every deliverable frame on the endpoint.
    pub fn serve_pending(&self, ep: &Endpoint) -> Result<usize, P2pError> {
        let mut served = 0;
        while let Some(frame) = ep.recv_sent_bytes()? {
            let reply = match super::decode_frame(&frame) {
                Ok(msg) => self.handle(&msg),
                Err(e) => Self::err("BAD_FRAME", e.to_string()),
            };
            ep.send(&reply)?;
            served += 1;
        }
        Ok(served)
    }
}

// ---------------------------------------------------------------------------
// Session drivers
// ---------------------------------------------------------------------------

/// What the client wants out of the session.
#[derive(Clone, Copy, Debug)]
pub struct SessionPlan {
    pub units_wanted: u64,
    /// Pause and immediately resume once, after this many delivered units.
    pub pause_after: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChargingReport {
    pub units_delivered: u64,
    /// Signed balance updates sent (the off-chain message count).
    pub updates_sent: u64,
    pub updates_rejected: u64,
}

fn round_trip(
    client: &mut ChargingClient,
    server: &ChargingServer,
    client_ep: &Endpoint,
    server_ep: &Endpoint,
    msg: &Message,
) -> Result<(), P2pError> {
    client_ep.send(msg)?;
    server.serve_pending(server_ep)?;
    client.handle_next(client_ep)
}

/// Drive a whole paid-delivery session: open handshake, then one signed
/// update per unit until the plan is met or the deposit is exhausted.
/// The channel stays open; settle with [`close_session`].
pub fn run_charging_session(
    client: &mut ChargingClient,
    server: &ChargingServer,
    client_ep: &Endpoint,
    server_ep: &Endpoint,
    plan: &SessionPlan,
) -> Result<ChargingReport, P2pError> {
    round_trip(client, server, client_ep, server_ep, &client.open_msg())?;

    let mut updates_sent = 0;
    let mut paused_once = false;
    while client.state() == SessionState::Active
        && client.units_received() < plan.units_wanted
        && client.can_afford_next()
    {
        if !paused_once && plan.pause_after == Some(client.units_received()) {
            paused_once = true;
            let pause = client.pause_msg()?;
            round_trip(client, server, client_ep, server_ep, &pause)?;
            let resume = client.resume_msg()?;
            round_trip(client, server, client_ep, server_ep, &resume)?;
        }
        let update = client.update_msg()?;
        updates_sent += 1;
        round_trip(client, server, client_ep, server_ep, &update)?;
    }
    Ok(ChargingReport {
        units_delivered: client.units_received(),
        updates_sent,
        updates_rejected: client.rejections(),
    })
}

/// Settle the session: the client states the final balance, the server
/// countersigns and submits the on-chain close, and both sides finish Done.
pub fn close_session(
    client: &mut ChargingClient,
    server: &ChargingServer,
    client_ep: &Endpoint,
    server_ep: &Endpoint,
) -> Result<Settlement, P2pError> {
    let close = client.close_msg()?;
    round_trip(client, server, client_ep, server_ep, &close)?;
    server
        .settlement(&client.channel_id())
        .ok_or(P2pError::Unexpected("settlement after close"))
}
