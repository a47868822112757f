//! Road-side units: trusted infrastructure that attests "this subject passed
//! by me at this time" with an offline-verifiable signed certificate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Endpoint, Message, P2pError};
use crate::clock::SimClock;
use crate::crypto::{canonical_json, verify, Address, KeyPair, PublicKeyBytes, SignatureBytes};

/// Signed statement binding subject, location and time. Anyone holding the
/// RSU's public key can verify it offline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationCertificate {
    pub rsu_id: Address,
    pub subject: Address,
    pub lat: f64,
    pub lon: f64,
    pub issued_at: u64,
    pub signature: SignatureBytes,
}

fn cert_payload(rsu_id: &Address, subject: &Address, lat: f64, lon: f64, issued_at: u64) -> Vec<u8> {
    #[derive(Serialize)]
    struct Payload<'a> {
        issued_at: u64,
        lat: f64,
        lon: f64,
        rsu_id: &'a Address,
        subject: &'a Address,
    }
    canonical_json(&Payload {
        issued_at,
        lat,
        lon,
        rsu_id,
        subject,
    })
}

impl LocationCertificate {
    /// True only if the signature covers exactly these field values.
    pub fn verify(&self, rsu_pk: &PublicKeyBytes) -> bool {
        if Address::of_verifying_key(rsu_pk) != self.rsu_id {
            return false;
        }
        let payload = cert_payload(&self.rsu_id, &self.subject, self.lat, self.lon, self.issued_at);
        verify(rsu_pk, &payload, &self.signature)
    }
}

/// A road-side unit at a fixed position. With an allowlist configured it
/// refuses certificates for unknown subjects.
pub struct Rsu {
    keys: KeyPair,
    lat: f64,
    lon: f64,
    clock: SimClock,
    allowlist: Option<BTreeSet<Address>>,
}

impl Rsu {
    pub fn new(keys: KeyPair, lat: f64, lon: f64, clock: SimClock) -> Rsu {
        Rsu {
            keys,
            lat,
            lon,
            clock,
            allowlist: None,
        }
    }

    pub fn with_allowlist(mut self, subjects: impl IntoIterator<Item = Address>) -> Rsu {
        self.allowlist = Some(subjects.into_iter().collect());
        self
    }

    pub fn public_key(&self) -> PublicKeyBytes {
        self.keys.public_key()
    }

    pub fn address(&self) -> Address {
        self.keys.address()
    }

    pub fn issue(&self, subject: Address) -> LocationCertificate {
        let rsu_id = self.keys.address();
        let issued_at = self.clock.now_ms();
        let payload = cert_payload(&rsu_id, &subject, self.lat, self.lon, issued_at);
        LocationCertificate {
            rsu_id,
            subject,
            lat: self.lat,
            lon: self.lon,
            issued_at,
            signature: self.keys.sign(&payload),
        }
    }

    /// Answer one protocol message.
    pub fn handle(&self, msg: &Message) -> Message {
        match msg {
            Message::LocCertReq { subject } => {
                if let Some(allow) = &self.allowlist {
                    if !allow.contains(subject) {
                        return Message::Err {
                            code: "UNKNOWN_SUBJECT".into(),
                            detail: format!("subject {subject} not on this RSU's allowlist"),
                        };
                    }
                }
                Message::LocCertResp {
                    certificate: self.issue(*subject),
                }
            }
            _ => Message::Err {
                code: "UNEXPECTED".into(),
                detail: "RSU answers only LOC_CERT_REQ".into(),
            },
        }
    }

    /// Drain and answer every deliverable frame on the endpoint.
    pub fn serve_pending(&self, ep: &Endpoint) -> Result<usize, P2pError> {
        let mut served = 0;
        while let Some(frame) = ep.recv_sent_bytes()? {
            let reply = match super::decode_frame(&frame) {
                Ok(msg) => self.handle(&msg),
                Err(e) => Message::Err {
                    code: "BAD_FRAME".into(),
                    detail: e.to_string(),
                },
            };
            ep.send(&reply)?;
            served += 1;
        }
        Ok(served)
    }
}

/// Client-side flow: ask the connected RSU to certify `subject`. The RSU's
/// endpoint is driven in-process, standing in for its service task.
pub fn request_location_certificate(
    client_ep: &Endpoint,
    rsu: &Rsu,
    rsu_ep: &Endpoint,
    subject: Address,
) -> Result<LocationCertificate, P2pError> {
    client_ep.send(&Message::LocCertReq { subject })?;
    rsu.serve_pending(rsu_ep)?;
    match super::reject_err(client_ep.recv()?)? {
        Message::LocCertResp { certificate } => Ok(certificate),
        _ => Err(P2pError::Unexpected("LOC_CERT_RESP")),
    }
}
