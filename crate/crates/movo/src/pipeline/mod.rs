//! The vehicle-side data pipeline and its consumer counterpart.
//!
//! Synthetic sensors emit samples on the simulated clock; samples are
//! batched into packets, sealed under per-interval keys, uploaded to the
//! content store, and their digests grouped into a manifest that is anchored
//! to the ledger over the owner's channel every 20 seconds. A consumer with
//! an on-chain grant walks the same path backwards and must recover the
//! producer's byte stream exactly.

mod consumer;
mod producer;
mod sources;

pub use consumer::{consumer_read, ConsumeReport, Consumer, IntegrityAlarm, KeyDenial};
pub use producer::{AnchorRecord, Pipeline, PipelineConfig, RunStats};
pub use sources::{AffectMeasurement, CameraSource, SensorSource, VehicleSource};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, hash_parts, Address, Digest};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Ledger(#[from] crate::ledger::LedgerError),
    #[error(transparent)]
    Authz(#[from] crate::authz::AuthzError),
    #[error(transparent)]
    Mam(#[from] crate::ledger::mam::MamError),
    #[error(transparent)]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error("malformed packet: {0}")]
    BadPacket(String),
    #[error("malformed manifest: {0}")]
    BadManifest(String),
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorType {
    CameraFrame,
    AffectMeasurement,
    VehiclePoint,
    Location,
}

impl SensorType {
    fn code(self) -> u8 {
        match self {
            SensorType::CameraFrame => 1,
            SensorType::AffectMeasurement => 2,
            SensorType::VehiclePoint => 3,
            SensorType::Location => 4,
        }
    }

    fn from_code(code: u8) -> Option<SensorType> {
        Some(match code {
            1 => SensorType::CameraFrame,
            2 => SensorType::AffectMeasurement,
            3 => SensorType::VehiclePoint,
            4 => SensorType::Location,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorSample {
    pub sensor_type: SensorType,
    /// Simulation time in milliseconds.
    pub produced_at: u64,
    pub payload: Vec<u8>,
}

// ---------------------------------------------------------------------------
// Packet encoding
// ---------------------------------------------------------------------------

const PACKET_SINGLE: u8 = 0x01;
const PACKET_BATCH: u8 = 0x02;
/// magic + sensor type + produced_at + payload length.
const SINGLE_HEADER_LEN: usize = 1 + 1 + 8 + 4;
/// sensor type + produced_at + payload length, once per batched sample.
const BATCH_ENTRY_HEADER_LEN: usize = 1 + 8 + 4;
/// magic + sample count.
const BATCH_HEADER_LEN: usize = 1 + 4;

/// How samples are grouped into store objects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batching {
    /// One packet per second co-locating every sample of that second.
    PerSecond,
    /// One packet per sample; puts hit the store at the sensor rate.
    PerSample,
}

/// Compact single-sample packet body.
pub fn encode_single(sample: &SensorSample) -> Vec<u8> {
    let mut out = Vec::with_capacity(SINGLE_HEADER_LEN + sample.payload.len());
    out.push(PACKET_SINGLE);
    out.push(sample.sensor_type.code());
    out.extend_from_slice(&sample.produced_at.to_be_bytes());
    out.extend_from_slice(&(sample.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&sample.payload);
    out
}

/// Batch packet body: all of one second's samples, in emission order.
pub fn encode_batch(samples: &[SensorSample]) -> Vec<u8> {
    let total: usize = samples.iter().map(|s| s.payload.len()).sum();
    let mut out =
        Vec::with_capacity(BATCH_HEADER_LEN + samples.len() * BATCH_ENTRY_HEADER_LEN + total);
    out.push(PACKET_BATCH);
    out.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for s in samples {
        out.push(s.sensor_type.code());
        out.extend_from_slice(&s.produced_at.to_be_bytes());
        out.extend_from_slice(&(s.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&s.payload);
    }
    out
}

/// Inverse of both packet encodings.
pub fn decode_packet(bytes: &[u8]) -> Result<Vec<SensorSample>, PipelineError> {
    let bad = |why: &str| PipelineError::BadPacket(why.to_string());
    let entry = |input: &[u8]| -> Result<(SensorSample, usize), PipelineError> {
        if input.len() < 13 {
            return Err(bad("truncated sample header"));
        }
        let sensor_type =
            SensorType::from_code(input[0]).ok_or_else(|| bad("unknown sensor type"))?;
        let produced_at = u64::from_be_bytes(input[1..9].try_into().expect("fixed slice"));
        let len = u32::from_be_bytes(input[9..13].try_into().expect("fixed slice")) as usize;
        if input.len() < 13 + len {
            return Err(bad("truncated sample payload"));
        }
        Ok((
            SensorSample {
                sensor_type,
                produced_at,
                payload: input[13..13 + len].to_vec(),
            },
            13 + len,
        ))
    };

    match bytes.first() {
        Some(&PACKET_SINGLE) => {
            let (sample, used) = entry(&bytes[1..])?;
            if 1 + used != bytes.len() {
                return Err(bad("trailing bytes after single sample"));
            }
            Ok(vec![sample])
        }
        Some(&PACKET_BATCH) => {
            if bytes.len() < BATCH_HEADER_LEN {
                return Err(bad("truncated batch header"));
            }
            let count = u32::from_be_bytes(bytes[1..5].try_into().expect("fixed slice"));
            let mut samples = Vec::with_capacity(count as usize);
            let mut at = BATCH_HEADER_LEN;
            for _ in 0..count {
                let (sample, used) = entry(&bytes[at..])?;
                samples.push(sample);
                at += used;
            }
            if at != bytes.len() {
                return Err(bad("trailing bytes after batch"));
            }
            Ok(samples)
        }
        _ => Err(bad("unknown packet magic")),
    }
}

// ---------------------------------------------------------------------------
// Packets and manifests
// ---------------------------------------------------------------------------

/// An uploaded (or failed) store object and its provenance.
#[derive(Clone, Debug)]
pub struct DataPacket {
    pub owner: Address,
    /// Leading sample type; co-located packets carry the camera type with
    /// affect measurements riding along.
    pub sensor_type: SensorType,
    /// Half-open sample interval [start, end) in ms.
    pub interval_start: u64,
    pub interval_end: u64,
    pub ciphertext: Vec<u8>,
    pub digest: Digest,
}

/// 20-second grouping of packet digests, anchored over the MAM channel.
/// Its canonical encoding is the channel message body; `digest_of_body` is
/// what third parties quote when they reference the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub channel_root: Digest,
    pub interval_id: u64,
    pub packet_digests: Vec<Digest>,
    pub counts: BTreeMap<SensorType, u64>,
}

/// Manifest wire form. Packet digests travel base64 to keep a 20-digest
/// manifest within three ledger chunks.
#[derive(Serialize, Deserialize)]
struct ManifestWire {
    channel_root: Digest,
    counts: BTreeMap<SensorType, u64>,
    interval_id: u64,
    #[serde(with = "digest_list_base64")]
    packet_digests: Vec<Digest>,
}

mod digest_list_base64 {
    use super::Digest;
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Digest], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|d| STANDARD.encode(d.0))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Digest>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|s| {
                let bytes = STANDARD.decode(s.as_bytes()).map_err(D::Error::custom)?;
                let arr: [u8; 32] = bytes
                    .try_into()
                    .map_err(|_| D::Error::custom("digest must be 32 bytes"))?;
                Ok(Digest(arr))
            })
            .collect()
    }
}

impl Manifest {
    /// Canonical body published over the channel.
    pub fn to_body(&self) -> Vec<u8> {
        crate::crypto::canonical_json(&ManifestWire {
            channel_root: self.channel_root,
            counts: self.counts.clone(),
            interval_id: self.interval_id,
            packet_digests: self.packet_digests.clone(),
        })
    }

    pub fn from_body(body: &[u8]) -> Result<Manifest, PipelineError> {
        let wire: ManifestWire = serde_json::from_slice(body)
            .map_err(|e| PipelineError::BadManifest(e.to_string()))?;
        Ok(Manifest {
            channel_root: wire.channel_root,
            interval_id: wire.interval_id,
            packet_digests: wire.packet_digests,
            counts: wire.counts,
        })
    }

    pub fn digest_of_body(&self) -> Digest {
        hash(&self.to_body())
    }

    pub fn is_heartbeat(&self) -> bool {
        self.packet_digests.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Conservation ledger
// ---------------------------------------------------------------------------

/// Order-sensitive running digest of a sample stream, per sensor type.
/// Producer and consumer each keep one; equal books mean the consumer saw
/// exactly the producer's samples, byte for byte and in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamBook {
    pub counts: BTreeMap<SensorType, u64>,
    pub bytes: BTreeMap<SensorType, u64>,
    chains: BTreeMap<SensorType, Digest>,
}

impl StreamBook {
    pub fn record(&mut self, sample: &SensorSample) {
        *self.counts.entry(sample.sensor_type).or_insert(0) += 1;
        *self.bytes.entry(sample.sensor_type).or_insert(0) += sample.payload.len() as u64;
        let prev = self
            .chains
            .get(&sample.sensor_type)
            .copied()
            .unwrap_or(Digest::ZERO);
        let link = hash_parts(&[
            b"movo-stream-chain",
            &prev.0,
            &sample.produced_at.to_be_bytes(),
            &sample.payload,
        ]);
        self.chains.insert(sample.sensor_type, link);
    }

    pub fn total_samples(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes.values().sum()
    }
}
