//! Consumer side: walk the channel, fetch keys, verify, decrypt, decode.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{decode_packet, Manifest, PipelineError, StreamBook};
use crate::authz::{AuthzError, AuthzService, KeyRequest, SIDE_KEY_INTERVAL};
use crate::crypto::{hash, unwrap_key, Digest, KeyPair, SymmetricKey};
use crate::ledger::mam::mam_fetch;
use crate::ledger::Tangle;
use crate::store::Store;

/// A packet that could not be recovered faithfully. The digest and interval
/// identify exactly which object failed and where it was promised.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegrityAlarm {
    pub channel_root: Digest,
    pub interval_id: u64,
    pub packet_digest: Digest,
    pub reason: String,
}

/// A key the authorization service refused to release.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyDenial {
    pub channel_root: Digest,
    pub interval_id: u64,
    pub reason: String,
}

/// Everything a channel read produced, including the conservation book to
/// compare against the producer's.
#[derive(Clone, Debug, Default)]
pub struct ConsumeReport {
    pub manifests_seen: u64,
    pub heartbeats: u64,
    pub packets_recovered: u64,
    pub packets_skipped: u64,
    pub samples_recovered: u64,
    pub recovered_bytes: u64,
    pub book: StreamBook,
    pub alarms: Vec<IntegrityAlarm>,
    pub denials: Vec<KeyDenial>,
}

/// An authorized (or not) reader of anchored channels.
pub struct Consumer {
    keys: KeyPair,
    ledger: Arc<Tangle>,
    store: Arc<Store>,
    authz: Arc<AuthzService>,
    key_cache: BTreeMap<(Digest, u64), SymmetricKey>,
}

impl Consumer {
    pub fn new(
        keys: KeyPair,
        ledger: Arc<Tangle>,
        store: Arc<Store>,
        authz: Arc<AuthzService>,
    ) -> Consumer {
        Consumer {
            keys,
            ledger,
            store,
            authz,
            key_cache: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> crate::crypto::Address {
        self.keys.address()
    }

    /// Fetch and unwrap the key for one interval, caching on success.
    /// Authorization refusals come back as `Ok(Err(reason))` so the caller
    /// can record the denial and move on; transport-level failures are real
    /// errors.
    fn key_for(
        &mut self,
        channel_root: Digest,
        interval_id: u64,
    ) -> Result<Result<SymmetricKey, String>, PipelineError> {
        if let Some(key) = self.key_cache.get(&(channel_root, interval_id)) {
            return Ok(Ok(*key));
        }
        let request = KeyRequest::signed(&self.keys, channel_root, interval_id);
        match self.authz.request_key(&request) {
            Ok(wrapped) => {
                let key = unwrap_key(&self.keys, &wrapped)?;
                self.key_cache.insert((channel_root, interval_id), key);
                Ok(Ok(key))
            }
            Err(err @ (AuthzError::Unauthorized | AuthzError::NotFound)) => {
                Ok(Err(err.to_string()))
            }
            Err(other) => Err(other.into()),
        }
    }

    /// Walk every anchored manifest of `channel_root` and recover its
    /// packets. Packets that fail verification raise alarms; intervals whose
    /// keys are withheld are skipped with a recorded denial. Neither stops
    /// the read.
    pub fn read_channel(&mut self, channel_root: Digest) -> Result<ConsumeReport, PipelineError> {
        let mut report = ConsumeReport::default();

        let side_key = match self.key_for(channel_root, SIDE_KEY_INTERVAL)? {
            Ok(key) => key,
            Err(reason) => {
                report.denials.push(KeyDenial {
                    channel_root,
                    interval_id: SIDE_KEY_INTERVAL,
                    reason,
                });
                return Ok(report);
            }
        };

        let bodies = mam_fetch(&self.ledger, channel_root, &side_key)?;
        for body in bodies {
            let manifest = Manifest::from_body(&body)?;
            report.manifests_seen += 1;
            if manifest.is_heartbeat() {
                report.heartbeats += 1;
                continue;
            }
            self.read_manifest(&manifest, &mut report)?;
        }
        Ok(report)
    }

    fn read_manifest(
        &mut self,
        manifest: &Manifest,
        report: &mut ConsumeReport,
    ) -> Result<(), PipelineError> {
        let channel_root = manifest.channel_root;
        let interval_id = manifest.interval_id;
        let key = match self.key_for(channel_root, interval_id)? {
            Ok(key) => key,
            Err(reason) => {
                report.denials.push(KeyDenial {
                    channel_root,
                    interval_id,
                    reason,
                });
                report.packets_skipped += manifest.packet_digests.len() as u64;
                return Ok(());
            }
        };

        let mut alarmed = false;
        let mut counts: BTreeMap<super::SensorType, u64> = BTreeMap::new();
        for digest in &manifest.packet_digests {
            let alarm = |reason: &str, report: &mut ConsumeReport| {
                report.alarms.push(IntegrityAlarm {
                    channel_root,
                    interval_id,
                    packet_digest: *digest,
                    reason: reason.to_string(),
                });
            };
            let Some(stored) = self.store.get(digest) else {
                alarm("object missing from store", report);
                alarmed = true;
                continue;
            };
            if hash(&stored) != *digest {
                alarm("stored bytes do not match content digest", report);
                alarmed = true;
                continue;
            }
            let Ok(plaintext) = key.open(&stored) else {
                alarm("authenticated decryption failed", report);
                alarmed = true;
                continue;
            };
            let samples = match decode_packet(&plaintext) {
                Ok(samples) => samples,
                Err(_) => {
                    alarm("packet body malformed", report);
                    alarmed = true;
                    continue;
                }
            };
            report.packets_recovered += 1;
            for sample in &samples {
                report.book.record(sample);
                *counts.entry(sample.sensor_type).or_insert(0) += 1;
                report.samples_recovered += 1;
                report.recovered_bytes += sample.payload.len() as u64;
            }
        }

        // With every packet intact the recovered census must equal the
        // promise the producer anchored. (A lost packet already alarmed, and
        // would trivially also throw the counts off.)
        if !alarmed && counts != manifest.counts {
            report.alarms.push(IntegrityAlarm {
                channel_root,
                interval_id,
                packet_digest: manifest.digest_of_body(),
                reason: "recovered sample counts disagree with manifest".to_string(),
            });
        }
        Ok(())
    }
}

/// Convenience wrapper: read one channel end to end.
pub fn consumer_read(
    consumer: &mut Consumer,
    channel_root: Digest,
) -> Result<ConsumeReport, PipelineError> {
    consumer.read_channel(channel_root)
}
