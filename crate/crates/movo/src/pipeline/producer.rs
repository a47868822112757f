//! Producer side: batch, seal, upload, anchor.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::sources::SensorSource;
use super::{
    encode_batch, encode_single, Batching, DataPacket, Manifest, PipelineError, SensorSample,
    SensorType, StreamBook,
};
use crate::authz::{AuthzService, KeyRegistration, SIDE_KEY_INTERVAL};
use crate::chain::{Chain, ContractCall};
use crate::clock::SimClock;
use crate::crypto::{hash, KeyPair, SymmetricKey};
use crate::ledger::mam::MamChannel;
use crate::ledger::Tangle;
use crate::store::Store;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub batching: Batching,
    /// Manifest/anchor cadence in seconds.
    pub anchor_every_s: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            batching: Batching::PerSecond,
            anchor_every_s: 20,
        }
    }
}

/// One anchored interval: what went out over the channel and when.
#[derive(Clone, Debug)]
pub struct AnchorRecord {
    pub interval_id: u64,
    pub message_index: u64,
    pub manifest: Manifest,
    pub chunk_tx_ids: Vec<crate::crypto::Digest>,
    pub anchored_at: u64,
    /// When the earliest packet of the interval was uploaded; the anchor
    /// latency everyone quotes is confirmation time minus this.
    pub first_upload_at: Option<u64>,
}

/// Aggregates returned by [`Pipeline::run_for`].
#[derive(Clone, Debug, Default)]
pub struct RunStats {
    pub seconds: u64,
    pub packets_uploaded: u64,
    pub packets_failed: u64,
    pub uploaded_bytes: u64,
    pub mam_messages: u64,
    pub ledger_txs: u64,
}

/// A vehicle's full outbound pipeline over shared services. Drive it with
/// [`Pipeline::run_for`], or second by second with [`Pipeline::run_second`]
/// and [`Pipeline::anchor_interval`].
pub struct Pipeline<S> {
    owner: KeyPair,
    source: S,
    config: PipelineConfig,
    clock: SimClock,
    ledger: Arc<Tangle>,
    store: Arc<Store>,
    authz: Arc<AuthzService>,
    channel: MamChannel,
    rng: ChaCha12Rng,
    /// Keys by interval id, created on first use, registered at anchor time.
    interval_keys: BTreeMap<u64, SymmetricKey>,
    pending_digests: Vec<crate::crypto::Digest>,
    pending_counts: BTreeMap<SensorType, u64>,
    pending_first_upload: Option<u64>,
    book: StreamBook,
    anchors: Vec<AnchorRecord>,
    stats: RunStats,
}

impl<S: SensorSource> Pipeline<S> {
    /// Create the pipeline and perform the on-chain bootstrap: register the
    /// channel in the ACL contract and lodge the side key with the
    /// authorization service so granted consumers can subscribe.
    #[allow(clippy::too_many_arguments)]
    pub fn bootstrap(
        seed: u64,
        owner: KeyPair,
        source: S,
        config: PipelineConfig,
        clock: SimClock,
        ledger: Arc<Tangle>,
        store: Arc<Store>,
        chain: &Chain,
        authz: Arc<AuthzService>,
    ) -> Result<Pipeline<S>, PipelineError> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let channel = MamChannel::generate(&mut rng);
        chain
            .submit_call(
                &owner,
                ContractCall::AclRegisterChannel {
                    channel_root: channel.channel_id(),
                },
            )
            .expect_ok();
        authz.register_key(&KeyRegistration::signed(
            &owner,
            channel.channel_id(),
            SIDE_KEY_INTERVAL,
            channel.side_key(),
        ))?;
        Ok(Pipeline {
            owner,
            source,
            config,
            clock,
            ledger,
            store,
            authz,
            channel,
            rng,
            interval_keys: BTreeMap::new(),
            pending_digests: Vec::new(),
            pending_counts: BTreeMap::new(),
            pending_first_upload: None,
            book: StreamBook::default(),
            anchors: Vec::new(),
            stats: RunStats::default(),
        })
    }

    pub fn channel_id(&self) -> crate::crypto::Digest {
        self.channel.channel_id()
    }

    pub fn owner_address(&self) -> crate::crypto::Address {
        self.owner.address()
    }

    /// Producer-side conservation book; compare with the consumer's.
    pub fn book(&self) -> &StreamBook {
        &self.book
    }

    pub fn anchors(&self) -> &[AnchorRecord] {
        &self.anchors
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    fn interval_id_at(&self, at_ms: u64) -> u64 {
        at_ms / (self.config.anchor_every_s * 1000)
    }

    /// Key for the interval containing `at_ms`, minting one on first use.
    fn interval_key(&mut self, at_ms: u64) -> SymmetricKey {
        let id = self.interval_id_at(at_ms);
        let rng = &mut self.rng;
        *self
            .interval_keys
            .entry(id)
            .or_insert_with(|| SymmetricKey::generate(rng))
    }

    fn upload(&mut self, samples: &[SensorSample], second_start: u64) {
        debug_assert!(!samples.is_empty());
        let plaintext = match self.config.batching {
            Batching::PerSecond => encode_batch(samples),
            Batching::PerSample => encode_single(&samples[0]),
        };
        let key = self.interval_key(second_start);
        let ciphertext = key.seal(&mut self.rng, &plaintext);
        let packet = DataPacket {
            owner: self.owner.address(),
            sensor_type: samples[0].sensor_type,
            interval_start: second_start,
            interval_end: second_start + 1000,
            digest: hash(&ciphertext),
            ciphertext,
        };
        match self.store.put(&packet.ciphertext) {
            Ok(receipt) => {
                debug_assert_eq!(receipt.digest, packet.digest);
                for s in samples {
                    self.book.record(s);
                    *self.pending_counts.entry(s.sensor_type).or_insert(0) += 1;
                }
                self.pending_digests.push(packet.digest);
                self.pending_first_upload
                    .get_or_insert(receipt.accepted_at);
                self.stats.packets_uploaded += 1;
                self.stats.uploaded_bytes += packet.ciphertext.len() as u64;
            }
            Err(_) => {
                // A failed upload never reaches a manifest; it is visible in
                // the failure count instead of silently thinning the stream.
                self.stats.packets_failed += 1;
            }
        }
    }

    /// Emit and upload one simulated second starting at the current clock.
    /// The caller advances the clock; rates are defined against it.
    pub fn run_second(&mut self) {
        let second_start = self.clock.now_ms();
        let samples = self.source.emit_second(second_start);
        if samples.is_empty() {
            return;
        }
        match self.config.batching {
            Batching::PerSecond => self.upload(&samples, second_start),
            Batching::PerSample => {
                for sample in &samples {
                    self.upload(std::slice::from_ref(sample), second_start);
                }
            }
        }
    }

    /// Close the interval that just ended: build the manifest (a heartbeat
    /// if nothing was uploaded), publish it over the channel, and register
    /// the interval key for release. One message, every interval, always.
    pub fn anchor_interval(&mut self) -> Result<&AnchorRecord, PipelineError> {
        let now = self.clock.now_ms();
        debug_assert!(
            now.is_multiple_of(self.config.anchor_every_s * 1000) && now > 0,
            "anchor only at interval boundaries"
        );
        let interval_id = self.interval_id_at(now - 1);
        let manifest = Manifest {
            channel_root: self.channel.channel_id(),
            interval_id,
            packet_digests: std::mem::take(&mut self.pending_digests),
            counts: std::mem::take(&mut self.pending_counts),
        };

        if let Some(key) = self.interval_keys.get(&interval_id) {
            self.authz.register_key(&KeyRegistration::signed(
                &self.owner,
                self.channel.channel_id(),
                interval_id,
                *key,
            ))?;
        }

        let message = self.channel.publish(&self.ledger, &manifest.to_body())?;
        self.stats.mam_messages += 1;
        self.stats.ledger_txs += message.chunk_tx_ids.len() as u64;
        self.anchors.push(AnchorRecord {
            interval_id,
            message_index: message.index,
            manifest,
            chunk_tx_ids: message.chunk_tx_ids,
            anchored_at: now,
            first_upload_at: self.pending_first_upload.take(),
        });
        Ok(self.anchors.last().expect("just pushed"))
    }

    /// Drive the pipeline for `seconds`, advancing the shared clock in
    /// one-second steps and anchoring at every interval boundary.
    pub fn run_for(&mut self, seconds: u64) -> Result<RunStats, PipelineError> {
        let anchor_ms = self.config.anchor_every_s * 1000;
        for _ in 0..seconds {
            self.run_second();
            self.clock.advance_ms(1000);
            self.stats.seconds += 1;
            if self.clock.now_ms().is_multiple_of(anchor_ms) {
                self.anchor_interval()?;
            }
        }
        Ok(self.stats.clone())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::chain::ChainConfig;
    use crate::ledger::mam::chunks_for_body;
    use crate::ledger::LedgerConfig;
    use crate::pipeline::sources::{CameraSource, VehicleSource};
    use crate::store::StoreConfig;

    pub(crate) struct World {
        pub clock: SimClock,
        pub ledger: Arc<Tangle>,
        pub store: Arc<Store>,
        pub chain: Arc<Chain>,
        pub authz: Arc<AuthzService>,
        pub owner: KeyPair,
    }

    pub(crate) fn world(seed: u64) -> World {
        let clock = SimClock::new();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let minter = KeyPair::generate(&mut rng);
        let owner = KeyPair::generate(&mut rng);
        let ledger = Arc::new(Tangle::new(clock.clone(), LedgerConfig::default()));
        let store = Arc::new(Store::new(clock.clone(), StoreConfig::default()).unwrap());
        let chain = Arc::new(Chain::new(
            clock.clone(),
            ChainConfig::with_minter(minter.address()),
        ));
        let authz = Arc::new(AuthzService::new(Arc::clone(&chain), seed ^ 0xa0a0));
        World {
            clock,
            ledger,
            store,
            chain,
            authz,
            owner,
        }
    }

    pub(crate) fn camera_pipeline(w: &World, rate: u32, frame_bytes: usize) -> Pipeline<CameraSource> {
        Pipeline::bootstrap(
            7,
            w.owner.clone(),
            CameraSource::new(11, rate, frame_bytes),
            PipelineConfig::default(),
            w.clock.clone(),
            Arc::clone(&w.ledger),
            Arc::clone(&w.store),
            &w.chain,
            Arc::clone(&w.authz),
        )
        .unwrap()
    }

    pub(crate) fn vehicle_pipeline(
        w: &World,
        rate: u32,
        point_bytes: usize,
        batching: Batching,
    ) -> Pipeline<VehicleSource> {
        Pipeline::bootstrap(
            8,
            w.owner.clone(),
            VehicleSource::new(12, rate, point_bytes),
            PipelineConfig {
                batching,
                anchor_every_s: 20,
            },
            w.clock.clone(),
            Arc::clone(&w.ledger),
            Arc::clone(&w.store),
            &w.chain,
            Arc::clone(&w.authz),
        )
        .unwrap()
    }

    #[test]
    fn camera_twenty_seconds_pends_twenty_digests() {
        let w = world(1);
        let mut p = camera_pipeline(&w, 10, 10_000);
        for _ in 0..20 {
            p.run_second();
            w.clock.advance_ms(1000);
        }
        assert_eq!(p.pending_digests.len(), 20);
        assert_eq!(p.pending_counts[&SensorType::CameraFrame], 200);
        assert_eq!(p.pending_counts[&SensorType::AffectMeasurement], 200);
        let anchor = p.anchor_interval().unwrap();
        assert_eq!(anchor.manifest.packet_digests.len(), 20);
        assert_eq!(anchor.interval_id, 0);
    }

    #[test]
    fn vehicle_per_second_batches_are_about_27_kilobytes() {
        let w = world(2);
        let mut p = vehicle_pipeline(&w, 90, 300, Batching::PerSecond);
        for _ in 0..20 {
            p.run_second();
            w.clock.advance_ms(1000);
        }
        p.anchor_interval().unwrap();
        let anchor = &p.anchors()[0];
        assert_eq!(anchor.manifest.packet_digests.len(), 20);
        assert_eq!(anchor.manifest.counts[&SensorType::VehiclePoint], 1800);
        // Oracle: 90 points of (13-byte entry header + ~300 B payload), a
        // 5-byte batch header, and the 28-byte seal.
        let ceiling = (5 + 90 * (13 + 300) + 28) as u64;
        for d in &anchor.manifest.packet_digests {
            let len = w.store.get(d).unwrap().len() as u64;
            assert!(len <= ceiling, "packet {len} above {ceiling}");
            assert!(len >= ceiling - 90 * 5, "packet {len} implausibly small");
            let kb = len as f64 / 1024.0;
            assert!((26.0..=28.5).contains(&kb), "packet of {kb:.1} KiB");
        }
    }

    #[test]
    fn sixty_seconds_anchor_exactly_three_messages() {
        let w = world(3);
        let mut p = camera_pipeline(&w, 10, 1_000);
        let stats = p.run_for(60).unwrap();
        assert_eq!(stats.mam_messages, 3);
        assert_eq!(p.anchors().len(), 3);
        let ids: Vec<u64> = p.anchors().iter().map(|a| a.interval_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        let indexes: Vec<u64> = p.anchors().iter().map(|a| a.message_index).collect();
        assert_eq!(indexes, vec![0, 1, 2]);
    }

    #[test]
    fn insurance_manifest_spans_exactly_three_ledger_transactions() {
        let w = world(4);
        let mut p = camera_pipeline(&w, 10, 100_000);
        p.run_for(20).unwrap();
        let anchor = &p.anchors()[0];
        assert_eq!(anchor.manifest.packet_digests.len(), 20);
        assert_eq!(
            chunks_for_body(anchor.manifest.to_body().len()),
            3,
            "20-digest manifest must need exactly 3 chunks"
        );
        assert_eq!(anchor.chunk_tx_ids.len(), 3);
    }

    #[test]
    fn empty_interval_publishes_a_heartbeat() {
        let w = world(5);
        // Rate 0: nothing is ever uploaded, the anchor still beats.
        let mut p = camera_pipeline(&w, 0, 0);
        let stats = p.run_for(40).unwrap();
        assert_eq!(stats.packets_uploaded, 0);
        assert_eq!(stats.mam_messages, 2);
        for anchor in p.anchors() {
            assert!(anchor.manifest.is_heartbeat());
            assert!(anchor.manifest.counts.is_empty());
            assert_eq!(anchor.chunk_tx_ids.len(), 1);
            assert!(anchor.first_upload_at.is_none());
        }
    }

    #[test]
    fn interval_keys_rotate_and_are_registered_on_anchor() {
        let w = world(6);
        let mut p = camera_pipeline(&w, 10, 1_000);
        p.run_for(60).unwrap();
        assert_eq!(p.interval_keys.len(), 3);
        let keys: Vec<_> = p.interval_keys.values().collect();
        assert!(keys[0] != keys[1] && keys[1] != keys[2]);
        // Side key + three interval keys lodged with the service.
        assert_eq!(w.authz.key_count(), 4);
    }

    #[test]
    fn store_failures_are_counted_not_fatal() {
        let w = world(7);
        // A store that can hold only ~2 camera packets.
        let store = Arc::new(
            Store::new(
                w.clock.clone(),
                StoreConfig {
                    capacity_bytes: Some(25_000),
                    ..StoreConfig::default()
                },
            )
            .unwrap(),
        );
        let mut p = Pipeline::bootstrap(
            9,
            w.owner.clone(),
            CameraSource::new(13, 10, 1_000),
            PipelineConfig::default(),
            w.clock.clone(),
            Arc::clone(&w.ledger),
            store,
            &w.chain,
            Arc::clone(&w.authz),
        )
        .unwrap();
        let stats = p.run_for(20).unwrap();
        assert!(stats.packets_failed > 0);
        assert_eq!(stats.packets_uploaded + stats.packets_failed, 20);
        // Failed packets never make it into the manifest.
        assert_eq!(
            p.anchors()[0].manifest.packet_digests.len() as u64,
            stats.packets_uploaded
        );
    }
}
