//! Scenario harness: wires every service together on one virtual clock,
//! drives a use case end to end, and reports metrics.
//!
//! A scenario is fully described by a [`ScenarioConfig`]; identical configs
//! (including the seed) produce byte-identical [`MetricsReport`] JSON. The
//! harness never absorbs an invariant violation: conservation failures,
//! unexpected integrity alarms, and settlement mismatches come back as named
//! breaches alongside the report.

mod scenarios;
mod verify;

pub use scenarios::{run_scenario, RunOutcome, ScenarioWorld};
pub use verify::{verify_report, CheckResult, Expectation};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    P2p(#[from] crate::p2p::P2pError),
    #[error(transparent)]
    Chain(#[from] crate::chain::ChainError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Scenario selection and configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Dash camera + affect stream shared with an insurer.
    Insurance,
    /// High-rate OBD point stream shared with a repair shop after a paid
    /// check-in.
    Mechanic,
    /// Metered energy purchase over an off-chain payment channel.
    Charging,
    /// Mechanic-shaped load against a store with a lowered concurrency
    /// limit, to expose the service-rate plateau.
    Saturation,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Insurance,
        Scenario::Mechanic,
        Scenario::Charging,
        Scenario::Saturation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Insurance => "insurance",
            Scenario::Mechanic => "mechanic",
            Scenario::Charging => "charging",
            Scenario::Saturation => "saturation",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Scenario, String> {
        Scenario::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|k| k.name()).collect();
                format!("unknown scenario {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// Complete, self-contained description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub duration_s: u64,
    pub seed: u64,

    // Stream shape.
    pub camera_fps: u32,
    pub frame_bytes: usize,
    pub vehicle_rate_per_s: u32,
    pub vehicle_point_bytes: usize,
    pub anchor_every_s: u64,

    // Charging session shape.
    pub deposit: u64,
    pub price_per_unit: u64,
    pub units_wanted: u64,
    pub pause_after: Option<u64>,

    // Service latencies and limits.
    pub confirmation_latency_ms: u64,
    pub p2p_latency_ms: u64,
    pub store_base_latency_ms: u64,
    pub store_bandwidth_bytes_per_s: u64,
    pub store_concurrent_limit: usize,
    pub store_capacity_bytes: Option<u64>,

    /// Fee the consumer pays the vehicle owner at check-in (mechanic and
    /// saturation scenarios).
    pub check_in_fee: u64,
}

impl ScenarioConfig {
    /// The built-in parameterization of each scenario.
    pub fn preset(scenario: Scenario) -> ScenarioConfig {
        let base = ScenarioConfig {
            scenario,
            duration_s: 60,
            seed: 42,
            camera_fps: 10,
            frame_bytes: 100_000,
            vehicle_rate_per_s: 90,
            vehicle_point_bytes: 258,
            anchor_every_s: 20,
            deposit: 100,
            price_per_unit: 5,
            units_wanted: 8,
            pause_after: Some(3),
            confirmation_latency_ms: 20_000,
            p2p_latency_ms: 5,
            store_base_latency_ms: 50,
            store_bandwidth_bytes_per_s: 50_000_000,
            store_concurrent_limit: 128,
            store_capacity_bytes: None,
            check_in_fee: 10,
        };
        match scenario {
            Scenario::Insurance | Scenario::Mechanic | Scenario::Charging => base,
            Scenario::Saturation => ScenarioConfig {
                store_base_latency_ms: 500,
                store_concurrent_limit: 30,
                ..base
            },
        }
    }

    /// Parse a JSON override file and lay it over this config. Every field
    /// is optional; a `scenario` field must agree with the preset's.
    pub fn apply_overrides_json(mut self, json: &str) -> Result<ScenarioConfig, HarnessError> {
        let o: ConfigOverrides =
            serde_json::from_str(json).map_err(|e| HarnessError::Malformed {
                what: "config file",
                reason: e.to_string(),
            })?;
        if let Some(s) = o.scenario {
            if s != self.scenario {
                return Err(HarnessError::Config(format!(
                    "config file names scenario {s} but {} was requested",
                    self.scenario
                )));
            }
        }
        macro_rules! lay {
            ($($field:ident),+ $(,)?) => {
                $(if let Some(v) = o.$field { self.$field = v; })+
            };
        }
        lay!(
            duration_s,
            seed,
            camera_fps,
            frame_bytes,
            vehicle_rate_per_s,
            vehicle_point_bytes,
            anchor_every_s,
            deposit,
            price_per_unit,
            units_wanted,
            confirmation_latency_ms,
            p2p_latency_ms,
            store_base_latency_ms,
            store_bandwidth_bytes_per_s,
            store_concurrent_limit,
            check_in_fee,
        );
        // Nested options override wholesale when the key is present.
        if let Some(v) = o.pause_after {
            self.pause_after = v;
        }
        if let Some(v) = o.store_capacity_bytes {
            self.store_capacity_bytes = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.anchor_every_s == 0 {
            return Err(HarnessError::Config("anchor_every_s must be positive".into()));
        }
        if self.scenario == Scenario::Charging {
            if self.price_per_unit == 0 {
                return Err(HarnessError::Config("price_per_unit must be positive".into()));
            }
            if self.deposit < self.price_per_unit {
                return Err(HarnessError::Config(
                    "deposit must cover at least one unit".into(),
                ));
            }
        }
        Ok(())
    }
}

/// JSON shape of a config file: any subset of [`ScenarioConfig`]'s fields.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigOverrides {
    scenario: Option<Scenario>,
    duration_s: Option<u64>,
    seed: Option<u64>,
    camera_fps: Option<u32>,
    frame_bytes: Option<usize>,
    vehicle_rate_per_s: Option<u32>,
    vehicle_point_bytes: Option<usize>,
    anchor_every_s: Option<u64>,
    deposit: Option<u64>,
    price_per_unit: Option<u64>,
    units_wanted: Option<u64>,
    /// `null` clears the pause, a number sets it.
    #[serde(default, with = "double_option")]
    pause_after: Option<Option<u64>>,
    confirmation_latency_ms: Option<u64>,
    p2p_latency_ms: Option<u64>,
    store_base_latency_ms: Option<u64>,
    store_bandwidth_bytes_per_s: Option<u64>,
    store_concurrent_limit: Option<usize>,
    #[serde(default, with = "double_option")]
    store_capacity_bytes: Option<Option<u64>>,
    check_in_fee: Option<u64>,
}

/// Distinguishes an absent key (no override) from an explicit `null`
/// (override to `None`).
mod double_option {
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de>,
    {
        Option::<T>::deserialize(d).map(Some)
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Settlement facts for a charging run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargingSummary {
    pub deposit: u64,
    pub price_per_unit: u64,
    pub units_wanted: u64,
    pub units_delivered: u64,
    pub updates_sent: u64,
    pub updates_rejected: u64,
    pub server_payout: u64,
    pub client_refund: u64,
}

/// The single JSON document a run emits. Field order is part of the format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Bytes accepted by the content store, normalized per minute.
    pub dfs_bytes_per_min: f64,
    /// Put operations accepted by the content store, per second.
    pub dfs_puts_per_sec: f64,
    /// Channel messages anchored, normalized per minute.
    pub mam_messages_per_min: f64,
    /// Ledger transactions per channel message (chunking factor).
    pub ledger_txs_per_mam_message: f64,
    /// Account-chain transactions during the measured phase (setup excluded).
    pub onchain_tx_count: u64,
    /// Peer-to-peer protocol messages exchanged, both directions.
    pub offchain_msg_count: u64,
    /// Sample payload bytes the consumer recovered end to end.
    pub end_to_end_recovered_bytes: u64,
    /// Failed store puts plus rejected balance updates.
    pub failures: u64,

    // -- identification and derived values --
    pub scenario: String,
    pub duration_s: u64,
    pub seed: u64,
    /// Sample payload bytes the producer emitted and uploaded.
    pub produced_bytes: u64,
    pub produced_samples: u64,
    pub recovered_samples: u64,
    pub recovered_packets: u64,
    pub mam_message_count: u64,
    pub ledger_tx_count: u64,
    pub integrity_alarms: u64,
    pub key_denials: u64,
    /// Producer and consumer stream books agreed (order- and byte-exact).
    pub stream_conserved: bool,
    /// Mean delay from anchoring a message to its last chunk confirming.
    pub mean_anchor_confirmation_ms: f64,
    /// Ingress volume extrapolated to a 70-minute driving day.
    pub projected_70min_bytes: f64,
    /// Puts whose service completed, per second, over the run window.
    pub dfs_completed_puts_per_sec: f64,
    /// Analytic service bound: concurrency limit over per-put service time.
    pub saturation_bound_puts_per_s: Option<f64>,
    pub charging: Option<ChargingSummary>,
}

impl MetricsReport {
    pub fn empty(config: &ScenarioConfig) -> MetricsReport {
        MetricsReport {
            dfs_bytes_per_min: 0.0,
            dfs_puts_per_sec: 0.0,
            mam_messages_per_min: 0.0,
            ledger_txs_per_mam_message: 0.0,
            onchain_tx_count: 0,
            offchain_msg_count: 0,
            end_to_end_recovered_bytes: 0,
            failures: 0,
            scenario: config.scenario.name().to_string(),
            duration_s: config.duration_s,
            seed: config.seed,
            produced_bytes: 0,
            produced_samples: 0,
            recovered_samples: 0,
            recovered_packets: 0,
            mam_message_count: 0,
            ledger_tx_count: 0,
            integrity_alarms: 0,
            key_denials: 0,
            stream_conserved: true,
            mean_anchor_confirmation_ms: 0.0,
            projected_70min_bytes: 0.0,
            dfs_completed_puts_per_sec: 0.0,
            saturation_bound_puts_per_s: None,
            charging: None,
        }
    }

    /// The exact bytes `movo-sim run --out` writes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<MetricsReport, HarnessError> {
        serde_json::from_str(json).map_err(|e| HarnessError::Malformed {
            what: "metrics report",
            reason: e.to_string(),
        })
    }

    /// Structural sanity independent of any scenario expectation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.end_to_end_recovered_bytes > self.produced_bytes {
            return Err(format!(
                "recovered {} bytes exceeds produced {}",
                self.end_to_end_recovered_bytes, self.produced_bytes
            ));
        }
        for (name, v) in [
            ("dfs_bytes_per_min", self.dfs_bytes_per_min),
            ("dfs_puts_per_sec", self.dfs_puts_per_sec),
            ("mam_messages_per_min", self.mam_messages_per_min),
            ("ledger_txs_per_mam_message", self.ledger_txs_per_mam_message),
            ("mean_anchor_confirmation_ms", self.mean_anchor_confirmation_ms),
            ("projected_70min_bytes", self.projected_70min_bytes),
            ("dfs_completed_puts_per_sec", self.dfs_completed_puts_per_sec),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} is not a finite non-negative number: {v}"));
            }
        }
        if let Some(c) = &self.charging {
            if c.server_payout + c.client_refund != c.deposit {
                return Err(format!(
                    "settlement {} + {} does not equal deposit {}",
                    c.server_payout, c.client_refund, c.deposit
                ));
            }
        }
        Ok(())
    }
}

/// Named expectation set: metric name (dotted paths reach into `charging`)
/// to the check it must satisfy.
pub type Expectations = BTreeMap<String, Expectation>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_names_round_trip() {
        for k in Scenario::ALL {
            assert_eq!(k.name().parse::<Scenario>().unwrap(), k);
        }
        assert!("tea".parse::<Scenario>().is_err());
    }

    #[test]
    fn presets_differ_only_where_documented() {
        let mechanic = ScenarioConfig::preset(Scenario::Mechanic);
        let saturation = ScenarioConfig::preset(Scenario::Saturation);
        assert_eq!(mechanic.vehicle_rate_per_s, saturation.vehicle_rate_per_s);
        assert_eq!(saturation.store_concurrent_limit, 30);
        assert_eq!(saturation.store_base_latency_ms, 500);
        assert_eq!(mechanic.store_concurrent_limit, 128);
    }

    #[test]
    fn overrides_lay_over_presets() {
        let cfg = ScenarioConfig::preset(Scenario::Insurance)
            .apply_overrides_json(r#"{"duration_s": 20, "camera_fps": 2}"#)
            .unwrap();
        assert_eq!(cfg.duration_s, 20);
        assert_eq!(cfg.camera_fps, 2);
        assert_eq!(cfg.frame_bytes, 100_000, "untouched fields keep preset values");
    }

    #[test]
    fn override_file_cannot_switch_scenarios_or_invent_fields() {
        let err = ScenarioConfig::preset(Scenario::Insurance)
            .apply_overrides_json(r#"{"scenario": "charging"}"#)
            .unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
        let err = ScenarioConfig::preset(Scenario::Insurance)
            .apply_overrides_json(r#"{"frames_per_s": 3}"#)
            .unwrap_err();
        assert!(matches!(err, HarnessError::Malformed { .. }));
    }

    #[test]
    fn explicit_null_clears_the_pause() {
        let cfg = ScenarioConfig::preset(Scenario::Charging)
            .apply_overrides_json(r#"{"pause_after": null}"#)
            .unwrap();
        assert_eq!(cfg.pause_after, None);
        let untouched = ScenarioConfig::preset(Scenario::Charging)
            .apply_overrides_json("{}")
            .unwrap();
        assert_eq!(untouched.pause_after, Some(3));
    }

    #[test]
    fn report_json_round_trips_with_stable_field_order() {
        let mut report = MetricsReport::empty(&ScenarioConfig::preset(Scenario::Insurance));
        report.dfs_bytes_per_min = 60_090_000.0;
        report.onchain_tx_count = 2;
        let json = report.to_json();
        let lead = json.find("dfs_bytes_per_min").unwrap();
        for later in [
            "dfs_puts_per_sec",
            "mam_messages_per_min",
            "ledger_txs_per_mam_message",
            "onchain_tx_count",
            "offchain_msg_count",
            "end_to_end_recovered_bytes",
            "failures",
        ] {
            assert!(json.find(later).unwrap() > lead, "{later} must follow");
        }
        assert_eq!(MetricsReport::from_json(&json).unwrap(), report);
    }

    #[test]
    fn invariant_checker_rejects_overdrawn_recovery() {
        let mut report = MetricsReport::empty(&ScenarioConfig::preset(Scenario::Insurance));
        report.end_to_end_recovered_bytes = 10;
        report.produced_bytes = 5;
        assert!(report.check_invariants().is_err());
    }
}
