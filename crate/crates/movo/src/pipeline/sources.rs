//! Synthetic sensors. Rates and sizes come from the scenario config; all
//! randomness is seeded so runs replay bit-exactly.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{SensorSample, SensorType};

/// Per-frame driver state, every component in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffectMeasurement {
    pub frame_index: u64,
    pub eyes_closure: f64,
    pub attention: f64,
    pub anger: f64,
    pub surprise: f64,
}

impl AffectMeasurement {
    pub fn in_range(&self) -> bool {
        [self.eyes_closure, self.attention, self.anger, self.surprise]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

/// Anything that can emit one simulated second of samples.
pub trait SensorSource {
    /// Samples produced in [second_start_ms, second_start_ms + 1000), in
    /// emission order. An empty vec means the source is configured off.
    fn emit_second(&mut self, second_start_ms: u64) -> Vec<SensorSample>;
}

impl SensorSource for Box<dyn SensorSource> {
    fn emit_second(&mut self, second_start_ms: u64) -> Vec<SensorSample> {
        (**self).emit_second(second_start_ms)
    }
}

// ---------------------------------------------------------------------------
// Camera + affect
// ---------------------------------------------------------------------------

/// Dash camera: `rate_per_s` frames per second of `frame_bytes` each, every
/// frame paired with an affect measurement decoded from the driver's face.
pub struct CameraSource {
    rate_per_s: u32,
    frame_bytes: usize,
    rng: ChaCha12Rng,
    frame_index: u64,
    /// Random-walk state: eyes, attention, anger, surprise.
    affect: [f64; 4],
}

impl CameraSource {
    pub fn new(seed: u64, rate_per_s: u32, frame_bytes: usize) -> CameraSource {
        CameraSource {
            rate_per_s,
            frame_bytes,
            rng: ChaCha12Rng::seed_from_u64(seed),
            frame_index: 0,
            affect: [0.1, 0.9, 0.05, 0.05],
        }
    }

    fn next_affect(&mut self) -> AffectMeasurement {
        for v in self.affect.iter_mut() {
            // Smooth walk: small steps, clamped into the unit interval.
            *v = (*v + self.rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
        AffectMeasurement {
            frame_index: self.frame_index,
            eyes_closure: self.affect[0],
            attention: self.affect[1],
            anger: self.affect[2],
            surprise: self.affect[3],
        }
    }
}

impl SensorSource for CameraSource {
    fn emit_second(&mut self, second_start_ms: u64) -> Vec<SensorSample> {
        let mut out = Vec::with_capacity(2 * self.rate_per_s as usize);
        for i in 0..self.rate_per_s {
            let produced_at = second_start_ms + (i as u64 * 1000) / self.rate_per_s as u64;
            let mut frame = vec![0u8; self.frame_bytes];
            self.rng.fill_bytes(&mut frame);
            out.push(SensorSample {
                sensor_type: SensorType::CameraFrame,
                produced_at,
                payload: frame,
            });
            let affect = self.next_affect();
            self.frame_index += 1;
            out.push(SensorSample {
                sensor_type: SensorType::AffectMeasurement,
                produced_at,
                payload: crate::crypto::canonical_json(&affect),
            });
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Vehicle data points
// ---------------------------------------------------------------------------

/// OBD-style names, cycled so every metric appears at the same rate.
const POINT_NAMES: [&str; 9] = [
    "speed",
    "rpm",
    "engine_temperature",
    "fuel_level",
    "tire_pressure_front_left",
    "odometer",
    "battery_voltage",
    "throttle_position",
    "ambient_temperature",
];

/// JSON framing around the name, timestamp and value fields:
/// `{"name":"…","timestamp":…,"value":"…"}`.
const POINT_JSON_OVERHEAD: usize = 35;
const MAX_VALUE_CHARS: usize = 256;

/// Telematics feed: `rate_per_s` points per second, each a JSON object of
/// `point_bytes` (values padded, capped at 256 chars).
pub struct VehicleSource {
    rate_per_s: u32,
    point_bytes: usize,
    rng: ChaCha12Rng,
    seq: u64,
}

impl VehicleSource {
    pub fn new(seed: u64, rate_per_s: u32, point_bytes: usize) -> VehicleSource {
        VehicleSource {
            rate_per_s,
            point_bytes,
            rng: ChaCha12Rng::seed_from_u64(seed),
            seq: 0,
        }
    }

    fn point_payload(&mut self, produced_at: u64) -> Vec<u8> {
        let name = POINT_NAMES[(self.seq % POINT_NAMES.len() as u64) as usize];
        let ts = produced_at.to_string();
        let budget = self
            .point_bytes
            .saturating_sub(POINT_JSON_OVERHEAD + name.len() + ts.len());
        let value_len = budget.min(MAX_VALUE_CHARS);
        let mut value = String::with_capacity(value_len);
        while value.len() < value_len {
            value.push(char::from(b'0' + self.rng.random_range(0..10u8)));
        }
        format!("{{\"name\":\"{name}\",\"timestamp\":{ts},\"value\":\"{value}\"}}").into_bytes()
    }
}

impl SensorSource for VehicleSource {
    fn emit_second(&mut self, second_start_ms: u64) -> Vec<SensorSample> {
        let mut out = Vec::with_capacity(self.rate_per_s as usize);
        for i in 0..self.rate_per_s {
            let produced_at = second_start_ms + (i as u64 * 1000) / self.rate_per_s as u64;
            let payload = self.point_payload(produced_at);
            self.seq += 1;
            out.push(SensorSample {
                sensor_type: SensorType::VehiclePoint,
                produced_at,
                payload,
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_source<S: SensorSource>(source: &mut S, seconds: u64) -> Vec<SensorSample> {
        let mut all = Vec::new();
        for s in 0..seconds {
            all.extend(source.emit_second(s * 1000));
        }
        all
    }

    #[test]
    fn camera_minute_yields_600_frames_of_60_megabytes() {
        let mut src = CameraSource::new(1, 10, 100_000);
        let samples = run_source(&mut src, 60);
        let frames: Vec<_> = samples
            .iter()
            .filter(|s| s.sensor_type == SensorType::CameraFrame)
            .collect();
        assert_eq!(frames.len(), 600);
        let bytes: u64 = frames.iter().map(|s| s.payload.len() as u64).sum();
        assert_eq!(bytes, 60_000_000);
        // One affect measurement rides with every frame.
        let affects = samples
            .iter()
            .filter(|s| s.sensor_type == SensorType::AffectMeasurement)
            .count();
        assert_eq!(affects, 600);
    }

    #[test]
    fn vehicle_minute_yields_5400_points_near_1_62_megabytes() {
        let mut src = VehicleSource::new(2, 90, 300);
        let samples = run_source(&mut src, 60);
        assert_eq!(samples.len(), 5400);
        let bytes: u64 = samples.iter().map(|s| s.payload.len() as u64).sum();
        let target = 1_620_000f64;
        let diff = (bytes as f64 - target).abs() / target;
        assert!(diff < 0.005, "payload volume {bytes} strays from 1.62 MB");
    }

    #[test]
    fn zero_rate_gives_an_empty_stream() {
        assert!(CameraSource::new(3, 0, 100_000).emit_second(0).is_empty());
        assert!(VehicleSource::new(3, 0, 300).emit_second(0).is_empty());
    }

    #[test]
    fn affect_values_stay_in_the_unit_interval() {
        let mut src = CameraSource::new(4, 10, 16);
        for s in 0..200 {
            for sample in src.emit_second(s * 1000) {
                if sample.sensor_type == SensorType::AffectMeasurement {
                    let m: AffectMeasurement = serde_json::from_slice(&sample.payload).unwrap();
                    assert!(m.in_range(), "out-of-range affect: {m:?}");
                }
            }
        }
    }

    #[test]
    fn point_payloads_are_valid_json_of_the_configured_size() {
        let mut src = VehicleSource::new(5, 90, 258);
        for s in 0..5 {
            for sample in src.emit_second(s * 1000 + 10_000) {
                assert_eq!(sample.payload.len(), 258);
                let v: serde_json::Value = serde_json::from_slice(&sample.payload).unwrap();
                assert!(v["name"].is_string());
                assert!(v["timestamp"].is_u64());
                let value = v["value"].as_str().unwrap();
                assert!(value.len() <= MAX_VALUE_CHARS);
            }
        }
    }

    #[test]
    fn sample_timestamps_fall_inside_their_second() {
        let mut src = VehicleSource::new(6, 90, 300);
        for s in 0..3u64 {
            for sample in src.emit_second(s * 1000) {
                assert!(sample.produced_at >= s * 1000);
                assert!(sample.produced_at < (s + 1) * 1000);
            }
        }
    }

    #[test]
    fn sources_replay_identically_for_the_same_seed() {
        let a = run_source(&mut CameraSource::new(7, 10, 1_000), 5);
        let b = run_source(&mut CameraSource::new(7, 10, 1_000), 5);
        assert_eq!(a, b);
        let c = run_source(&mut VehicleSource::new(7, 90, 300), 5);
        let d = run_source(&mut VehicleSource::new(7, 90, 300), 5);
        assert_eq!(c, d);
    }
}
