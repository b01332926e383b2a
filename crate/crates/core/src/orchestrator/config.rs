//! Simulation config. The file format is JSON; every field except the plant
//! list has a default, so `{"plants": [...]}` is a complete config.
//!
//! ```json
//! {
//!   "seed": 2024,
//!   "sessions": 30,
//!   "plants": [{
//!     "plant_id": 1,
//!     "scenario": { "hotspot_count": [4, 6] },
//!     "robots": [{
//!       "robot_id": 1,
//!       "south_west": [45.0, 7.0],
//!       "north_east": [45.00027, 7.00038],
//!       "strip_width_m": 3.0
//!     }]
//!   }],
//!   "qkd": { "n_qubits": 16384, "eve_fraction": 0.0, "key_mode": "otp" },
//!   "learning": { "learning_rate": 0.05, "epochs": 3, "batch_size": 32 }
//! }
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::coverage::{GeoBoundingBox, GeoPoint, LocalFrame, Orientation};
use crate::envsim::{GasVector, ScenarioSpec};
use crate::error::{Error, Result};
use crate::fedlearn::{FeatureMap, TrainParams};
use crate::qkd::{DEFAULT_ABORT_THRESHOLD, MIN_QUBITS};
use crate::robot::{Battery, Kinematics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub sessions: u32,
    pub plants: Vec<PlantConfig>,
    pub qkd: QkdConfig,
    pub learning: LearningConfig,
    pub thresholds: GasVector,
    pub threshold_mode: ThresholdMode,
    pub network: NetworkConfig,
    pub features: FeatureMap,
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub plant_id: u32,
    pub robots: Vec<RobotConfig>,
    #[serde(default)]
    pub scenario: ScenarioSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub robot_id: u32,
    /// `[lat, lon]` in decimal degrees.
    pub south_west: [f64; 2],
    pub north_east: [f64; 2],
    /// Dock position in the box's local frame, meters east/north of the
    /// south-west corner.
    #[serde(default)]
    pub dock_m: [f64; 2],
    #[serde(default = "default_strip_width")]
    pub strip_width_m: f64,
    #[serde(default)]
    pub orientation: Orientation,
    #[serde(default)]
    pub turn_distance_m: Option<f64>,
    #[serde(default)]
    pub kinematics: Kinematics,
    #[serde(default)]
    pub battery: Battery,
}

fn default_strip_width() -> f64 {
    3.0
}

impl RobotConfig {
    pub fn bbox(&self) -> Result<GeoBoundingBox> {
        let sw = GeoPoint::new(self.south_west[0], self.south_west[1])?;
        let ne = GeoPoint::new(self.north_east[0], self.north_east[1])?;
        GeoBoundingBox::new(sw, ne)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyMode {
    /// One-time pad over the whole serialized model.
    Otp,
    /// SHA-256 of 256 key bits becomes a ChaCha20 key.
    DeriveChacha,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QkdConfig {
    pub n_qubits: usize,
    pub eve_fraction: f64,
    pub channel_flip_prob: f64,
    pub abort_threshold: f64,
    pub key_mode: KeyMode,
    /// Simulated clock cost of one key exchange, seconds.
    pub latency_s: f64,
    pub max_attempts: u32,
}

impl Default for QkdConfig {
    fn default() -> Self {
        Self {
            n_qubits: 16_384,
            eve_fraction: 0.0,
            channel_flip_prob: 0.01,
            abort_threshold: DEFAULT_ABORT_THRESHOLD,
            key_mode: KeyMode::Otp,
            latency_s: 2.0,
            max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    #[serde(flatten)]
    pub train: TrainParams,
    pub train_fraction: f64,
    /// Simulated training cost per sample per epoch, seconds.
    pub seconds_per_sample: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            train: TrainParams::default(),
            train_fraction: 0.8,
            seconds_per_sample: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    #[default]
    Static,
    /// Experimental: per-session thresholds read off the global model's
    /// decision boundary along each gas axis.
    Collective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// One-way robot to local-server delay, seconds.
    pub latency_s: f64,
    pub ack_timeout_s: f64,
    /// Probability that an acknowledgment is lost in transit.
    pub ack_loss_prob: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            latency_s: 0.05,
            ack_timeout_s: 5.0,
            ack_loss_prob: 0.0,
        }
    }
}

pub const DEFAULT_THRESHOLDS: GasVector = GasVector::new(1000.0, 35.0, 1000.0);

impl Default for SimConfig {
    fn default() -> Self {
        let origins = [(45.0, 7.0), (46.0, 8.0)];
        let plants = origins
            .iter()
            .enumerate()
            .map(|(p, &(lat0, lon0))| PlantConfig {
                plant_id: p as u32 + 1,
                scenario: ScenarioSpec::default(),
                robots: (0..4)
                    .map(|k| {
                        let (row, col) = ((k / 2) as f64, (k % 2) as f64);
                        let (dlat, dlon) = (0.00027, 0.00038);
                        RobotConfig {
                            robot_id: (p * 4 + k) as u32 + 1,
                            south_west: [lat0 + row * dlat, lon0 + col * dlon],
                            north_east: [lat0 + (row + 1.0) * dlat, lon0 + (col + 1.0) * dlon],
                            dock_m: [0.0, 0.0],
                            strip_width_m: default_strip_width(),
                            orientation: Orientation::Vertical,
                            turn_distance_m: None,
                            kinematics: Kinematics::default(),
                            battery: Battery::default(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Self {
            seed: 2024,
            sessions: 30,
            plants,
            qkd: QkdConfig::default(),
            learning: LearningConfig::default(),
            thresholds: DEFAULT_THRESHOLDS,
            threshold_mode: ThresholdMode::Static,
            network: NetworkConfig::default(),
            features: FeatureMap::default(),
            output_dir: None,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions == 0 {
            return Err(cfg_err("sessions must be at least 1"));
        }
        if self.plants.is_empty() {
            return Err(cfg_err("at least one plant is required"));
        }
        let mut plant_ids = BTreeSet::new();
        let mut robot_ids = BTreeSet::new();
        for p in &self.plants {
            if !plant_ids.insert(p.plant_id) {
                return Err(cfg_err(format!("duplicate plant id {}", p.plant_id)));
            }
            if p.robots.is_empty() {
                return Err(cfg_err(format!("plant {} has no robots", p.plant_id)));
            }
            p.scenario
                .validate()
                .map_err(|e| cfg_err(format!("plant {} scenario: {e}", p.plant_id)))?;
            for r in &p.robots {
                if !robot_ids.insert(r.robot_id) {
                    return Err(cfg_err(format!("duplicate robot id {}", r.robot_id)));
                }
                let ctx = |e: Error| cfg_err(format!("robot {}: {e}", r.robot_id));
                let bbox = r.bbox().map_err(ctx)?;
                let frame = LocalFrame::from_box(&bbox);
                if !frame.contains_local(r.dock_m[0], r.dock_m[1]) {
                    return Err(cfg_err(format!("robot {}: dock outside its box", r.robot_id)));
                }
                r.battery.validate().map_err(ctx)?;
                if !(r.kinematics.speed_mps > 0.0 && r.kinematics.cadence_hz > 0.0) {
                    return Err(cfg_err(format!("robot {}: speed and cadence must be positive", r.robot_id)));
                }
                crate::coverage::plan_lawnmower(&bbox, r.strip_width_m, r.orientation, r.turn_distance_m)
                    .map_err(ctx)?;
            }
        }
        let q = &self.qkd;
        if q.n_qubits < MIN_QUBITS {
            return Err(cfg_err(format!("qkd.n_qubits must be at least {MIN_QUBITS}")));
        }
        for (name, v) in [
            ("qkd.eve_fraction", q.eve_fraction),
            ("qkd.channel_flip_prob", q.channel_flip_prob),
            ("qkd.abort_threshold", q.abort_threshold),
            ("network.ack_loss_prob", self.network.ack_loss_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(cfg_err(format!("{name} must be in [0, 1]")));
            }
        }
        if self.network.ack_loss_prob >= 1.0 {
            return Err(cfg_err("network.ack_loss_prob must be below 1"));
        }
        if q.max_attempts == 0 || !(q.latency_s >= 0.0) {
            return Err(cfg_err("qkd.max_attempts >= 1 and qkd.latency_s >= 0 required"));
        }
        if !(self.network.latency_s >= 0.0) || !(self.network.ack_timeout_s > 2.0 * self.network.latency_s) {
            return Err(cfg_err("network.ack_timeout_s must exceed the round-trip latency"));
        }
        let l = &self.learning;
        if !(l.train.learning_rate >= 0.0) || l.train.epochs == 0 {
            return Err(cfg_err("learning rate must be >= 0 and epochs >= 1"));
        }
        if !(l.train_fraction > 0.0 && l.train_fraction < 1.0) {
            return Err(cfg_err("learning.train_fraction must be in (0, 1)"));
        }
        if !(l.seconds_per_sample >= 0.0) {
            return Err(cfg_err("learning.seconds_per_sample must be >= 0"));
        }
        if !self.thresholds.is_valid() || self.thresholds.to_array().iter().any(|&t| t <= 0.0) {
            return Err(cfg_err("thresholds must be positive"));
        }
        if !self.features.background.is_valid()
            || self.features.scale.to_array().iter().any(|&s| !(s > 0.0) || !s.is_finite())
        {
            return Err(cfg_err("feature scales must be positive"));
        }
        Ok(())
    }
}
