//! Survey robot lifecycle: scanning along a coverage plan, halting on
//! threshold exceedance until the local server acknowledges the report, and
//! docking to charge and train once the battery runs low.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chacha::{make_nonce, ChaChaKey, CipherFrame, NonceLedger, TelemetryRecord, KEY_LEN};
use crate::coverage::{CoveragePlan, GeoPoint, LocalFrame};
use crate::envsim::{ContaminationClass, GasField, GasVector};
use crate::error::{invalid, Error, Result};
use crate::events::{Event, EventKind};
use crate::fedlearn::{LocalUpdate, ModelWeights};

pub use crate::envsim::SensorReading;

/// Battery level below which a scanning robot heads for its dock.
pub const LOW_BATTERY: f64 = 0.20;
/// Battery level required before leaving the dock.
pub const LEAVE_BATTERY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gas {
    Co2,
    Co,
    Ch4,
}

impl Gas {
    pub const ALL: [Gas; 3] = [Gas::Co2, Gas::Co, Gas::Ch4];

    pub fn name(self) -> &'static str {
        match self {
            Gas::Co2 => "co2",
            Gas::Co => "co",
            Gas::Ch4 => "ch4",
        }
    }

    fn of(self, v: &GasVector) -> f64 {
        match self {
            Gas::Co2 => v.co2_ppm,
            Gas::Co => v.co_ppm,
            Gas::Ch4 => v.ch4_ppm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub gas: Gas,
    pub measured_ppm: f64,
    pub threshold_ppm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub location: GeoPoint,
    /// Gases strictly above threshold, in `Gas::ALL` order.
    pub exceeded: Vec<Exceedance>,
    /// Full reading the report was raised from.
    pub reading: GasVector,
    pub timestamp: f64,
}

impl ContaminationReport {
    pub fn telemetry(&self) -> TelemetryRecord {
        TelemetryRecord {
            lat: self.location.lat(),
            lon: self.location.lon(),
            co2_ppm: self.reading.co2_ppm,
            co_ppm: self.reading.co_ppm,
            ch4_ppm: self.reading.ch4_ppm,
            timestamp_ms: (self.timestamp * 1000.0).round() as u64,
        }
    }
}

/// Identifier shared by robot and server: the first 8 bytes of SHA-256 over
/// the 48-byte telemetry record.
pub fn report_hash(record_bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(record_bytes);
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

pub fn detect(reading: &SensorReading, thresholds: &GasVector) -> Option<ContaminationReport> {
    let exceeded: Vec<Exceedance> = Gas::ALL
        .iter()
        .filter_map(|&gas| {
            let measured = gas.of(&reading.gases);
            let threshold = gas.of(thresholds);
            (measured > threshold).then_some(Exceedance {
                gas,
                measured_ppm: measured,
                threshold_ppm: threshold,
            })
        })
        .collect();
    if exceeded.is_empty() {
        return None;
    }
    Some(ContaminationReport {
        location: reading.position,
        exceeded,
        reading: reading.gases,
        timestamp: reading.timestamp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Battery {
    pub level: f64,
    pub drain_per_meter: f64,
    pub drain_per_second: f64,
    pub charge_rate: f64,
}

impl Default for Battery {
    fn default() -> Self {
        Self {
            level: 1.0,
            drain_per_meter: 0.0015,
            drain_per_second: 0.0002,
            charge_rate: 0.004,
        }
    }
}

impl Battery {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.level) {
            return Err(invalid("battery level must be in [0, 1]"));
        }
        if !(self.drain_per_meter > 0.0 && self.drain_per_second > 0.0 && self.charge_rate > 0.0) {
            return Err(invalid("battery rates must be positive"));
        }
        Ok(())
    }

    fn drain(&mut self, meters: f64, seconds: f64) {
        self.level = (self.level - meters * self.drain_per_meter - seconds * self.drain_per_second).clamp(0.0, 1.0);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionMemory {
    pub readings: Vec<(SensorReading, Option<ContaminationClass>)>,
    pub session_index: u32,
}

impl SessionMemory {
    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingProgress {
    pub docked: bool,
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RobotState {
    Scanning,
    Critical(ContaminationReport),
    Charging(TrainingProgress),
}

impl RobotState {
    pub fn name(&self) -> &'static str {
        match self {
            RobotState::Scanning => "Scanning",
            RobotState::Critical(_) => "Critical",
            RobotState::Charging(_) => "Charging",
        }
    }
}

/// Position along the ping-pong traversal of a plan's polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PlanCursor {
    segment: usize,
    offset: f64,
    forward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Kinematics {
    pub speed_mps: f64,
    pub cadence_hz: f64,
}

impl Default for Kinematics {
    fn default() -> Self {
        Self {
            speed_mps: 1.0,
            cadence_hz: 1.0,
        }
    }
}

/// Local-channel transmission state for the report currently in flight.
#[derive(Debug, Clone)]
struct Outbox {
    frame: Option<CipherFrame>,
    hash: u64,
    attempts: u32,
}

#[derive(Debug, Clone)]
pub struct Robot {
    pub id: u32,
    pub frame: LocalFrame,
    pub plan: CoveragePlan,
    pub dock: (f64, f64),
    pub kinematics: Kinematics,
    pub thresholds: GasVector,
    pub battery: Battery,
    pub model: ModelWeights,
    pub memory: SessionMemory,
    state: RobotState,
    position: (f64, f64),
    cursor: PlanCursor,
    clock: f64,
    next_sample_at: f64,
    channel_key: [u8; KEY_LEN],
    message_counter: u64,
    ledger: NonceLedger,
    outbox: Option<Outbox>,
    completed_sessions: u32,
    archived_readings: usize,
    in_session: bool,
}

/// Result of one charge-and-train stay at the dock.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeOutcome {
    pub update: LocalUpdate,
    pub arrived_at: f64,
    pub train_done_at: f64,
    pub charged_at: f64,
    pub departed_at: f64,
    pub events: Vec<Event>,
}

/// Trains a local model from a session's memory. Returns the update and the
/// simulated training duration in seconds.
pub trait Trainer {
    fn train(&mut self, robot_id: u32, global: &ModelWeights, memory: &SessionMemory) -> Result<(LocalUpdate, f64)>;
}

impl Robot {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        frame: LocalFrame,
        plan: CoveragePlan,
        dock: (f64, f64),
        kinematics: Kinematics,
        thresholds: GasVector,
        battery: Battery,
        model: ModelWeights,
    ) -> Result<Self> {
        battery.validate()?;
        if !(kinematics.speed_mps > 0.0 && kinematics.cadence_hz > 0.0) {
            return Err(invalid("speed and cadence must be positive"));
        }
        if !frame.contains_local(dock.0, dock.1) {
            return Err(invalid("dock must lie inside the robot's box"));
        }
        if plan.waypoints.is_empty() {
            return Err(invalid("coverage plan has no waypoints"));
        }
        if !thresholds.is_valid() || thresholds.to_array().iter().any(|&t| t <= 0.0) {
            return Err(invalid("thresholds must be positive"));
        }
        Ok(Self {
            id,
            frame,
            position: plan.waypoints[0],
            plan,
            dock,
            kinematics,
            thresholds,
            battery,
            model,
            memory: SessionMemory::default(),
            state: RobotState::Scanning,
            cursor: PlanCursor {
                segment: 0,
                offset: 0.0,
                forward: true,
            },
            clock: 0.0,
            next_sample_at: 1.0 / kinematics.cadence_hz,
            channel_key: [0; KEY_LEN],
            message_counter: 0,
            ledger: NonceLedger::new(),
            outbox: None,
            completed_sessions: 0,
            archived_readings: 0,
            in_session: false,
        })
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn position(&self) -> (f64, f64) {
        self.position
    }

    pub fn geo_position(&self) -> GeoPoint {
        self.frame.to_geo(self.position.0, self.position.1)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn session_index(&self) -> u32 {
        self.memory.session_index
    }

    pub fn completed_sessions(&self) -> u32 {
        self.completed_sessions
    }

    pub fn archived_readings(&self) -> usize {
        self.archived_readings
    }

    pub fn pending_report(&self) -> Option<&ContaminationReport> {
        match &self.state {
            RobotState::Critical(r) => Some(r),
            _ => None,
        }
    }

    /// Starts a session at `start_time`: installs the global model, a fresh
    /// local-channel key, and travels from the dock back onto the plan.
    pub fn begin_session(&mut self, start_time: f64, model: ModelWeights, channel_key: [u8; KEY_LEN]) -> Result<Vec<Event>> {
        match self.state {
            _ if self.in_session => {
                return Err(Error::InvalidState(format!("robot {} is already in a session", self.id)))
            }
            RobotState::Scanning if self.completed_sessions == 0 => {}
            RobotState::Charging(TrainingProgress { docked: true, trained: true }) => {}
            _ => {
                return Err(Error::InvalidState(format!(
                    "robot {} cannot start a session while {}",
                    self.id,
                    self.state.name()
                )))
            }
        }
        self.in_session = true;
        self.clock = start_time;
        let version = model.version;
        self.model = model;
        self.channel_key = channel_key;
        self.message_counter = 0;
        self.ledger = NonceLedger::new();
        self.outbox = None;
        self.memory.session_index = self.completed_sessions + 1;

        let resume = self.cursor_point(self.cursor);
        let dist = distance(self.position, resume);
        let secs = dist / self.kinematics.speed_mps;
        self.battery.drain(dist, secs);
        self.clock += secs;
        self.position = resume;
        self.next_sample_at = self.clock + 1.0 / self.kinematics.cadence_hz;
        self.state = RobotState::Scanning;
        Ok(vec![Event::new(
            start_time,
            self.id,
            EventKind::GlobalModelInstalled,
            format!("version={version}"),
        )])
    }

    fn segment(&self, i: usize) -> ((f64, f64), (f64, f64)) {
        (self.plan.waypoints[i], self.plan.waypoints[i + 1])
    }

    fn segments(&self) -> usize {
        self.plan.waypoints.len().saturating_sub(1)
    }

    fn cursor_point(&self, c: PlanCursor) -> (f64, f64) {
        if self.segments() == 0 {
            return self.plan.waypoints[0];
        }
        let (a, b) = self.segment(c.segment);
        let len = distance(a, b);
        if len == 0.0 {
            return a;
        }
        let t = (c.offset / len).clamp(0.0, 1.0);
        (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
    }

    /// Moves `dist` meters along the plan, reversing at either end.
    fn advance(&mut self, mut dist: f64) {
        let n = self.segments();
        if n == 0 {
            return;
        }
        let mut guard = 0usize;
        while dist > 0.0 {
            guard += 1;
            if guard > 4 * n + 16 && dist < 1e-12 {
                break;
            }
            let (a, b) = self.segment(self.cursor.segment);
            let len = distance(a, b);
            let room = if self.cursor.forward {
                len - self.cursor.offset
            } else {
                self.cursor.offset
            };
            if dist < room {
                self.cursor.offset += if self.cursor.forward { dist } else { -dist };
                dist = 0.0;
            } else {
                dist -= room.max(0.0);
                if self.cursor.forward {
                    if self.cursor.segment + 1 < n {
                        self.cursor.segment += 1;
                        self.cursor.offset = 0.0;
                    } else {
                        self.cursor.offset = len;
                        self.cursor.forward = false;
                    }
                } else if self.cursor.segment > 0 {
                    self.cursor.segment -= 1;
                    let (a, b) = self.segment(self.cursor.segment);
                    self.cursor.offset = distance(a, b);
                } else {
                    self.cursor.offset = 0.0;
                    self.cursor.forward = true;
                }
            }
        }
        self.position = self.cursor_point(self.cursor);
    }

    /// Advances a scanning robot by `dt` seconds.
    pub fn step<R: Rng + ?Sized>(&mut self, field: &GasField, dt: f64, rng: &mut R) -> Result<Vec<Event>> {
        if !matches!(self.state, RobotState::Scanning) {
            return Err(Error::InvalidState(format!(
                "robot {} cannot scan while {}",
                self.id,
                self.state.name()
            )));
        }
        if !(dt > 0.0) {
            return Err(invalid("dt must be positive"));
        }
        let mut events = Vec::new();
        let end = self.clock + dt;
        while self.clock < end - 1e-12 {
            let chunk = (self.next_sample_at.min(end) - self.clock).max(0.0);
            let dist = chunk * self.kinematics.speed_mps;
            let before = self.battery.level;
            self.advance(dist);
            self.battery.drain(dist, chunk);
            self.clock += chunk;

            if self.clock >= self.next_sample_at - 1e-9 {
                self.clock = self.clock.max(self.next_sample_at);
                self.next_sample_at += 1.0 / self.kinematics.cadence_hz;
                let reading = field.sample(&self.frame, self.position, self.clock, rng);
                let label = field.label_at(self.position, self.clock);
                events.push(Event::new(
                    self.clock,
                    self.id,
                    EventKind::ReadingTaken,
                    format!(
                        "x={:.3};y={:.3};co2={:.3};co={:.3};ch4={:.3};label={}",
                        self.position.0,
                        self.position.1,
                        reading.gases.co2_ppm,
                        reading.gases.co_ppm,
                        reading.gases.ch4_ppm,
                        label.name()
                    ),
                ));
                self.memory.readings.push((reading, Some(label)));
                if let Some(report) = detect(&reading, &self.thresholds) {
                    let gases: Vec<&str> = report.exceeded.iter().map(|e| e.gas.name()).collect();
                    events.push(Event::new(self.clock, self.id, EventKind::ThresholdExceeded, gases.join("+")));
                    self.enter_critical(report)?;
                    return Ok(events);
                }
            }

            if self.battery.level < LOW_BATTERY {
                events.push(Event::new(
                    self.clock,
                    self.id,
                    EventKind::BatteryLow,
                    format!("level={:.4};was={:.4}", self.battery.level, before),
                ));
                self.state = RobotState::Charging(TrainingProgress::default());
                return Ok(events);
            }
        }
        Ok(events)
    }

    /// Halts and holds `report` until the local server acknowledges it.
    pub fn enter_critical(&mut self, report: ContaminationReport) -> Result<()> {
        if !matches!(self.state, RobotState::Scanning) {
            return Err(Error::InvalidState(format!(
                "robot {} cannot enter Critical while {}",
                self.id,
                self.state.name()
            )));
        }
        let bytes = report.telemetry().encode()?;
        self.outbox = Some(Outbox {
            frame: None,
            hash: report_hash(&bytes),
            attempts: 0,
        });
        self.state = RobotState::Critical(report);
        Ok(())
    }

    /// Encrypted frame for the pending report. Retransmissions return the
    /// identical frame without spending another nonce.
    pub fn outbound_frame(&mut self) -> Result<(CipherFrame, u64)> {
        let report = match &self.state {
            RobotState::Critical(r) => r.clone(),
            other => {
                return Err(Error::InvalidState(format!("no pending report while {}", other.name())))
            }
        };
        let outbox = self.outbox.as_mut().ok_or_else(|| Error::InvalidState("outbox missing".into()))?;
        outbox.attempts += 1;
        if let Some(f) = &outbox.frame {
            return Ok((f.clone(), outbox.hash));
        }
        let key = ChaChaKey::new(self.channel_key, make_nonce(self.id, self.message_counter));
        self.message_counter += 1;
        let frame = self.ledger.encrypt(&key, &report.telemetry().encode()?)?;
        outbox.frame = Some(frame.clone());
        Ok((frame, outbox.hash))
    }

    pub fn transmission_attempts(&self) -> u32 {
        self.outbox.as_ref().map_or(0, |o| o.attempts)
    }

    pub fn channel_key(&self) -> &[u8; KEY_LEN] {
        &self.channel_key
    }

    /// Passes time without moving; the battery still drains per second.
    pub fn idle(&mut self, seconds: f64) {
        self.battery.drain(0.0, seconds);
        self.clock += seconds;
        self.next_sample_at = self.next_sample_at.max(self.clock);
    }

    /// Accepts an acknowledgment for the pending report and resumes scanning
    /// from the current plan position.
    pub fn acknowledge(&mut self, hash: u64) -> Result<()> {
        match (&self.state, &self.outbox) {
            (RobotState::Critical(_), Some(o)) if o.hash == hash => {
                self.state = RobotState::Scanning;
                self.outbox = None;
                self.next_sample_at = self.clock + 1.0 / self.kinematics.cadence_hz;
                Ok(())
            }
            (RobotState::Critical(_), _) => Err(Error::InvalidState(format!(
                "acknowledgment {hash:016x} does not match the pending report"
            ))),
            (s, _) => Err(Error::InvalidState(format!("unexpected acknowledgment while {}", s.name()))),
        }
    }

    /// Drives straight to the dock after a low-battery transition.
    pub fn return_to_dock(&mut self) -> Result<Event> {
        match self.state {
            RobotState::Charging(TrainingProgress { docked: false, .. }) => {}
            _ => {
                return Err(Error::InvalidState(format!(
                    "robot {} is not returning to dock ({})",
                    self.id,
                    self.state.name()
                )))
            }
        }
        let dist = distance(self.position, self.dock);
        let secs = dist / self.kinematics.speed_mps;
        self.battery.drain(dist, secs);
        self.clock += secs;
        self.position = self.dock;
        self.state = RobotState::Charging(TrainingProgress {
            docked: true,
            trained: false,
        });
        Ok(Event::new(
            self.clock,
            self.id,
            EventKind::DockArrive,
            format!("level={:.4}", self.battery.level),
        ))
    }

    /// Charges while training on the session memory. The robot departs once
    /// training is done and the battery has reached [`LEAVE_BATTERY`].
    pub fn charging_cycle(&mut self, trainer: &mut dyn Trainer) -> Result<ChargeOutcome> {
        match self.state {
            RobotState::Charging(TrainingProgress { docked: true, trained: false }) => {}
            _ => {
                return Err(Error::InvalidState(format!(
                    "robot {} must be docked to train ({})",
                    self.id,
                    self.state.name()
                )))
            }
        }
        let arrived_at = self.clock;
        let (update, train_secs) = if self.memory.is_empty() {
            (
                LocalUpdate {
                    weights: self.model.clone(),
                    n_samples: 0,
                    robot_id: self.id,
                    session_index: self.memory.session_index,
                },
                0.0,
            )
        } else {
            trainer.train(self.id, &self.model, &self.memory)?
        };
        let charge_secs = ((LEAVE_BATTERY - self.battery.level).max(0.0)) / self.battery.charge_rate;
        let train_done_at = arrived_at + train_secs.max(0.0);
        let charged_at = arrived_at + charge_secs;
        let departed_at = train_done_at.max(charged_at);

        self.battery.level = LEAVE_BATTERY;
        self.clock = departed_at;
        self.archived_readings += self.memory.len();
        self.memory.readings.clear();
        self.completed_sessions += 1;
        self.in_session = false;
        self.state = RobotState::Charging(TrainingProgress {
            docked: true,
            trained: true,
        });

        let events = vec![Event::new(
            train_done_at,
            self.id,
            EventKind::TrainDone,
            format!("n={};session={}", update.n_samples, update.session_index),
        )];
        Ok(ChargeOutcome {
            update,
            arrived_at,
            train_done_at,
            charged_at,
            departed_at,
            events,
        })
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{plan_in_frame, GeoBoundingBox, Orientation};
    use crate::envsim::Hotspot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const THRESH: GasVector = GasVector::new(1000.0, 35.0, 1000.0);

    fn frame() -> LocalFrame {
        let b = GeoBoundingBox::new(GeoPoint::new(40.0, 10.0).unwrap(), GeoPoint::new(40.0002, 10.00026).unwrap())
            .unwrap();
        LocalFrame::from_box(&b)
    }

    fn robot(battery: Battery) -> Robot {
        let f = frame();
        let plan = plan_in_frame(f.width_m, f.length_m, 4.0, Orientation::Vertical, None).unwrap();
        Robot::new(
            7,
            f,
            plan,
            (0.0, 0.0),
            Kinematics::default(),
            THRESH,
            battery,
            ModelWeights::zeros(5, 7),
        )
        .unwrap()
    }

    fn clean() -> GasField {
        GasField::new(GasVector::new(420.0, 1.0, 2.0), vec![], GasVector::default()).unwrap()
    }

    fn reading(g: GasVector) -> SensorReading {
        SensorReading {
            position: GeoPoint::new(1.0, 2.0).unwrap(),
            local: (0.0, 0.0),
            gases: g,
            timestamp: 3.0,
        }
    }

    struct FixedTrainer(f64);

    impl Trainer for FixedTrainer {
        fn train(&mut self, robot_id: u32, global: &ModelWeights, memory: &SessionMemory) -> Result<(LocalUpdate, f64)> {
            Ok((
                LocalUpdate {
                    weights: global.clone(),
                    n_samples: memory.len(),
                    robot_id,
                    session_index: memory.session_index,
                },
                self.0,
            ))
        }
    }

    #[test]
    fn detect_cases() {
        assert!(detect(&reading(GasVector::new(420.0, 1.0, 2.0)), &THRESH).is_none());
        let r = detect(&reading(GasVector::new(1500.0, 1.0, 2.0)), &THRESH).unwrap();
        assert_eq!(
            r.exceeded,
            vec![Exceedance {
                gas: Gas::Co2,
                measured_ppm: 1500.0,
                threshold_ppm: 1000.0
            }]
        );
        let all = detect(&reading(GasVector::new(1500.0, 40.0, 2000.0)), &THRESH).unwrap();
        assert_eq!(all.exceeded.iter().map(|e| e.gas).collect::<Vec<_>>(), Gas::ALL.to_vec());
        // equality is not an exceedance
        assert!(detect(&reading(THRESH), &THRESH).is_none());
    }

    #[test]
    fn moves_along_strip() {
        let mut r = robot(Battery::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let start = r.position();
        let ev = r.step(&clean(), 3.0, &mut rng).unwrap();
        assert_eq!(r.position(), (start.0, start.1 + 3.0));
        assert_eq!(*r.state(), RobotState::Scanning);
        assert_eq!(ev.iter().filter(|e| e.kind == EventKind::ReadingTaken).count(), 3);
        assert_eq!(r.memory.len(), 3);
    }

    #[test]
    fn hotspot_triggers_critical() {
        let mut r = robot(Battery::default());
        let start = r.position();
        let field = GasField::new(
            GasVector::new(420.0, 1.0, 2.0),
            vec![Hotspot {
                center: (start.0, start.1 + 2.0),
                amplitude: GasVector::new(5000.0, 0.0, 0.0),
                radius_m: 1.0,
                onset_s: 0.0,
                label: ContaminationClass::Co2,
            }],
            GasVector::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ev = r.step(&field, 10.0, &mut rng).unwrap();
        assert!(ev.iter().any(|e| e.kind == EventKind::ThresholdExceeded));
        assert!(matches!(r.state(), RobotState::Critical(_)));
        let halted = r.position();
        assert!(r.step(&field, 1.0, &mut rng).is_err());
        assert_eq!(r.position(), halted);
        assert!(r.enter_critical(r.pending_report().unwrap().clone()).is_err());

        let (frame, hash) = r.outbound_frame().unwrap();
        let (again, hash2) = r.outbound_frame().unwrap();
        assert_eq!(frame, again);
        assert_eq!(hash, hash2);
        assert_eq!(r.transmission_attempts(), 2);
        assert!(r.acknowledge(hash ^ 1).is_err());
        r.acknowledge(hash).unwrap();
        assert_eq!(*r.state(), RobotState::Scanning);
        assert_eq!(r.position(), halted);
    }

    #[test]
    fn battery_low_crossing() {
        let mut r = robot(Battery {
            level: 0.21,
            drain_per_meter: 0.004,
            drain_per_second: 0.001,
            charge_rate: 0.01,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ev = r.step(&clean(), 2.0, &mut rng).unwrap();
        assert!(ev.iter().any(|e| e.kind == EventKind::BatteryLow));
        assert!(r.battery.level < LOW_BATTERY && r.battery.level >= 0.19 - 1e-12);
        assert!(matches!(r.state(), RobotState::Charging(_)));
        assert!(r.step(&clean(), 1.0, &mut rng).is_err());
    }

    fn drain_to_dock(r: &mut Robot) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        while matches!(r.state(), RobotState::Scanning) {
            r.step(&clean(), 1.0, &mut rng).unwrap();
        }
        r.return_to_dock().unwrap();
        assert_eq!(r.position(), r.dock);
    }

    #[test]
    fn waits_for_full_charge() {
        let mut r = robot(Battery {
            level: 0.3,
            ..Battery::default()
        });
        drain_to_dock(&mut r);
        let level = r.battery.level;
        let n = r.memory.len();
        let out = r.charging_cycle(&mut FixedTrainer(1.0)).unwrap();
        assert_eq!(out.update.n_samples, n);
        assert!(out.train_done_at < out.charged_at);
        assert_eq!(out.departed_at, out.charged_at);
        assert!((out.charged_at - out.arrived_at - (1.0 - level) / r.battery.charge_rate).abs() < 1e-9);
        assert_eq!(r.battery.level, 1.0);
        assert_eq!(r.completed_sessions(), 1);
        assert!(r.memory.is_empty());
    }

    #[test]
    fn keeps_training_after_full_charge() {
        let mut r = robot(Battery {
            level: 0.3,
            ..Battery::default()
        });
        drain_to_dock(&mut r);
        let out = r.charging_cycle(&mut FixedTrainer(1e6)).unwrap();
        assert!(out.charged_at < out.train_done_at);
        assert_eq!(out.departed_at, out.train_done_at);
    }

    #[test]
    fn empty_memory_yields_noop_update() {
        let mut r = robot(Battery::default());
        r.state = RobotState::Charging(TrainingProgress {
            docked: false,
            trained: false,
        });
        r.return_to_dock().unwrap();
        let out = r.charging_cycle(&mut FixedTrainer(5.0)).unwrap();
        assert_eq!(out.update.n_samples, 0);
        assert_eq!(out.update.weights, r.model);
    }

    #[test]
    fn session_bookkeeping() {
        let mut r = robot(Battery {
            level: 0.25,
            ..Battery::default()
        });
        r.begin_session(0.0, ModelWeights::zeros(5, 7), [1; 32]).unwrap();
        assert_eq!(r.session_index(), 1);
        assert!(r.begin_session(0.0, ModelWeights::zeros(5, 7), [1; 32]).is_err());
        drain_to_dock(&mut r);
        r.charging_cycle(&mut FixedTrainer(0.0)).unwrap();
        let mut next = ModelWeights::zeros(5, 7);
        next.version = 1;
        r.begin_session(r.clock(), next, [2; 32]).unwrap();
        assert_eq!(r.session_index(), 2);
        assert_eq!(r.model.version, 1);
    }

    #[test]
    fn traversal_reverses_at_plan_end() {
        let mut r = robot(Battery {
            level: 1.0,
            drain_per_meter: 1e-6,
            drain_per_second: 1e-6,
            charge_rate: 1.0,
        });
        let total = r.plan.path_length();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        r.step(&clean(), total + 2.0, &mut rng).unwrap();
        let last = *r.plan.waypoints.last().unwrap();
        let p = r.position();
        assert!((distance(p, last) - 2.0).abs() < 1e-6);
        assert!(r.frame.contains_local(p.0, p.1));
    }
}
