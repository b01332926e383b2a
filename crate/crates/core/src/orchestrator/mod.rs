//! Session loop tying robots, local servers and the global server together.
//!
//! Every session is a synchronous federated round: all robots download the
//! current global model, scan until their battery runs low, dock, train, and
//! upload under a fresh QKD key. The global server then averages whatever
//! arrived and the next session begins. One global server spans all plants.

pub mod config;
pub mod report;
pub mod seeds;
pub mod server;

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::coverage::{plan_lawnmower, LocalFrame};
use crate::envsim::{generate_scenario, ContaminationClass, GasField, GasVector};
use crate::error::{Error, Result};
use crate::events::{sort_events, Event, EventKind};
use crate::fedlearn::{
    evaluate, fedavg, global_loss, local_train, predict, Dataset, FeatureMap, LocalUpdate, ModelWeights, Sample,
    SessionMetrics,
};
use crate::robot::{Robot, RobotState, SessionMemory, Trainer};

pub use config::{KeyMode, LearningConfig, NetworkConfig, PlantConfig, QkdConfig, RobotConfig, SimConfig, ThresholdMode};
pub use report::{emit_report, parse_metrics_csv, preflight_output_dir, render_table, MetricsRow};
pub use seeds::Purpose;
pub use server::{global_exchange, LocalServer, LocalServerLog, Response, TransferOutcome};

/// Upper bound on simulated seconds per robot session before the run is
/// declared stuck.
const MAX_SESSION_SECONDS: f64 = 1.0e7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UploadRecord {
    pub plant_id: u32,
    pub robot_id: u32,
    pub n_samples: usize,
    pub bytes: usize,
    pub attempts: Vec<server::AttemptRecord>,
    pub delivered: bool,
    pub uploaded_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub session_index: u32,
    pub uploads: Vec<UploadRecord>,
    /// False when no update arrived and the previous weights were carried over.
    pub aggregated: bool,
    pub model_version: u64,
    pub plant_metrics: Vec<MetricsRow>,
    /// Global loss on this session's training data before and after aggregation.
    pub loss_before: f64,
    pub loss_after: f64,
    pub reports_sent: usize,
    #[serde(skip)]
    pub accepted_updates: Vec<LocalUpdate>,
    #[serde(skip)]
    pub global_weights: ModelWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantOutput {
    pub plant_id: u32,
    pub events: Vec<Event>,
    pub server_log: LocalServerLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub rounds: Vec<RoundRecord>,
    pub plants: Vec<PlantOutput>,
    pub final_model: ModelWeights,
}

impl SimulationReport {
    pub fn metrics_for(&self, plant_id: u32) -> Vec<MetricsRow> {
        self.rounds
            .iter()
            .flat_map(|r| r.plant_metrics.iter().filter(|m| m.plant_id == plant_id).cloned())
            .collect()
    }

    /// `(aborted, total)` QKD attempts across the run.
    pub fn gate_counts(&self) -> (usize, usize) {
        let mut aborted = 0;
        let mut total = 0;
        for r in &self.rounds {
            for u in &r.uploads {
                total += u.attempts.len();
                aborted += u
                    .attempts
                    .iter()
                    .filter(|a| a.decision == crate::qkd::GateDecision::Abort)
                    .count();
            }
        }
        (aborted, total)
    }
}

/// Converts session memory into labelled samples, splits it, and trains.
struct SessionTrainer<'a> {
    features: FeatureMap,
    learning: &'a LearningConfig,
    master_seed: u64,
    plant_id: u32,
    session: u32,
    train_sets: BTreeMap<u32, Dataset>,
    test_sets: BTreeMap<u32, Dataset>,
}

impl SessionTrainer<'_> {
    fn dataset(&self, memory: &SessionMemory) -> Dataset {
        Dataset::new(
            memory
                .readings
                .iter()
                .map(|(reading, label)| Sample {
                    features: self.features.features(&reading.gases),
                    label: label.unwrap_or(ContaminationClass::None).index(),
                })
                .collect(),
        )
    }
}

impl Trainer for SessionTrainer<'_> {
    fn train(&mut self, robot_id: u32, global: &ModelWeights, memory: &SessionMemory) -> Result<(LocalUpdate, f64)> {
        let mut rng = seeds::stream(self.master_seed, self.plant_id, robot_id, self.session, Purpose::Training, 0);
        let (train, test) = self.dataset(memory).split(self.learning.train_fraction, &mut rng);
        let update = local_train(global, &train, &self.learning.train, robot_id, memory.session_index, &mut rng)?;
        let secs = self.learning.seconds_per_sample * train.len() as f64 * self.learning.train.epochs as f64;
        self.train_sets.insert(robot_id, train);
        self.test_sets.insert(robot_id, test);
        Ok((update, secs))
    }
}

/// Experimental collective thresholds: for each gas, the concentration
/// (others at background) where the global model's probability of any
/// contamination class first reaches 1/2. Falls back to `fallback` when the
/// model never crosses within the search range.
pub fn collective_thresholds(model: &ModelWeights, features: &FeatureMap, fallback: &GasVector) -> GasVector {
    let bg = features.background.to_array();
    let scale = features.scale.to_array();
    let fb = fallback.to_array();
    let contaminated = |g: usize, c: f64| -> f64 {
        let mut v = bg;
        v[g] = c;
        predict(model, &features.features(&GasVector::from_array(v)))
            .map(|p| 1.0 - p[ContaminationClass::None.index()])
            .unwrap_or(0.0)
    };
    let mut out = [0.0; 3];
    for g in 0..3 {
        let (mut lo, mut hi) = (bg[g], bg[g] + 1000.0 * scale[g]);
        out[g] = if contaminated(g, hi) < 0.5 || contaminated(g, lo) >= 0.5 {
            fb[g]
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if contaminated(g, mid) >= 0.5 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
    }
    GasVector::from_array(out)
}

struct RobotSlot {
    plant_id: u32,
    robot: Robot,
    field: GasField,
}

fn invariant(msg: String, recent: &[Event]) -> Error {
    let tail: Vec<String> = recent.iter().rev().take(20).rev().map(Event::log_line).collect();
    Error::Invariant(format!("{msg}\nrecent events:\n{}", tail.join("\n")))
}

fn check_robot(slot: &RobotSlot, events: &[Event]) -> Result<()> {
    let r = &slot.robot;
    let (x, y) = r.position();
    let eps = 1e-9;
    if x < -eps || y < -eps || x > r.frame.width_m + eps || y > r.frame.length_m + eps {
        return Err(invariant(format!("robot {} left its box at ({x}, {y})", r.id), events));
    }
    if !(0.0..=1.0).contains(&r.battery.level) {
        return Err(invariant(format!("robot {} battery {} out of range", r.id, r.battery.level), events));
    }
    Ok(())
}

/// Runs one robot from session start through docking and training.
#[allow(clippy::too_many_arguments)]
fn run_robot_session(
    slot: &mut RobotSlot,
    cfg: &SimConfig,
    session: u32,
    start: f64,
    model: &ModelWeights,
    server: &mut LocalServer,
    trainer: &mut SessionTrainer<'_>,
    events: &mut Vec<Event>,
) -> Result<(LocalUpdate, f64, usize)> {
    let plant = slot.plant_id;
    let id = slot.robot.id;
    let mut key_rng = seeds::stream(cfg.seed, plant, id, session, Purpose::ChannelKey, 0);
    let mut channel_key = [0u8; 32];
    key_rng.fill(&mut channel_key);
    let mut sense_rng = seeds::stream(cfg.seed, plant, id, session, Purpose::Sensing, 0);
    let mut fault_rng = seeds::stream(cfg.seed, plant, id, session, Purpose::Faults, 0);

    if cfg.threshold_mode == ThresholdMode::Collective {
        slot.robot.thresholds = collective_thresholds(model, &cfg.features, &cfg.thresholds);
    }
    events.extend(slot.robot.begin_session(start, model.clone(), channel_key)?);

    let dt = 1.0 / slot.robot.kinematics.cadence_hz;
    let net = cfg.network;
    let mut reports = 0usize;
    loop {
        if slot.robot.clock() - start > MAX_SESSION_SECONDS {
            return Err(invariant(format!("robot {id} session {session} never ran out of battery"), events));
        }
        match slot.robot.state() {
            RobotState::Scanning => {
                let field = &slot.field;
                events.extend(slot.robot.step(field, dt, &mut sense_rng)?);
                check_robot(slot, events)?;
            }
            RobotState::Critical(_) => {
                let (frame, hash) = slot.robot.outbound_frame()?;
                events.push(Event::new(
                    slot.robot.clock(),
                    id,
                    EventKind::ReportSent,
                    format!("hash={hash:016x};attempt={}", slot.robot.transmission_attempts()),
                ));
                if slot.robot.transmission_attempts() == 1 {
                    reports += 1;
                }
                slot.robot.idle(net.latency_s);
                let response = server.receive(&frame.to_bytes(), id, slot.robot.channel_key(), slot.robot.clock());
                let lost = net.ack_loss_prob > 0.0 && fault_rng.random_bool(net.ack_loss_prob);
                match response {
                    Response::Ack { report_hash, .. } if !lost => {
                        slot.robot.idle(net.latency_s);
                        slot.robot.acknowledge(report_hash)?;
                        events.push(Event::new(
                            slot.robot.clock(),
                            id,
                            EventKind::AckReceived,
                            format!("hash={report_hash:016x}"),
                        ));
                    }
                    _ => slot.robot.idle(net.ack_timeout_s - net.latency_s),
                }
                if slot.robot.transmission_attempts() > 10_000 {
                    return Err(invariant(format!("robot {id} report {hash:016x} never acknowledged"), events));
                }
            }
            RobotState::Charging(_) => break,
        }
    }
    events.push(slot.robot.return_to_dock()?);
    let outcome = slot.robot.charging_cycle(trainer)?;
    events.extend(outcome.events);
    Ok((outcome.update, outcome.departed_at, reports))
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let classes = ContaminationClass::COUNT;
    let mut global = ModelWeights::zeros(classes, FeatureMap::DIM);

    let mut slots = Vec::new();
    for p in &cfg.plants {
        for rc in &p.robots {
            let bbox = rc.bbox()?;
            let frame = LocalFrame::from_box(&bbox);
            let plan = plan_lawnmower(&bbox, rc.strip_width_m, rc.orientation, rc.turn_distance_m)?;
            let mut rng = seeds::stream(cfg.seed, p.plant_id, rc.robot_id, 0, Purpose::Scenario, 0);
            let field = generate_scenario(&p.scenario, frame.width_m, frame.length_m, &mut rng)?;
            let robot = Robot::new(
                rc.robot_id,
                frame,
                plan,
                (rc.dock_m[0], rc.dock_m[1]),
                rc.kinematics,
                cfg.thresholds,
                rc.battery,
                global.clone(),
            )?;
            slots.push(RobotSlot {
                plant_id: p.plant_id,
                robot,
                field,
            });
        }
    }
    slots.sort_by_key(|s| s.robot.id);

    let mut servers: BTreeMap<u32, LocalServer> = cfg.plants.iter().map(|p| (p.plant_id, LocalServer::new())).collect();
    let mut plant_events: BTreeMap<u32, Vec<Event>> = cfg.plants.iter().map(|p| (p.plant_id, Vec::new())).collect();
    let mut rounds = Vec::with_capacity(cfg.sessions as usize);
    let mut clock = 0.0f64;

    for session in 1..=cfg.sessions {
        let start = clock;
        let mut updates = Vec::new();
        let mut train_sets: BTreeMap<u32, Dataset> = BTreeMap::new();
        let mut test_by_plant: BTreeMap<u32, Dataset> = BTreeMap::new();
        let mut reports_sent = 0;

        for slot in slots.iter_mut() {
            let plant = slot.plant_id;
            let mut trainer = SessionTrainer {
                features: cfg.features,
                learning: &cfg.learning,
                master_seed: cfg.seed,
                plant_id: plant,
                session,
                train_sets: BTreeMap::new(),
                test_sets: BTreeMap::new(),
            };
            let events = plant_events.get_mut(&plant).expect("plant registered");
            let server = servers.get_mut(&plant).expect("plant registered");
            let (update, departed, reports) =
                run_robot_session(slot, cfg, session, start, &global, server, &mut trainer, events)?;
            if !matches!(slot.robot.state(), RobotState::Charging(_)) {
                return Err(invariant(format!("robot {} ended session outside the dock", slot.robot.id), events));
            }
            reports_sent += reports;
            train_sets.extend(trainer.train_sets);
            for (_, test) in trainer.test_sets {
                test_by_plant.entry(plant).or_default().rows.extend(test.rows);
            }
            updates.push((plant, update, departed));
        }

        let mut uploads = Vec::new();
        let mut accepted = Vec::new();
        let mut round_end = start;
        for (plant, update, departed) in &updates {
            let mut rng = seeds::stream(cfg.seed, *plant, update.robot_id, session, Purpose::Qkd, 0);
            let outcome = global_exchange(update, &cfg.qkd, &mut rng)?;
            let uploaded_at = departed + cfg.qkd.latency_s * outcome.attempts().len() as f64;
            round_end = round_end.max(uploaded_at);
            let delivered = match &outcome {
                TransferOutcome::Delivered { weights, .. } => {
                    let same = weights.values.len() == update.weights.values.len()
                        && weights
                            .values
                            .iter()
                            .zip(&update.weights.values)
                            .all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        let events = &plant_events[plant];
                        return Err(invariant(
                            format!("robot {} weights corrupted in transfer", update.robot_id),
                            events,
                        ));
                    }
                    accepted.push(LocalUpdate {
                        weights: weights.clone(),
                        ..update.clone()
                    });
                    true
                }
                TransferOutcome::Dropped { .. } => false,
            };
            let last_qber = outcome.attempts().last().map_or(f64::NAN, |a| a.qber);
            plant_events.get_mut(plant).expect("plant registered").push(Event::new(
                uploaded_at,
                update.robot_id,
                EventKind::WeightsUploaded,
                format!(
                    "delivered={delivered};attempts={};qber={last_qber:.4};n={}",
                    outcome.attempts().len(),
                    update.n_samples
                ),
            ));
            uploads.push(UploadRecord {
                plant_id: *plant,
                robot_id: update.robot_id,
                n_samples: update.n_samples,
                bytes: match &outcome {
                    TransferOutcome::Delivered { bytes, .. } => *bytes,
                    TransferOutcome::Dropped { .. } => 0,
                },
                attempts: outcome.attempts().to_vec(),
                delivered,
            uploaded_at,
            });
        }

        let all_train: Vec<Dataset> = train_sets.into_values().collect();
        let loss_before = global_loss(&global, &all_train).unwrap_or(f64::NAN);
        let previous_version = global.version;
        let (next, aggregated) = match fedavg(&accepted) {
            Ok(w) => (w, true),
            Err(Error::NoProgress) => (global.clone(), false),
            Err(e) => return Err(e),
        };
        global = ModelWeights {
            version: previous_version + 1,
            ..next
        };
        let loss_after = global_loss(&global, &all_train).unwrap_or(f64::NAN);

        let mut plant_metrics = Vec::new();
        for p in &cfg.plants {
            let test = test_by_plant.remove(&p.plant_id).unwrap_or_default();
            plant_metrics.push(MetricsRow::from_evaluation(p.plant_id, session, evaluate(&global, &test)));
        }

        rounds.push(RoundRecord {
            session_index: session,
            uploads,
            aggregated,
            model_version: global.version,
            plant_metrics,
            loss_before,
            loss_after,
            reports_sent,
            accepted_updates: accepted,
            global_weights: global.clone(),
        });
        clock = round_end;
    }

    let mut plants = Vec::new();
    for p in &cfg.plants {
        let mut events = plant_events.remove(&p.plant_id).unwrap_or_default();
        sort_events(&mut events);
        plants.push(PlantOutput {
            plant_id: p.plant_id,
            events,
            server_log: servers.remove(&p.plant_id).map(|s| s.log).unwrap_or_default(),
        });
    }

    Ok(SimulationReport {
        config: cfg.clone(),
        rounds,
        plants,
        final_model: global,
    })
}

impl MetricsRow {
    fn from_evaluation(plant_id: u32, session: u32, eval: Result<SessionMetrics>) -> Self {
        match eval {
            Ok(m) => MetricsRow {
                plant_id,
                session,
                accuracy: m.accuracy,
                f1: m.f1,
                precision: m.precision,
                recall: m.recall,
                roc_auc: Some(m.roc_auc),
            },
            Err(Error::RocAucUndefined(m)) => MetricsRow {
                plant_id,
                session,
                accuracy: m.accuracy,
                f1: m.f1,
                precision: m.precision,
                recall: m.recall,
                roc_auc: None,
            },
            Err(_) => MetricsRow {
                plant_id,
                session,
                accuracy: f64::NAN,
                f1: f64::NAN,
                precision: f64::NAN,
                recall: f64::NAN,
                roc_auc: None,
            },
        }
    }
}
