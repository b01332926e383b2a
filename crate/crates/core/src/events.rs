use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Lifecycle event kinds. Declaration order is the tiebreak rank when two
/// events share a timestamp and robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    GlobalModelInstalled,
    ReadingTaken,
    ThresholdExceeded,
    ReportSent,
    AckReceived,
    BatteryLow,
    DockArrive,
    TrainDone,
    WeightsUploaded,
}

impl EventKind {
    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::GlobalModelInstalled => "GlobalModelInstalled",
            EventKind::ReadingTaken => "ReadingTaken",
            EventKind::ThresholdExceeded => "ThresholdExceeded",
            EventKind::ReportSent => "ReportSent",
            EventKind::AckReceived => "AckReceived",
            EventKind::BatteryLow => "BatteryLow",
            EventKind::DockArrive => "DockArrive",
            EventKind::TrainDone => "TrainDone",
            EventKind::WeightsUploaded => "WeightsUploaded",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub robot_id: u32,
    pub kind: EventKind,
    pub detail: String,
}

impl Event {
    pub fn new(time: f64, robot_id: u32, kind: EventKind, detail: impl Into<String>) -> Self {
        Self {
            time,
            robot_id,
            kind,
            detail: detail.into(),
        }
    }

    /// `t,robot_id,event_kind,detail` with millisecond time resolution.
    pub fn log_line(&self) -> String {
        format!("{:.3},{},{},{}", self.time, self.robot_id, self.kind, self.detail)
    }

    /// Total order: time, then robot id, then kind rank.
    pub fn order(&self, other: &Event) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.robot_id.cmp(&other.robot_id))
            .then(self.kind.rank().cmp(&other.kind.rank()))
    }
}

/// Stable sort into the log's total order.
pub fn sort_events(events: &mut [Event]) {
    events.sort_by(Event::order);
}
