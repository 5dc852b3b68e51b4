//! The simulator's event log: one JSON object per line.

use chrono::{DateTime, Utc};
use opencourier_core::delivery::{Actor, DeliveryStatus, EventKind, TripPhase};
use opencourier_core::disclosure::Metrics;
use opencourier_core::ids::{CourierId, DeliveryId, GroupId, TaskId, ThreadId};
use opencourier_core::instance::TaskState;
use opencourier_core::money::{Currency, Decimal};
use opencourier_core::quoting::{Party, RoundKind, ThreadState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub status: DeliveryStatus,
    pub phase: TripPhase,
}

impl State {
    pub const CREATED: State = State {
        status: DeliveryStatus::Created,
        phase: TripPhase::None,
    };
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.status.as_str(), serde_plain(&self.phase))
    }
}

fn serde_plain<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceSummary {
    pub instance: String,
    pub finalized_threads: u64,
    pub tasks: u64,
    pub delivered: u64,
    pub canceled: u64,
    pub in_flight: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", rename_all_fields = "camelCase")]
pub enum Event {
    ScenarioStart {
        seed: u64,
        max_rounds: usize,
        instances: Vec<String>,
    },
    ThreadOpened {
        thread_id: ThreadId,
        instance: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group_id: Option<GroupId>,
        quote: Decimal,
        range_from: Decimal,
        range_to: Decimal,
        fee_percentage: Decimal,
        currency: Currency,
    },
    Round {
        thread_id: ThreadId,
        index: usize,
        by: Party,
        kind: RoundKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amount: Option<Decimal>,
    },
    ThreadState {
        thread_id: ThreadId,
        state: ThreadState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agreed_amount: Option<Decimal>,
    },
    ThreadFinalized {
        thread_id: ThreadId,
        instance: String,
        delivery_id: DeliveryId,
        agreed_amount: Decimal,
        payout: Decimal,
    },
    DeliveryCreated {
        instance: String,
        delivery_id: DeliveryId,
        task_id: TaskId,
        attempt: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thread_id: Option<ThreadId>,
    },
    Transition {
        instance: String,
        delivery_id: DeliveryId,
        event: EventKind,
        actor: Actor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        courier_id: Option<CourierId>,
        from: State,
        to: State,
    },
    TaskClosed {
        instance: String,
        task_id: TaskId,
        state: TaskState,
        attempts: u32,
    },
    CourierMoved {
        instance: String,
        courier_id: CourierId,
        lon: f64,
        lat: f64,
    },
    ActionFailed {
        action: String,
        code: String,
        message: String,
    },
    ScenarioEnd {
        summary: Vec<InstanceSummary>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LogLine {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: Event,
}

impl LogLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log lines always serialize")
    }
}

/// Renders lines as JSON-lines text.
pub fn render(lines: &[LogLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.to_json());
        out.push('\n');
    }
    out
}
