//! The `Delivery` aggregate and its order-status / trip-phase state machine.
//!
//! ```text
//! CREATED ─DISPATCH─▶ DISPATCHED ─ACCEPT─▶ ACCEPTED ─ARRIVED_AT_PICKUP─▶ ACCEPTED/ARRIVED_AT_PICKUP
//!                         │                                                   │ MARK_PICKED_UP
//!                         └─REJECT─▶ REJECTED                                 ▼
//! DELIVERED ◀─MARK_DELIVERED─ PICKED_UP/ARRIVED_AT_DROPOFF ◀─ ... ◀─MARK_ON_THE_WAY─ PICKED_UP
//! ```
//!
//! CANCEL is legal from DISPATCHED, ACCEPTED and PICKED_UP. REPORT_ISSUE is
//! legal from every non-terminal state and leaves the state unchanged.
//! DELIVERED, CANCELED and REJECTED are terminal.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, ErrorCode, Result};
use crate::geo::Place;
use crate::ids::{CourierId, DeliveryId, TaskId, ThreadId};
use crate::money::{Currency, Decimal};

/// How long after delivery an issue may still be reported.
pub const ISSUE_GRACE: Duration = Duration::hours(24);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeliveryStatus {
    Created,
    Dispatched,
    Accepted,
    Rejected,
    Canceled,
    PickedUp,
    Delivered,
}

impl DeliveryStatus {
    pub const ALL: [DeliveryStatus; 7] = [
        Self::Created,
        Self::Dispatched,
        Self::Accepted,
        Self::Rejected,
        Self::Canceled,
        Self::PickedUp,
        Self::Delivered,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Delivered | Self::Canceled | Self::Rejected)
    }

    /// Status that may carry a trip phase other than NONE.
    pub fn has_trip(self) -> bool {
        matches!(self, Self::Accepted | Self::PickedUp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Created => "CREATED",
            Self::Dispatched => "DISPATCHED",
            Self::Accepted => "ACCEPTED",
            Self::Rejected => "REJECTED",
            Self::Canceled => "CANCELED",
            Self::PickedUp => "PICKED_UP",
            Self::Delivered => "DELIVERED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TripPhase {
    #[default]
    None,
    ArrivedAtPickup,
    OnTheWay,
    ArrivedAtDropoff,
}

impl TripPhase {
    pub const ALL: [TripPhase; 4] = [Self::None, Self::ArrivedAtPickup, Self::OnTheWay, Self::ArrivedAtDropoff];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CourierAvailability {
    Online,
    #[default]
    Offline,
    /// Draining: finishes in-flight work but takes no new dispatches.
    LastCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Dispatch,
    Accept,
    Reject,
    Cancel,
    ArrivedAtPickup,
    MarkPickedUp,
    MarkOnTheWay,
    ArrivedAtDropoff,
    MarkDelivered,
    ReportIssue,
}

impl EventKind {
    pub const ALL: [EventKind; 10] = [
        Self::Dispatch,
        Self::Accept,
        Self::Reject,
        Self::Cancel,
        Self::ArrivedAtPickup,
        Self::MarkPickedUp,
        Self::MarkOnTheWay,
        Self::ArrivedAtDropoff,
        Self::MarkDelivered,
        Self::ReportIssue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dispatch => "DISPATCH",
            Self::Accept => "ACCEPT",
            Self::Reject => "REJECT",
            Self::Cancel => "CANCEL",
            Self::ArrivedAtPickup => "ARRIVED_AT_PICKUP",
            Self::MarkPickedUp => "MARK_PICKED_UP",
            Self::MarkOnTheWay => "MARK_ON_THE_WAY",
            Self::ArrivedAtDropoff => "ARRIVED_AT_DROPOFF",
            Self::MarkDelivered => "MARK_DELIVERED",
            Self::ReportIssue => "REPORT_ISSUE",
        }
    }

    /// Trailing path segment of the courier endpoint that emits this event.
    pub fn endpoint_action(self) -> &'static str {
        match self {
            Self::Dispatch => "mark-as-dispatched",
            Self::Accept => "accept",
            Self::Reject => "reject",
            Self::Cancel => "cancel",
            Self::ArrivedAtPickup => "arrived-at-pickup",
            Self::MarkPickedUp => "mark-as-picked-up",
            Self::MarkOnTheWay => "mark-as-on-the-way",
            Self::ArrivedAtDropoff => "arrived-at-dropoff",
            Self::MarkDelivered => "mark-as-delivered",
            Self::ReportIssue => "report-issue",
        }
    }
}

/// The normative edge table. `None` means the event is illegal in that state.
pub fn next_state(status: DeliveryStatus, phase: TripPhase, event: EventKind) -> Option<(DeliveryStatus, TripPhase)> {
    use DeliveryStatus as S;
    use EventKind as E;
    use TripPhase as P;
    let reachable = match status {
        S::Accepted => matches!(phase, P::None | P::ArrivedAtPickup),
        S::PickedUp => matches!(phase, P::None | P::OnTheWay | P::ArrivedAtDropoff),
        _ => phase == P::None,
    };
    if !reachable {
        return None;
    }
    match (status, phase, event) {
        (S::Created, P::None, E::Dispatch) => Some((S::Dispatched, P::None)),
        (S::Dispatched, P::None, E::Accept) => Some((S::Accepted, P::None)),
        (S::Dispatched, P::None, E::Reject) => Some((S::Rejected, P::None)),
        (S::Accepted, P::None, E::ArrivedAtPickup) => Some((S::Accepted, P::ArrivedAtPickup)),
        (S::Accepted, P::ArrivedAtPickup, E::MarkPickedUp) => Some((S::PickedUp, P::None)),
        (S::PickedUp, P::None, E::MarkOnTheWay) => Some((S::PickedUp, P::OnTheWay)),
        (S::PickedUp, P::OnTheWay, E::ArrivedAtDropoff) => Some((S::PickedUp, P::ArrivedAtDropoff)),
        (S::PickedUp, P::ArrivedAtDropoff, E::MarkDelivered) => Some((S::Delivered, P::None)),
        (S::Dispatched | S::Accepted | S::PickedUp, _, E::Cancel) => Some((S::Canceled, P::None)),
        (s, p, E::ReportIssue) if !s.is_terminal() => Some((s, p)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Actor {
    Courier(CourierId),
    Admin,
    System,
}

impl Actor {
    pub fn courier(id: impl Into<String>) -> Self {
        Actor::Courier(CourierId::new(id))
    }

    pub fn courier_id(&self) -> Option<&CourierId> {
        match self {
            Actor::Courier(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HistoryEntry {
    pub at: DateTime<Utc>,
    pub actor: Actor,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Issue {
    pub code: String,
    pub note: String,
    pub reported_at: DateTime<Utc>,
    pub reported_by: Actor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DistanceUnit {
    Miles,
    Km,
}

impl DistanceUnit {
    pub fn meters(self) -> f64 {
        match self {
            DistanceUnit::Miles => crate::geo::METERS_PER_MILE,
            DistanceUnit::Km => 1000.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceUnit::Miles => "MILES",
            DistanceUnit::Km => "KM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Delivery {
    pub delivery_id: DeliveryId,
    pub task_id: TaskId,
    /// 1 for the first dispatch attempt of a task, incremented on re-dispatch.
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote_thread_id: Option<ThreadId>,
    pub instance_domain: String,
    pub courier_id: Option<CourierId>,
    pub status: DeliveryStatus,
    pub trip_phase: TripPhase,
    pub pickup_location: Place,
    pub dropoff_location: Place,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_weight_lbs: Option<f64>,
    #[serde(default)]
    pub merchant_tags: Vec<String>,
    pub payout: Decimal,
    pub currency: Currency,
    pub distance: Decimal,
    pub distance_unit: DistanceUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pickup_deadline_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropoff_deadline_at: Option<DateTime<Utc>>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub issue: Option<Issue>,
    pub history: Vec<HistoryEntry>,
    /// Couriers that rejected an earlier attempt of the same task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_couriers: Vec<CourierId>,
}

/// An event plus whatever the event carries.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEvent {
    pub kind: EventKind,
    pub actor: Actor,
    /// DISPATCH only: the courier receiving the delivery.
    pub courier_id: Option<CourierId>,
    /// REPORT_ISSUE only: `(code, note)`.
    pub issue: Option<(String, String)>,
    /// Free-form context recorded in the history entry.
    pub detail: Value,
}

impl TransitionEvent {
    pub fn new(kind: EventKind, actor: Actor) -> Self {
        Self {
            kind,
            actor,
            courier_id: None,
            issue: None,
            detail: Value::Null,
        }
    }

    pub fn dispatch(actor: Actor, courier: CourierId) -> Self {
        Self {
            courier_id: Some(courier),
            ..Self::new(EventKind::Dispatch, actor)
        }
    }

    pub fn report_issue(actor: Actor, code: impl Into<String>, note: impl Into<String>) -> Self {
        Self {
            issue: Some((code.into(), note.into())),
            ..Self::new(EventKind::ReportIssue, actor)
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }
}

fn illegal(d: &Delivery, kind: EventKind) -> Error {
    Error::new(
        ErrorCode::IllegalTransition,
        format!(
            "{} cannot {} from {}/{}",
            d.delivery_id,
            kind.as_str(),
            d.status.as_str(),
            serde_json::to_value(d.trip_phase).unwrap().as_str().unwrap_or_default()
        ),
    )
    .with_details(serde_json::json!({
        "status": d.status,
        "tripPhase": d.trip_phase,
        "event": kind,
    }))
}

fn forbidden(actor: &Actor, kind: EventKind) -> Error {
    Error::new(
        ErrorCode::ForbiddenActor,
        format!("{actor:?} may not perform {}", kind.as_str()),
    )
}

/// Folds a history from CREATED/NONE, honouring the post-delivery issue
/// grace window. Returns the first offending entry index on failure.
pub fn replay(history: &[HistoryEntry]) -> std::result::Result<(DeliveryStatus, TripPhase), usize> {
    let mut state = (DeliveryStatus::Created, TripPhase::None);
    let mut delivered_at = None;
    for (i, entry) in history.iter().enumerate() {
        if entry.event == EventKind::ReportIssue && state.0 == DeliveryStatus::Delivered {
            match delivered_at {
                Some(t) if entry.at - t <= ISSUE_GRACE => continue,
                _ => return Err(i),
            }
        }
        state = next_state(state.0, state.1, entry.event).ok_or(i)?;
        if state.0 == DeliveryStatus::Delivered && delivered_at.is_none() {
            delivered_at = Some(entry.at);
        }
    }
    Ok(state)
}

impl Delivery {
    /// Timestamp of the MARK_DELIVERED entry, if any.
    pub fn delivered_at(&self) -> Option<DateTime<Utc>> {
        self.history
            .iter()
            .find(|h| h.event == EventKind::MarkDelivered)
            .map(|h| h.at)
    }

    fn is_assigned(&self, courier: &CourierId) -> bool {
        self.courier_id.as_ref() == Some(courier)
    }

    fn authorize(&self, ev: &TransitionEvent) -> Result<()> {
        use EventKind as E;
        let ok = match (&ev.actor, ev.kind) {
            (Actor::Admin | Actor::System, E::Dispatch) => ev.courier_id.is_some(),
            (Actor::Courier(c), E::Dispatch) => ev.courier_id.as_ref().is_none_or(|x| x == c),
            (Actor::Admin | Actor::System, E::Cancel) => true,
            (Actor::Courier(c), E::Cancel) => self.is_assigned(c) && self.status == DeliveryStatus::Accepted,
            (Actor::Admin | Actor::System, E::ReportIssue) => true,
            (Actor::Courier(c), _) => self.is_assigned(c),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(forbidden(&ev.actor, ev.kind))
        }
    }

    /// Applies one event, returning the successor delivery.
    pub fn transition(&self, ev: &TransitionEvent, at: DateTime<Utc>) -> Result<Delivery> {
        let (status, phase) = next_state(self.status, self.trip_phase, ev.kind).ok_or_else(|| illegal(self, ev.kind))?;
        self.authorize(ev)?;
        let mut next = self.clone();
        let at = at.max(self.updated_at);
        match ev.kind {
            EventKind::Dispatch => {
                let courier = ev
                    .courier_id
                    .clone()
                    .or_else(|| ev.actor.courier_id().cloned())
                    .ok_or_else(|| Error::validation("DISPATCH needs a courier"))?;
                next.courier_id = Some(courier);
            }
            EventKind::ReportIssue => {
                let (code, note) = ev
                    .issue
                    .clone()
                    .ok_or_else(|| Error::validation("REPORT_ISSUE needs a code and note"))?;
                next.issue = Some(Issue {
                    code,
                    note,
                    reported_at: at,
                    reported_by: ev.actor.clone(),
                });
            }
            _ => {}
        }
        next.status = status;
        next.trip_phase = phase;
        next.updated_at = at;
        next.history.push(HistoryEntry {
            at,
            actor: ev.actor.clone(),
            event: ev.kind,
            detail: ev.detail.clone(),
        });
        next.check_invariants()?;
        Ok(next)
    }

    /// Records an issue without changing status. Allowed on non-terminal
    /// deliveries and for 24 hours after delivery.
    pub fn report_issue(&self, actor: &Actor, code: &str, note: &str, at: DateTime<Utc>) -> Result<Delivery> {
        if code.trim().is_empty() {
            return Err(Error::field("code", "must not be empty"));
        }
        let in_grace = self.status == DeliveryStatus::Delivered
            && self.delivered_at().is_some_and(|t| at.max(self.updated_at) - t <= ISSUE_GRACE);
        if self.status.is_terminal() && !in_grace {
            return Err(Error::new(
                ErrorCode::IssueWindowClosed,
                format!("{} is {} and no longer accepts issues", self.delivery_id, self.status.as_str()),
            ));
        }
        let ev = TransitionEvent::report_issue(actor.clone(), code, note);
        if !in_grace {
            return self.transition(&ev, at);
        }
        self.authorize(&ev)?;
        let at = at.max(self.updated_at);
        let mut next = self.clone();
        next.issue = Some(Issue {
            code: code.to_owned(),
            note: note.to_owned(),
            reported_at: at,
            reported_by: actor.clone(),
        });
        next.updated_at = at;
        next.history.push(HistoryEntry {
            at,
            actor: actor.clone(),
            event: EventKind::ReportIssue,
            detail: Value::Null,
        });
        next.check_invariants()?;
        Ok(next)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let fail = |why: String| Err(Error::internal(format!("delivery {} invariant: {why}", self.delivery_id)));
        if matches!(
            self.status,
            DeliveryStatus::Accepted | DeliveryStatus::PickedUp | DeliveryStatus::Delivered
        ) && self.courier_id.is_none()
        {
            return fail("assigned status without courier".into());
        }
        if !self.status.has_trip() && self.trip_phase != TripPhase::None {
            return fail("trip phase outside an active trip".into());
        }
        if self.updated_at < self.created_at {
            return fail("updatedAt precedes createdAt".into());
        }
        if self.history.windows(2).any(|w| w[1].at < w[0].at) {
            return fail("history timestamps decrease".into());
        }
        match replay(&self.history) {
            Ok(state) if state == (self.status, self.trip_phase) => Ok(()),
            Ok(state) => fail(format!("history replays to {state:?}")),
            Err(i) => fail(format!("history entry {i} is not a legal edge")),
        }
    }
}

/// Courier-facing grouping of deliveries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Bucket {
    New,
    InProgress,
    Done,
}

impl Bucket {
    pub fn of(status: DeliveryStatus) -> Option<Bucket> {
        match status {
            DeliveryStatus::Created => None,
            DeliveryStatus::Dispatched => Some(Bucket::New),
            DeliveryStatus::Accepted | DeliveryStatus::PickedUp => Some(Bucket::InProgress),
            DeliveryStatus::Delivered | DeliveryStatus::Canceled | DeliveryStatus::Rejected => Some(Bucket::Done),
        }
    }
}

/// Deliveries of one courier in one bucket, newest update first.
pub fn bucket_deliveries<'a>(
    all: impl IntoIterator<Item = &'a Delivery>,
    courier: &CourierId,
    bucket: Bucket,
) -> Vec<Delivery> {
    let mut out: Vec<Delivery> = all
        .into_iter()
        .filter(|d| d.courier_id.as_ref() == Some(courier) && Bucket::of(d.status) == Some(bucket))
        .cloned()
        .collect();
    out.sort_by(|a, b| b.updated_at.cmp(&a.updated_at).then_with(|| a.delivery_id.cmp(&b.delivery_id)));
    out
}
