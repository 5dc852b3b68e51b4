//! Courier selection for new deliveries.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::delivery::{Actor, CourierAvailability, Delivery, DeliveryStatus, TransitionEvent, TripPhase};
use crate::error::{Error, ErrorCode, Result};
use crate::geo::{haversine_m, LonLat};
use crate::ids::{CourierId, DeliveryId};
use crate::preferences::{matches, CourierPreferences, MatchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PositionFix {
    pub lon: f64,
    pub lat: f64,
    pub at: DateTime<Utc>,
}

impl PositionFix {
    pub fn point(&self) -> LonLat {
        LonLat::new(self.lon, self.lat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CourierState {
    pub courier_id: CourierId,
    pub availability: CourierAvailability,
    pub position: Option<PositionFix>,
    pub active_delivery_count: u32,
    pub enrolled_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prefs: Option<CourierPreferences>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyKind {
    Nearest,
    MostSenior,
    Specified {
        #[serde(rename = "courierId")]
        courier_id: CourierId,
    },
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Nearest => "NEAREST",
            PolicyKind::MostSenior => "MOST_SENIOR",
            PolicyKind::Specified { .. } => "SPECIFIED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TieBreak {
    #[default]
    CourierIdAsc,
}

fn yes() -> bool {
    true
}
fn default_staleness() -> u64 {
    120
}
fn default_max_active() -> u32 {
    3
}
fn default_max_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssignmentPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default = "yes")]
    pub respect_preferences: bool,
    #[serde(default = "default_staleness")]
    pub staleness_secs: u64,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Upper bound on a courier's concurrently active deliveries.
    #[serde(default = "default_max_active")]
    pub max_active: u32,
    /// Attempts per task before the task is canceled.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
}

impl Default for AssignmentPolicy {
    fn default() -> Self {
        Self::new(PolicyKind::Nearest)
    }
}

impl AssignmentPolicy {
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            respect_preferences: true,
            staleness_secs: default_staleness(),
            tie_break: TieBreak::CourierIdAsc,
            max_active: default_max_active(),
            max_attempts: default_max_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::field("maxAttempts", "must be >= 1"));
        }
        if self.max_active == 0 {
            return Err(Error::field("maxActive", "must be >= 1"));
        }
        if let PolicyKind::Specified { courier_id } = &self.kind {
            if courier_id.as_str().is_empty() {
                return Err(Error::field("courierId", "must not be empty"));
            }
        }
        Ok(())
    }
}

pub fn is_fresh(c: &CourierState, at: DateTime<Utc>, staleness_secs: u64) -> bool {
    c.position
        .is_some_and(|p| at - p.at <= Duration::seconds(staleness_secs as i64))
}

/// Couriers able to take `d` at `at`, in input order.
pub fn eligible_couriers<'a>(
    d: &Delivery,
    fleet: &'a [CourierState],
    policy: &AssignmentPolicy,
    cfg: &MatchConfig,
    at: DateTime<Utc>,
) -> Vec<&'a CourierState> {
    fleet
        .iter()
        .filter(|c| c.availability == CourierAvailability::Online)
        .filter(|c| is_fresh(c, at, policy.staleness_secs))
        .filter(|c| c.active_delivery_count < policy.max_active)
        .filter(|c| !d.excluded_couriers.contains(&c.courier_id))
        .filter(|c| {
            !policy.respect_preferences
                || c.prefs.as_ref().is_none_or(|p| matches(p, d, at, cfg).eligible)
        })
        .collect()
}

/// Picks a courier from `candidates` without touching the delivery.
pub fn choose<'a>(d: &Delivery, candidates: &[&'a CourierState], kind: &PolicyKind) -> Option<&'a CourierState> {
    let pickup = d.pickup_location.point();
    match kind {
        PolicyKind::Nearest => candidates.iter().copied().min_by(|a, b| {
            let da = haversine_m(a.position.unwrap().point(), pickup);
            let db = haversine_m(b.position.unwrap().point(), pickup);
            da.total_cmp(&db).then_with(|| a.courier_id.cmp(&b.courier_id))
        }),
        PolicyKind::MostSenior => candidates
            .iter()
            .copied()
            .min_by(|a, b| a.enrolled_at.cmp(&b.enrolled_at).then_with(|| a.courier_id.cmp(&b.courier_id))),
        PolicyKind::Specified { courier_id } => candidates.iter().copied().find(|c| &c.courier_id == courier_id),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub courier_id: CourierId,
    pub delivery: Delivery,
}

/// Dispatches a CREATED delivery according to `policy`.
pub fn assign(
    d: &Delivery,
    fleet: &[CourierState],
    policy: &AssignmentPolicy,
    cfg: &MatchConfig,
    at: DateTime<Utc>,
) -> Result<Assignment> {
    if d.status != DeliveryStatus::Created {
        return Err(Error::new(
            ErrorCode::IllegalState,
            format!("{} is {}, only CREATED deliveries are assigned", d.delivery_id, d.status.as_str()),
        ));
    }
    let candidates = eligible_couriers(d, fleet, policy, cfg, at);
    let chosen = choose(d, &candidates, &policy.kind).ok_or_else(|| {
        Error::new(
            ErrorCode::NoCandidate,
            format!("no eligible courier for {} under {}", d.delivery_id, policy.kind.name()),
        )
        .with_details(json!({ "candidates": candidates.len() }))
    })?;
    let mut detail = json!({
        "policy": policy.kind.name(),
        "candidates": candidates.len(),
    });
    if let Some(p) = chosen.position {
        detail["distanceM"] = json!((haversine_m(p.point(), d.pickup_location.point()) * 10.0).round() / 10.0);
    }
    let ev = TransitionEvent::dispatch(Actor::System, chosen.courier_id.clone()).with_detail(detail);
    Ok(Assignment {
        courier_id: chosen.courier_id.clone(),
        delivery: d.transition(&ev, at)?,
    })
}

/// Next attempt of a rejected delivery's task: same task and quote linkage,
/// the rejecting courier added to the exclusion list.
pub fn next_attempt(d: &Delivery, id: DeliveryId, at: DateTime<Utc>) -> Delivery {
    let mut excluded = d.excluded_couriers.clone();
    if let Some(c) = &d.courier_id {
        if !excluded.contains(c) {
            excluded.push(c.clone());
        }
    }
    let at = at.max(d.updated_at);
    Delivery {
        delivery_id: id,
        attempt: d.attempt + 1,
        courier_id: None,
        status: DeliveryStatus::Created,
        trip_phase: TripPhase::None,
        created_at: at,
        updated_at: at,
        issue: None,
        history: vec![],
        excluded_couriers: excluded,
        ..d.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum RejectOutcome {
    /// A fresh attempt, already DISPATCHED.
    Redispatched(Assignment),
    /// The task is given up; `attempt` is the last attempt number used.
    Canceled { attempt: u32, reason: String },
}

pub fn on_reject(
    d: &Delivery,
    new_id: DeliveryId,
    fleet: &[CourierState],
    policy: &AssignmentPolicy,
    cfg: &MatchConfig,
    at: DateTime<Utc>,
) -> Result<RejectOutcome> {
    if d.status != DeliveryStatus::Rejected {
        return Err(Error::new(
            ErrorCode::IllegalState,
            format!("{} is {}, not REJECTED", d.delivery_id, d.status.as_str()),
        ));
    }
    if d.attempt >= policy.max_attempts {
        return Ok(RejectOutcome::Canceled {
            attempt: d.attempt,
            reason: format!("rejected on all {} attempts", policy.max_attempts),
        });
    }
    let next = next_attempt(d, new_id, at);
    match assign(&next, fleet, policy, cfg, at) {
        Ok(a) => Ok(RejectOutcome::Redispatched(a)),
        Err(e) if e.code == ErrorCode::NoCandidate => Ok(RejectOutcome::Canceled {
            attempt: d.attempt,
            reason: "no eligible courier left for the task".into(),
        }),
        Err(e) => Err(e),
    }
}
