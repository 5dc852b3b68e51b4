//! One courier instance: its deliveries, fleet, notes and policy, all kept
//! in a [`Store`] with per-aggregate compare-and-set.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::assignment::{assign, on_reject, AssignmentPolicy, CourierState, PositionFix, RejectOutcome};
use crate::delivery::{
    bucket_deliveries, Actor, Bucket, CourierAvailability, Delivery, DeliveryStatus, EventKind, TransitionEvent,
};
use crate::disclosure::{self, Metrics, Salt, TimeRange};
use crate::error::{Error, ErrorCode, Result};
use crate::geo::{LonLat, Polygon};
use crate::ids::{CourierId, DeliveryId, IdGen, NoteId, Role, TaskId};
use crate::money::Currency;
use crate::notes::{notes_by_author, notes_near, LocationNote};
use crate::preferences::{apply_patch, CourierPreferences, MatchConfig};
use crate::store::{Repo, Store, Versioned};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InstanceConfig {
    pub domain: String,
    pub currency: Currency,
    /// Default delivery polygon for newly enrolled couriers.
    pub territory: Polygon,
    #[serde(default)]
    pub matching: MatchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CourierRecord {
    pub courier_id: CourierId,
    pub name: String,
    pub availability: CourierAvailability,
    pub position: Option<PositionFix>,
    pub enrolled_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Open,
    Completed,
    Canceled,
}

/// A customer order across all of its delivery attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub state: TaskState,
    pub attempts: Vec<DeliveryId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_by: Option<Actor>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub reason: String,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyChange {
    pub at: DateTime<Utc>,
    pub policy: AssignmentPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Settings {
    policy: AssignmentPolicy,
    policy_log: Vec<PolicyChange>,
}

const SETTINGS_ID: &str = "instance";

pub struct Instance {
    cfg: InstanceConfig,
    ids: Arc<dyn IdGen>,
    deliveries: Repo<Delivery>,
    couriers: Repo<CourierRecord>,
    prefs: Repo<CourierPreferences>,
    notes: Repo<LocationNote>,
    tasks: Repo<TaskRecord>,
    settings: Repo<Settings>,
    dispatcher: Mutex<()>,
}

impl Instance {
    pub fn open(cfg: InstanceConfig, store: Arc<dyn Store>, ids: Arc<dyn IdGen>) -> Result<Self> {
        let inst = Self {
            deliveries: Repo::new(store.clone(), "delivery"),
            couriers: Repo::new(store.clone(), "courier"),
            prefs: Repo::new(store.clone(), "preferences"),
            notes: Repo::new(store.clone(), "note"),
            tasks: Repo::new(store.clone(), "task"),
            settings: Repo::new(store, "settings"),
            dispatcher: Mutex::new(()),
            cfg,
            ids,
        };
        if inst.settings.get(SETTINGS_ID)?.is_none() {
            let s = Settings {
                policy: AssignmentPolicy::default(),
                policy_log: vec![],
            };
            match inst.settings.insert(SETTINGS_ID, &s) {
                Ok(_) => {}
                Err(e) if e.code == ErrorCode::VersionConflict => {}
                Err(e) => return Err(e),
            }
        }
        Ok(inst)
    }

    pub fn config(&self) -> &InstanceConfig {
        &self.cfg
    }

    pub fn domain(&self) -> &str {
        &self.cfg.domain
    }

    // ---- fleet ----

    pub fn enroll_courier(&self, name: &str, at: DateTime<Utc>) -> Result<CourierRecord> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::field("name", "must not be empty"));
        }
        let rec = CourierRecord {
            courier_id: CourierId::new(self.ids.next_id()),
            name: name.to_owned(),
            availability: CourierAvailability::Offline,
            position: None,
            enrolled_at: at,
        };
        self.couriers.insert(rec.courier_id.as_str(), &rec)?;
        self.prefs
            .insert(rec.courier_id.as_str(), &CourierPreferences::defaults(self.cfg.territory.clone()))?;
        Ok(rec)
    }

    pub fn courier(&self, id: &CourierId) -> Result<CourierRecord> {
        self.couriers
            .get(id.as_str())?
            .map(|v| v.value)
            .ok_or_else(|| Error::not_found("courier", id.as_str()))
    }

    pub fn couriers(&self) -> Result<Vec<CourierRecord>> {
        self.couriers.scan(|_| true)
    }

    pub fn set_availability(&self, id: &CourierId, a: CourierAvailability) -> Result<CourierRecord> {
        let (rec, ()) = self.couriers.update(id.as_str(), |c| {
            let changed = c.availability != a;
            c.availability = a;
            Ok((changed, ()))
        })?;
        Ok(rec.value)
    }

    pub fn set_position(&self, id: &CourierId, p: LonLat, at: DateTime<Utc>) -> Result<CourierRecord> {
        p.validate()?;
        let (rec, ()) = self.couriers.update(id.as_str(), |c| {
            if c.position.is_some_and(|old| old.at > at) {
                return Ok((false, ()));
            }
            c.position = Some(PositionFix { lon: p.lon, lat: p.lat, at });
            Ok((true, ()))
        })?;
        Ok(rec.value)
    }

    /// Read-consistent view of the fleet for one dispatch decision.
    pub fn fleet_snapshot(&self) -> Result<Vec<CourierState>> {
        let mut active: BTreeMap<CourierId, u32> = BTreeMap::new();
        for d in self.deliveries.scan(|d| {
            matches!(
                d.status,
                DeliveryStatus::Dispatched | DeliveryStatus::Accepted | DeliveryStatus::PickedUp
            )
        })? {
            if let Some(c) = d.courier_id {
                *active.entry(c).or_default() += 1;
            }
        }
        let prefs: BTreeMap<String, CourierPreferences> = self.prefs.entries()?.into_iter().collect();
        Ok(self
            .couriers()?
            .into_iter()
            .map(|c| CourierState {
                active_delivery_count: active.get(&c.courier_id).copied().unwrap_or(0),
                prefs: prefs.get(c.courier_id.as_str()).cloned(),
                courier_id: c.courier_id,
                availability: c.availability,
                position: c.position,
                enrolled_at: c.enrolled_at,
            })
            .collect())
    }

    // ---- preferences ----

    pub fn preferences(&self, id: &CourierId) -> Result<Versioned<CourierPreferences>> {
        self.prefs
            .get(id.as_str())?
            .ok_or_else(|| Error::not_found("courier", id.as_str()))
    }

    /// Applies a partial update. With `if_match`, the write only happens if
    /// the stored version still equals it.
    pub fn patch_preferences(
        &self,
        id: &CourierId,
        patch: &Map<String, Value>,
        if_match: Option<u64>,
    ) -> Result<Versioned<CourierPreferences>> {
        let Some(expected) = if_match else {
            let (v, ()) = self.prefs.update(id.as_str(), |p| Ok((apply_patch(p, patch)?, ())))?;
            return Ok(v);
        };
        let current = self.preferences(id)?;
        if current.version != expected {
            return Err(Error::new(
                ErrorCode::VersionConflict,
                format!("preferences are at version {}, not {expected}", current.version),
            ));
        }
        let mut next = current.value.clone();
        if !apply_patch(&mut next, patch)? {
            return Ok(current);
        }
        let version = self.prefs.put(id.as_str(), &next, expected)?;
        Ok(Versioned { value: next, version })
    }

    // ---- policy ----

    pub fn policy(&self) -> Result<AssignmentPolicy> {
        Ok(self.settings_value()?.policy)
    }

    pub fn policy_log(&self) -> Result<Vec<PolicyChange>> {
        Ok(self.settings_value()?.policy_log)
    }

    fn settings_value(&self) -> Result<Settings> {
        self.settings
            .get(SETTINGS_ID)?
            .map(|v| v.value)
            .ok_or_else(|| Error::internal("instance settings missing"))
    }

    pub fn set_policy(&self, policy: AssignmentPolicy, at: DateTime<Utc>) -> Result<AssignmentPolicy> {
        policy.validate()?;
        let _guard = self.dispatcher.lock();
        self.settings.update(SETTINGS_ID, |s| {
            s.policy = policy.clone();
            s.policy_log.push(PolicyChange {
                at,
                policy: policy.clone(),
            });
            Ok((true, ()))
        })?;
        Ok(policy)
    }

    // ---- deliveries ----

    pub fn delivery(&self, id: &DeliveryId) -> Result<Delivery> {
        self.deliveries
            .get(id.as_str())?
            .map(|v| v.value)
            .ok_or_else(|| Error::not_found("delivery", id.as_str()))
    }

    pub fn deliveries(&self) -> Result<Vec<Delivery>> {
        self.deliveries.scan(|_| true)
    }

    pub fn courier_deliveries(&self, courier: &CourierId, bucket: Bucket) -> Result<Vec<Delivery>> {
        let mine = self.deliveries.scan(|d| d.courier_id.as_ref() == Some(courier))?;
        Ok(bucket_deliveries(&mine, courier, bucket))
    }

    pub fn task(&self, id: &TaskId) -> Result<TaskRecord> {
        self.tasks
            .get(id.as_str())?
            .map(|v| v.value)
            .ok_or_else(|| Error::not_found("task", id.as_str()))
    }

    pub fn tasks(&self) -> Result<Vec<TaskRecord>> {
        self.tasks.scan(|_| true)
    }

    /// Takes ownership of a freshly finalized delivery and tries to
    /// dispatch it right away. Returns the stored delivery.
    pub fn accept_delivery(&self, d: Delivery, at: DateTime<Utc>) -> Result<Delivery> {
        if d.status != DeliveryStatus::Created || !d.history.is_empty() {
            return Err(Error::new(ErrorCode::IllegalState, "new deliveries must be CREATED with no history"));
        }
        if d.instance_domain != self.cfg.domain {
            return Err(Error::validation(format!(
                "delivery belongs to {}, not {}",
                d.instance_domain, self.cfg.domain
            )));
        }
        self.deliveries.insert(d.delivery_id.as_str(), &d)?;
        let task = TaskRecord {
            task_id: d.task_id.clone(),
            state: TaskState::Open,
            attempts: vec![d.delivery_id.clone()],
            closed_by: None,
            reason: String::new(),
            updated_at: at,
        };
        self.tasks.insert(d.task_id.as_str(), &task)?;
        self.try_dispatch(&d.delivery_id, at)?;
        self.delivery(&d.delivery_id)
    }

    /// Dispatches one CREATED delivery if a courier is available. Returns
    /// the chosen courier, or `None` if the delivery stays queued.
    pub fn try_dispatch(&self, id: &DeliveryId, at: DateTime<Utc>) -> Result<Option<CourierId>> {
        let _guard = self.dispatcher.lock();
        let fleet = self.fleet_snapshot()?;
        let policy = self.policy()?;
        let (_, chosen) = self.deliveries.update(id.as_str(), |d| {
            if d.status != DeliveryStatus::Created {
                return Ok((false, None));
            }
            match assign(d, &fleet, &policy, &self.cfg.matching, at) {
                Ok(a) => {
                    *d = a.delivery;
                    Ok((true, Some(a.courier_id)))
                }
                Err(e) if e.code == ErrorCode::NoCandidate => Ok((false, None)),
                Err(e) => Err(e),
            }
        })?;
        Ok(chosen)
    }

    /// Retries every queued delivery, oldest first.
    pub fn dispatch_pending(&self, at: DateTime<Utc>) -> Result<Vec<(DeliveryId, CourierId)>> {
        let mut queued = self.deliveries.scan(|d| d.status == DeliveryStatus::Created)?;
        queued.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.delivery_id.cmp(&b.delivery_id)));
        let mut out = vec![];
        for d in queued {
            if let Some(c) = self.try_dispatch(&d.delivery_id, at)? {
                out.push((d.delivery_id, c));
            }
        }
        Ok(out)
    }

    /// Applies a lifecycle event and runs its follow-up work (re-dispatch
    /// after a rejection, task bookkeeping).
    pub fn apply_event(&self, id: &DeliveryId, ev: &TransitionEvent, at: DateTime<Utc>) -> Result<Delivery> {
        let (updated, ()) = self.deliveries.update(id.as_str(), |d| {
            *d = match (&ev.kind, &ev.issue) {
                (EventKind::ReportIssue, Some((code, note))) => d.report_issue(&ev.actor, code, note, at)?,
                (EventKind::ReportIssue, None) => return Err(Error::field("code", "an issue needs a code")),
                _ => d.transition(ev, at)?,
            };
            Ok((true, ()))
        })?;
        let d = updated.value;
        match ev.kind {
            EventKind::Reject => self.handle_reject(&d, at)?,
            EventKind::MarkDelivered => self.close_task(&d.task_id, TaskState::Completed, ev.actor.clone(), "", at)?,
            EventKind::Cancel => self.close_task(&d.task_id, TaskState::Canceled, ev.actor.clone(), "canceled", at)?,
            _ => {}
        }
        Ok(d)
    }

    pub fn courier_event(
        &self,
        courier: &CourierId,
        id: &DeliveryId,
        kind: EventKind,
        at: DateTime<Utc>,
    ) -> Result<Delivery> {
        let ev = match kind {
            EventKind::Dispatch => TransitionEvent::dispatch(Actor::Courier(courier.clone()), courier.clone()),
            EventKind::ReportIssue => return Err(Error::validation("use report_issue")),
            _ => TransitionEvent::new(kind, Actor::Courier(courier.clone())),
        };
        self.apply_event(id, &ev, at)
    }

    pub fn report_issue(&self, actor: Actor, id: &DeliveryId, code: &str, note: &str, at: DateTime<Utc>) -> Result<Delivery> {
        self.apply_event(id, &TransitionEvent::report_issue(actor, code, note), at)
    }

    fn close_task(&self, task: &TaskId, state: TaskState, by: Actor, reason: &str, at: DateTime<Utc>) -> Result<()> {
        self.tasks.update(task.as_str(), |t| {
            if t.state != TaskState::Open {
                return Ok((false, ()));
            }
            t.state = state;
            t.closed_by = Some(by.clone());
            t.reason = reason.to_owned();
            t.updated_at = at.max(t.updated_at);
            Ok((true, ()))
        })?;
        Ok(())
    }

    fn handle_reject(&self, rejected: &Delivery, at: DateTime<Utc>) -> Result<()> {
        let outcome = {
            let _guard = self.dispatcher.lock();
            let fleet = self.fleet_snapshot()?;
            let policy = self.policy()?;
            let new_id = DeliveryId::new(self.ids.next_id());
            let outcome = on_reject(rejected, new_id, &fleet, &policy, &self.cfg.matching, at)?;
            if let RejectOutcome::Redispatched(a) = &outcome {
                self.deliveries.insert(a.delivery.delivery_id.as_str(), &a.delivery)?;
            }
            outcome
        };
        match outcome {
            RejectOutcome::Redispatched(a) => {
                self.tasks.update(rejected.task_id.as_str(), |t| {
                    t.attempts.push(a.delivery.delivery_id.clone());
                    t.updated_at = at.max(t.updated_at);
                    Ok((true, ()))
                })?;
            }
            RejectOutcome::Canceled { reason, .. } => {
                self.close_task(&rejected.task_id, TaskState::Canceled, Actor::System, &reason, at)?;
            }
        }
        Ok(())
    }

    // ---- community notes ----

    pub fn create_note(&self, author: &CourierId, at_point: LonLat, text: String, at: DateTime<Utc>) -> Result<LocationNote> {
        self.courier(author)?;
        let note = LocationNote::new(NoteId::new(self.ids.next_id()), author.clone(), at_point, text, at)?;
        self.notes.insert(note.location_note_id.as_str(), &note)?;
        Ok(note)
    }

    pub fn note(&self, id: &NoteId) -> Result<LocationNote> {
        let n = self
            .notes
            .get(id.as_str())?
            .map(|v| v.value)
            .ok_or_else(|| Error::not_found("location note", id.as_str()))?;
        n.ensure_visible()?;
        Ok(n)
    }

    pub fn notes_by(&self, author: &CourierId) -> Result<Vec<LocationNote>> {
        Ok(notes_by_author(self.notes.scan(|n| &n.author_courier_id == author)?, author))
    }

    pub fn notes_near(&self, center: LonLat, radius_m: f64) -> Result<Vec<(LocationNote, f64)>> {
        notes_near(self.notes.scan(|n| !n.deleted)?, center, radius_m)
    }

    fn mutate_note(&self, id: &NoteId, f: impl Fn(&mut LocationNote) -> Result<()>) -> Result<LocationNote> {
        let (v, ()) = self
            .notes
            .update(id.as_str(), |n| {
                f(n)?;
                Ok((true, ()))
            })
            .map_err(|e| {
                if e.code == ErrorCode::NotFound {
                    Error::not_found("location note", id.as_str())
                } else {
                    e
                }
            })?;
        Ok(v.value)
    }

    pub fn edit_note(&self, courier: &CourierId, id: &NoteId, text: String, at: DateTime<Utc>) -> Result<LocationNote> {
        self.mutate_note(id, |n| n.edit(courier, text.clone(), at))
    }

    pub fn delete_note(&self, courier: &CourierId, id: &NoteId, at: DateTime<Utc>) -> Result<()> {
        self.mutate_note(id, |n| n.delete(courier, at))?;
        Ok(())
    }

    pub fn react_to_note(&self, courier: &CourierId, id: &NoteId, emoji: &str) -> Result<LocationNote> {
        self.mutate_note(id, |n| n.react(courier, emoji))
    }

    // ---- disclosure ----

    pub fn export_csv(&self, range: TimeRange, role: Role, salt: &Salt) -> Result<String> {
        disclosure::export_csv(&self.deliveries()?, range, role, salt)
    }

    pub fn metrics(&self, range: TimeRange, role: Role) -> Result<Metrics> {
        disclosure::metrics(&self.deliveries()?, range, role, &self.cfg.currency)
    }
}
