//! Requester/instance price negotiation.
//!
//! A requester opens a thread with an OFFER; the parties then alternate
//! COUNTER rounds until one side ACCEPTs or REJECTs, or the quote expires.
//! A quote broadcast to several instances yields one thread per instance in
//! a shared broadcast group. The group record is the atomicity point: the
//! first ACCEPT to claim it wins and every sibling is closed with a SYSTEM
//! rejection, so at most one thread per group can ever be finalized.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::delivery::{Delivery, DeliveryStatus, DistanceUnit, TripPhase};
use crate::error::{Error, ErrorCode, FieldErrors, Result};
use crate::geo::{haversine_m, Place};
use crate::ids::{DeliveryId, GroupId, IdGen, RequesterId, TaskId, ThreadId};
use crate::money::{payout_minor, Currency, Decimal};
use crate::registry::{InstanceFilter, Registry};
use crate::store::{Repo, Store};

pub const DEFAULT_MAX_ROUNDS: usize = 5;

/// Slack allowed when comparing the quoted route distance with the
/// straight-line distance between pickup and dropoff.
const DISTANCE_SLACK: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DeliveryQuote {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote_id: Option<String>,
    pub quote: Decimal,
    pub quote_range_from: Decimal,
    pub quote_range_to: Decimal,
    pub fee_percentage: Decimal,
    pub currency: Currency,
    /// Minutes.
    pub duration: u32,
    pub distance: Decimal,
    pub distance_unit: DistanceUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pickup_phone_number: Option<String>,
    pub pickup_name: String,
    pub dropoff_phone_number: String,
    pub dropoff_name: String,
    pub expires_at: DateTime<Utc>,
    pub pickup_ready_at: DateTime<Utc>,
    pub pickup_deadline_at: DateTime<Utc>,
    pub dropoff_ready_at: DateTime<Utc>,
    pub dropoff_eta: DateTime<Utc>,
    pub dropoff_deadline_at: DateTime<Utc>,
    pub order_total_value: Decimal,
    pub pickup_location: Place,
    pub dropoff_location: Place,
    /// Extension: lets couriers' weight and order-size preferences apply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_weight_lbs: Option<f64>,
    /// Extension: merchant descriptors matched against restaurantTypes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub merchant_tags: Vec<String>,
}

impl DeliveryQuote {
    pub fn validate(&self, now: DateTime<Utc>) -> Result<()> {
        let mut errs = FieldErrors::new();
        let exp = self.currency.exponent();
        for (name, v) in [
            ("quote", self.quote),
            ("quoteRangeFrom", self.quote_range_from),
            ("quoteRangeTo", self.quote_range_to),
            ("orderTotalValue", self.order_total_value),
        ] {
            errs.check(!v.is_negative(), name, "must be >= 0");
            if let Err(e) = v.to_minor(exp) {
                errs.push(name, e.message);
            }
        }
        errs.check(
            self.quote_range_from <= self.quote_range_to,
            "quoteRangeFrom",
            "must not exceed quoteRangeTo",
        );
        errs.check(
            self.quote_range_from <= self.quote && self.quote <= self.quote_range_to,
            "quote",
            "must lie within [quoteRangeFrom, quoteRangeTo]",
        );
        errs.check(
            !self.fee_percentage.is_negative() && self.fee_percentage <= Decimal::from_int(100),
            "feePercentage",
            "must lie in [0, 100]",
        );
        errs.check(self.duration > 0, "duration", "must be > 0 minutes");
        errs.check(!self.distance.is_negative(), "distance", "must be >= 0");
        errs.check(!self.pickup_name.trim().is_empty(), "pickupName", "must not be empty");
        errs.check(!self.dropoff_name.trim().is_empty(), "dropoffName", "must not be empty");
        errs.check(
            !self.dropoff_phone_number.trim().is_empty(),
            "dropoffPhoneNumber",
            "must not be empty",
        );
        errs.check(self.expires_at > now, "expiresAt", "must be in the future");
        errs.check(
            self.pickup_ready_at <= self.pickup_deadline_at,
            "pickupReadyAt",
            "must not be after pickupDeadlineAt",
        );
        errs.check(
            self.dropoff_ready_at <= self.dropoff_eta,
            "dropoffReadyAt",
            "must not be after dropoffEta",
        );
        errs.check(
            self.dropoff_eta <= self.dropoff_deadline_at,
            "dropoffEta",
            "must not be after dropoffDeadlineAt",
        );
        errs.check(
            self.pickup_deadline_at <= self.dropoff_deadline_at,
            "pickupDeadlineAt",
            "must not be after dropoffDeadlineAt",
        );
        errs.absorb("pickupLocation", self.pickup_location.point().validate());
        errs.absorb("dropoffLocation", self.dropoff_location.point().validate());
        if let Some(w) = self.item_weight_lbs {
            errs.check(w.is_finite() && w >= 0.0, "itemWeightLbs", "must be >= 0");
        }
        if errs.is_empty() {
            let straight = haversine_m(self.pickup_location.point(), self.dropoff_location.point());
            let quoted = self.distance.to_f64() * self.distance_unit.meters();
            errs.check(
                quoted >= straight * DISTANCE_SLACK,
                "distance",
                "shorter than the straight-line distance between pickup and dropoff",
            );
        }
        errs.into_result("quote")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ThreadState {
    Open,
    Accepted,
    Rejected,
    Expired,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Party {
    Requester,
    Instance,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoundKind {
    Offer,
    Counter,
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Round {
    pub by: Party,
    pub kind: RoundKind,
    /// Free text exchanged between the parties, kept verbatim.
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<Decimal>,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NegotiationThread {
    pub thread_id: ThreadId,
    pub quote: DeliveryQuote,
    pub state: ThreadState,
    pub rounds: Vec<Round>,
    pub requester_id: RequesterId,
    pub instance_domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broadcast_group_id: Option<GroupId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreed_amount: Option<Decimal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery_id: Option<DeliveryId>,
    pub max_rounds: usize,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// One reply to an open thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Response {
    pub kind: RoundKind,
    #[serde(default)]
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<Decimal>,
}

impl Response {
    pub fn counter(amount: Decimal, message: impl Into<String>) -> Self {
        Self {
            kind: RoundKind::Counter,
            message: message.into(),
            amount: Some(amount),
        }
    }

    pub fn accept(message: impl Into<String>) -> Self {
        Self {
            kind: RoundKind::Accept,
            message: message.into(),
            amount: None,
        }
    }

    pub fn reject(message: impl Into<String>) -> Self {
        Self {
            kind: RoundKind::Reject,
            message: message.into(),
            amount: None,
        }
    }
}

fn closed(t: &NegotiationThread) -> Error {
    Error::new(
        ErrorCode::ThreadClosed,
        format!("thread {} is {:?}", t.thread_id, t.state),
    )
    .with_details(serde_json::json!({ "state": t.state }))
}

fn expired(t: &NegotiationThread) -> Error {
    Error::new(
        ErrorCode::Expired,
        format!("quote on thread {} expired at {}", t.thread_id, t.quote.expires_at),
    )
}

impl NegotiationThread {
    pub fn open(
        thread_id: ThreadId,
        requester_id: RequesterId,
        instance_domain: String,
        quote: DeliveryQuote,
        group: Option<GroupId>,
        max_rounds: usize,
        now: DateTime<Utc>,
    ) -> Self {
        let offer = Round {
            by: Party::Requester,
            kind: RoundKind::Offer,
            message: String::new(),
            amount: Some(quote.quote),
            at: now,
        };
        Self {
            thread_id,
            quote,
            state: ThreadState::Open,
            rounds: vec![offer],
            requester_id,
            instance_domain,
            broadcast_group_id: group,
            agreed_amount: None,
            delivery_id: None,
            max_rounds,
            created_at: now,
            updated_at: now,
        }
    }

    /// Amount on the most recent OFFER or COUNTER.
    pub fn last_offered(&self) -> Option<Decimal> {
        self.rounds
            .iter()
            .rev()
            .find(|r| matches!(r.kind, RoundKind::Offer | RoundKind::Counter))
            .and_then(|r| r.amount)
    }

    fn countered(&self, by: Party) -> bool {
        self.rounds.iter().any(|r| r.by == by && r.kind == RoundKind::Counter)
    }

    /// Moves an open thread past its expiry to EXPIRED. Returns whether it changed.
    pub fn expire(&mut self, now: DateTime<Utc>) -> bool {
        if self.state == ThreadState::Open && self.quote.expires_at <= now {
            self.state = ThreadState::Expired;
            self.updated_at = now.max(self.updated_at);
            true
        } else {
            false
        }
    }

    /// Checks that `response` may be appended, without changing anything.
    pub fn check_response(&self, by: Party, response: &Response, now: DateTime<Utc>) -> Result<()> {
        if self.state == ThreadState::Expired || (self.state == ThreadState::Open && self.quote.expires_at <= now) {
            return Err(expired(self));
        }
        if self.state != ThreadState::Open {
            return Err(closed(self));
        }
        if by == Party::System {
            return Err(Error::validation("SYSTEM rounds are not negotiation responses"));
        }
        if response.kind == RoundKind::Offer {
            return Err(Error::field("kind", "OFFER only opens a thread; use COUNTER"));
        }
        if self.rounds.last().map(|r| r.by) == Some(by) {
            return Err(Error::new(
                ErrorCode::OutOfTurn,
                format!("{by:?} already made the last move on thread {}", self.thread_id),
            ));
        }
        let limit = 2 * self.max_rounds;
        let after = self.rounds.len() + 1;
        if after > limit || (response.kind == RoundKind::Counter && after >= limit) {
            return Err(Error::new(
                ErrorCode::RoundLimit,
                format!("thread {} allows {limit} rounds; answer with ACCEPT or REJECT", self.thread_id),
            ));
        }
        match response.kind {
            RoundKind::Counter => {
                let amount = response
                    .amount
                    .ok_or_else(|| Error::field("amount", "COUNTER needs an amount"))?;
                if amount <= Decimal::ZERO {
                    return Err(Error::field("amount", "must be positive"));
                }
                amount.to_minor(self.quote.currency.exponent())?;
                let free = self.countered(Party::Requester) && self.countered(Party::Instance);
                if !free && (amount < self.quote.quote_range_from || amount > self.quote.quote_range_to) {
                    return Err(Error::field(
                        "amount",
                        format!(
                            "{amount} outside [{}, {}] until both parties have countered",
                            self.quote.quote_range_from, self.quote.quote_range_to
                        ),
                    ));
                }
            }
            RoundKind::Accept => {
                if let (Some(given), Some(offered)) = (response.amount, self.last_offered()) {
                    if given != offered {
                        return Err(Error::field("amount", format!("ACCEPT must match the offered {offered}")));
                    }
                }
            }
            RoundKind::Reject | RoundKind::Offer => {}
        }
        Ok(())
    }

    /// Appends a response. An expired thread is moved to EXPIRED before the
    /// error is returned, so callers should persist `self` either way.
    pub fn respond(&mut self, by: Party, response: &Response, now: DateTime<Utc>) -> Result<()> {
        if let Err(e) = self.check_response(by, response, now) {
            if e.code == ErrorCode::Expired {
                self.expire(now);
            }
            return Err(e);
        }
        let now = now.max(self.updated_at);
        match response.kind {
            RoundKind::Accept => {
                self.agreed_amount = self.last_offered();
                self.state = ThreadState::Accepted;
            }
            RoundKind::Reject => self.state = ThreadState::Rejected,
            RoundKind::Counter | RoundKind::Offer => {}
        }
        self.rounds.push(Round {
            by,
            kind: response.kind,
            message: response.message.clone(),
            amount: match response.kind {
                RoundKind::Counter => response.amount,
                RoundKind::Accept => self.agreed_amount,
                _ => None,
            },
            at: now,
        });
        self.updated_at = now;
        Ok(())
    }

    /// Closes an open thread on behalf of the system (sibling lost the broadcast).
    pub fn system_reject(&mut self, reason: &str, now: DateTime<Utc>) -> bool {
        if self.state != ThreadState::Open {
            return false;
        }
        let now = now.max(self.updated_at);
        self.rounds.push(Round {
            by: Party::System,
            kind: RoundKind::Reject,
            message: reason.to_owned(),
            amount: None,
            at: now,
        });
        self.state = ThreadState::Rejected;
        self.updated_at = now;
        true
    }

    /// Structural checks over the round list.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |why: &str| Err(Error::internal(format!("thread {}: {why}", self.thread_id)));
        match self.rounds.first() {
            Some(r) if r.by == Party::Requester && r.kind == RoundKind::Offer => {}
            _ => return fail("first round is not the requester's OFFER"),
        }
        if self.rounds.len() > 2 * self.max_rounds + 1 {
            return fail("too many rounds");
        }
        let negotiated: Vec<&Round> = self.rounds.iter().filter(|r| r.by != Party::System).collect();
        if negotiated.len() > 2 * self.max_rounds {
            return fail("too many rounds");
        }
        if negotiated.windows(2).any(|w| w[0].by == w[1].by) {
            return fail("turns do not alternate");
        }
        for (i, r) in self.rounds.iter().enumerate() {
            let terminal = matches!(r.kind, RoundKind::Accept | RoundKind::Reject);
            if terminal && i + 1 != self.rounds.len() {
                return fail("rounds continue after ACCEPT/REJECT");
            }
        }
        if self.state == ThreadState::Accepted || self.state == ThreadState::Finalized {
            let before_accept = self.rounds[..self.rounds.len() - 1]
                .iter()
                .rev()
                .find(|r| matches!(r.kind, RoundKind::Offer | RoundKind::Counter))
                .and_then(|r| r.amount);
            if self.agreed_amount.is_none() || self.agreed_amount != before_accept {
                return fail("agreed amount differs from the last offer");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BroadcastGroup {
    pub group_id: GroupId,
    pub thread_ids: Vec<ThreadId>,
    pub winner: Option<ThreadId>,
}

/// Payout owed to the courier for an accepted thread.
pub fn thread_payout(t: &NegotiationThread) -> Result<Decimal> {
    let agreed = t
        .agreed_amount
        .ok_or_else(|| Error::new(ErrorCode::NotAccepted, "no agreed amount"))?;
    let exp = t.quote.currency.exponent();
    let minor = payout_minor(agreed.to_minor(exp)?, t.quote.fee_percentage)?;
    Ok(Decimal::from_minor(minor, exp))
}

/// Persistent negotiation ledger shared by requesters and instances.
#[derive(Clone)]
pub struct QuoteDesk {
    threads: Repo<NegotiationThread>,
    groups: Repo<BroadcastGroup>,
    ids: Arc<dyn IdGen>,
    max_rounds: usize,
}

impl QuoteDesk {
    pub fn new(store: Arc<dyn Store>, ids: Arc<dyn IdGen>, max_rounds: usize) -> Self {
        Self {
            threads: Repo::new(store.clone(), "thread"),
            groups: Repo::new(store, "broadcast_group"),
            ids,
            max_rounds: max_rounds.max(1),
        }
    }

    pub fn max_rounds(&self) -> usize {
        self.max_rounds
    }

    fn stamp(&self, q: &DeliveryQuote) -> DeliveryQuote {
        let mut q = q.clone();
        if q.quote_id.is_none() {
            q.quote_id = Some(self.ids.next_id());
        }
        q
    }

    pub fn create_quote(
        &self,
        requester: &RequesterId,
        instance_domain: &str,
        q: &DeliveryQuote,
        registry: &Registry,
        now: DateTime<Utc>,
    ) -> Result<NegotiationThread> {
        q.validate(now)?;
        if registry.find(instance_domain).is_none() {
            return Err(Error::new(
                ErrorCode::UnknownInstance,
                format!("{instance_domain} is not in the registry"),
            ));
        }
        let thread = NegotiationThread::open(
            ThreadId::new(self.ids.next_id()),
            requester.clone(),
            instance_domain.to_owned(),
            self.stamp(q),
            None,
            self.max_rounds,
            now,
        );
        self.threads.insert(thread.thread_id.as_str(), &thread)?;
        Ok(thread)
    }

    /// Opens one thread per instance matching `filter`, all in one group.
    pub fn broadcast_quote(
        &self,
        requester: &RequesterId,
        registry: &Registry,
        filter: &InstanceFilter,
        q: &DeliveryQuote,
        now: DateTime<Utc>,
    ) -> Result<Vec<NegotiationThread>> {
        q.validate(now)?;
        let targets = registry.query_instances(filter)?;
        if targets.is_empty() {
            return Err(Error::new(ErrorCode::NoMatchingInstance, "no instance matches the filter"));
        }
        let q = self.stamp(q);
        let group_id = GroupId::new(self.ids.next_id());
        let threads: Vec<NegotiationThread> = targets
            .iter()
            .map(|rec| {
                NegotiationThread::open(
                    ThreadId::new(self.ids.next_id()),
                    requester.clone(),
                    rec.domain_name.clone(),
                    q.clone(),
                    Some(group_id.clone()),
                    self.max_rounds,
                    now,
                )
            })
            .collect();
        let group = BroadcastGroup {
            group_id: group_id.clone(),
            thread_ids: threads.iter().map(|t| t.thread_id.clone()).collect(),
            winner: None,
        };
        self.groups.insert(group_id.as_str(), &group)?;
        for t in &threads {
            self.threads.insert(t.thread_id.as_str(), t)?;
        }
        Ok(threads)
    }

    pub fn get(&self, id: &ThreadId) -> Result<NegotiationThread> {
        self.threads
            .get(id.as_str())?
            .map(|v| v.value)
            .ok_or_else(|| Error::not_found("thread", id.as_str()))
    }

    pub fn group(&self, id: &GroupId) -> Result<BroadcastGroup> {
        self.groups
            .get(id.as_str())?
            .map(|v| v.value)
            .ok_or_else(|| Error::not_found("broadcast group", id.as_str()))
    }

    pub fn threads(&self, predicate: impl Fn(&NegotiationThread) -> bool) -> Result<Vec<NegotiationThread>> {
        self.threads.scan(predicate)
    }

    fn system_reject(&self, id: &ThreadId, reason: &str, now: DateTime<Utc>) -> Result<NegotiationThread> {
        let (t, _) = self.threads.update(id.as_str(), |t| Ok((t.system_reject(reason, now), ())))?;
        Ok(t.value)
    }

    fn group_winner(&self, t: &NegotiationThread) -> Result<Option<ThreadId>> {
        match &t.broadcast_group_id {
            Some(g) => Ok(self.group(g)?.winner),
            None => Ok(None),
        }
    }

    /// Claims the broadcast group for `t`. Returns false if a sibling holds it.
    fn claim_group(&self, group: &GroupId, t: &ThreadId) -> Result<bool> {
        let (_, won) = self.groups.update(group.as_str(), |g| match &g.winner {
            None => {
                g.winner = Some(t.clone());
                Ok((true, true))
            }
            Some(w) => Ok((false, w == t)),
        })?;
        Ok(won)
    }

    fn release_group(&self, group: &GroupId, t: &ThreadId) -> Result<()> {
        self.groups.update(group.as_str(), |g| {
            if g.winner.as_ref() == Some(t) {
                g.winner = None;
                Ok((true, ()))
            } else {
                Ok((false, ()))
            }
        })?;
        Ok(())
    }

    pub fn respond(&self, id: &ThreadId, by: Party, response: &Response, now: DateTime<Utc>) -> Result<NegotiationThread> {
        let current = self.get(id)?;
        if let Some(winner) = self.group_winner(&current)? {
            if &winner != id {
                self.system_reject(id, "another instance accepted this broadcast", now)?;
                return Err(closed(&self.get(id)?));
            }
        }
        if let Err(e) = current.check_response(by, response, now) {
            if e.code == ErrorCode::Expired {
                self.threads.update(id.as_str(), |t| Ok((t.expire(now), ())))?;
            }
            return Err(e);
        }
        let group = current.broadcast_group_id.clone();
        let claimed = match (&group, response.kind) {
            (Some(g), RoundKind::Accept) => {
                if !self.claim_group(g, id)? {
                    self.system_reject(id, "another instance accepted this broadcast", now)?;
                    return Err(closed(&self.get(id)?));
                }
                true
            }
            _ => false,
        };
        let outcome = self.threads.update(id.as_str(), |t| match t.respond(by, response, now) {
            Ok(()) => Ok((true, Ok(()))),
            Err(e) if e.code == ErrorCode::Expired => Ok((true, Err(e))),
            Err(e) => Err(e),
        });
        let updated = match outcome {
            Ok((t, Ok(()))) => t.value,
            Ok((_, Err(e))) | Err(e) => {
                if claimed {
                    self.release_group(group.as_ref().unwrap(), id)?;
                }
                return Err(e);
            }
        };
        updated.check_invariants()?;
        if claimed {
            let group = self.group(group.as_ref().unwrap())?;
            for sibling in group.thread_ids.iter().filter(|s| *s != id) {
                self.system_reject(sibling, "another instance accepted this broadcast", now)?;
            }
        }
        Ok(updated)
    }

    /// Marks an accepted thread FINALIZED and builds its delivery (status
    /// CREATED). The caller stores the delivery with the instance.
    pub fn finalize(&self, id: &ThreadId, now: DateTime<Utc>) -> Result<(NegotiationThread, Delivery)> {
        let delivery_id = DeliveryId::new(self.ids.next_id());
        let task_id = TaskId::new(self.ids.next_id());
        let (thread, ()) = self.threads.update(id.as_str(), |t| match t.state {
            ThreadState::Accepted => {
                t.state = ThreadState::Finalized;
                t.delivery_id = Some(delivery_id.clone());
                t.updated_at = now.max(t.updated_at);
                Ok((true, ()))
            }
            ThreadState::Finalized => Err(Error::new(
                ErrorCode::AlreadyFinalized,
                format!("thread {id} already produced delivery {}", t.delivery_id.clone().unwrap_or_else(|| DeliveryId::new("?"))),
            )),
            other => Err(Error::new(
                ErrorCode::NotAccepted,
                format!("thread {id} is {other:?}, not ACCEPTED"),
            )),
        })?;
        let t = thread.value;
        let delivery = delivery_from_thread(&t, delivery_id, task_id, t.updated_at)?;
        Ok((t, delivery))
    }

    /// Expires every open thread whose quote expired at or before `now`.
    pub fn expire_quotes(&self, now: DateTime<Utc>) -> Result<usize> {
        let due = self
            .threads
            .scan(|t| t.state == ThreadState::Open && t.quote.expires_at <= now)?;
        let mut count = 0;
        for t in due {
            let (_, changed) = self.threads.update(t.thread_id.as_str(), |t| {
                let c = t.expire(now);
                Ok((c, c))
            })?;
            count += changed as usize;
        }
        Ok(count)
    }
}

pub fn delivery_from_thread(
    t: &NegotiationThread,
    delivery_id: DeliveryId,
    task_id: TaskId,
    now: DateTime<Utc>,
) -> Result<Delivery> {
    let q = &t.quote;
    Ok(Delivery {
        delivery_id,
        task_id,
        attempt: 1,
        quote_thread_id: Some(t.thread_id.clone()),
        instance_domain: t.instance_domain.clone(),
        courier_id: None,
        status: DeliveryStatus::Created,
        trip_phase: TripPhase::None,
        pickup_location: q.pickup_location.clone(),
        dropoff_location: q.dropoff_location.clone(),
        item_weight_lbs: q.item_weight_lbs,
        merchant_tags: q.merchant_tags.clone(),
        payout: thread_payout(t)?,
        currency: q.currency.clone(),
        distance: q.distance,
        distance_unit: q.distance_unit,
        pickup_deadline_at: Some(q.pickup_deadline_at),
        dropoff_deadline_at: Some(q.dropoff_deadline_at),
        created_at: now,
        updated_at: now,
        issue: None,
        history: vec![],
        excluded_couriers: vec![],
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::delivery::tests::t0;
    use crate::ids::SeededIds;
    use crate::registry::tests::nosh;
    use crate::registry::SourceKind;
    use crate::store::MemoryStore;
    use chrono::Duration;

    pub fn quote() -> DeliveryQuote {
        crate::sample::quote(t0())
    }

    fn registry(domains: &[&str]) -> Registry {
        let mut reg = Registry::empty(SourceKind::Service);
        for (i, d) in domains.iter().enumerate() {
            let mut r = nosh();
            r.domain_name = (*d).into();
            r.instance_name = format!("Instance {i}");
            reg.register_instance(r).unwrap();
        }
        reg
    }

    fn desk() -> QuoteDesk {
        QuoteDesk::new(Arc::new(MemoryStore::new()), Arc::new(SeededIds::new(1)), DEFAULT_MAX_ROUNDS)
    }

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn valid_quote_opens_thread() {
        let reg = registry(&["nosh.example"]);
        let t = desk()
            .create_quote(&RequesterId::new("r1"), "nosh.example", &quote(), &reg, t0())
            .unwrap();
        assert_eq!(t.state, ThreadState::Open);
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.rounds[0].kind, RoundKind::Offer);
        assert!(t.quote.quote_id.is_some());
    }

    #[test]
    fn range_inversion_and_degenerate_range() {
        let mut q = quote();
        q.quote_range_from = d("10");
        q.quote_range_to = d("8");
        assert_eq!(q.validate(t0()).unwrap_err().code, ErrorCode::ValidationError);
        let mut q = quote();
        q.quote = d("12");
        q.quote_range_from = d("12");
        q.quote_range_to = d("12");
        assert!(q.validate(t0()).is_ok());
    }

    #[test]
    fn timeline_and_distance_checks() {
        let mut q = quote();
        q.dropoff_eta = q.dropoff_deadline_at + Duration::minutes(1);
        assert!(q.validate(t0()).is_err());
        let mut q = quote();
        q.expires_at = t0();
        assert!(q.validate(t0()).is_err());
        let mut q = quote();
        q.distance = d("0.1");
        let err = q.validate(t0()).unwrap_err();
        assert!(err.message.contains("distance"), "{}", err.message);
        let mut q = quote();
        q.quote = d("12.001");
        assert!(q.validate(t0()).is_err());
    }

    #[test]
    fn unknown_instance() {
        let err = desk()
            .create_quote(&RequesterId::new("r1"), "ghost.example", &quote(), &registry(&["nosh.example"]), t0())
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownInstance);
    }

    #[test]
    fn counter_then_accept_agrees_on_counter() {
        let desk = desk();
        let reg = registry(&["nosh.example"]);
        let t = desk.create_quote(&RequesterId::new("r1"), "nosh.example", &quote(), &reg, t0()).unwrap();
        let id = t.thread_id;
        desk.respond(&id, Party::Instance, &Response::counter(d("14.00"), "rain surcharge"), t0()).unwrap();
        let t = desk.respond(&id, Party::Requester, &Response::accept("ok"), t0()).unwrap();
        assert_eq!(t.state, ThreadState::Accepted);
        assert_eq!(t.agreed_amount, Some(d("14.00")));
        assert_eq!(t.rounds[1].message, "rain surcharge");
    }

    #[test]
    fn out_of_turn_and_expiry() {
        let desk = desk();
        let reg = registry(&["nosh.example"]);
        let id = desk.create_quote(&RequesterId::new("r1"), "nosh.example", &quote(), &reg, t0()).unwrap().thread_id;
        desk.respond(&id, Party::Instance, &Response::counter(d("14"), ""), t0()).unwrap();
        let err = desk.respond(&id, Party::Instance, &Response::counter(d("15"), ""), t0()).unwrap_err();
        assert_eq!(err.code, ErrorCode::OutOfTurn);
        let late = t0() + Duration::minutes(10);
        let err = desk.respond(&id, Party::Requester, &Response::accept(""), late).unwrap_err();
        assert_eq!(err.code, ErrorCode::Expired);
        assert_eq!(desk.get(&id).unwrap().state, ThreadState::Expired);
    }

    #[test]
    fn counter_range_relaxes_after_both_countered() {
        let desk = desk();
        let reg = registry(&["nosh.example"]);
        let id = desk.create_quote(&RequesterId::new("r1"), "nosh.example", &quote(), &reg, t0()).unwrap().thread_id;
        let err = desk.respond(&id, Party::Instance, &Response::counter(d("30"), ""), t0()).unwrap_err();
        assert_eq!(err.code, ErrorCode::ValidationError);
        desk.respond(&id, Party::Instance, &Response::counter(d("16"), ""), t0()).unwrap();
        desk.respond(&id, Party::Requester, &Response::counter(d("11"), ""), t0()).unwrap();
        desk.respond(&id, Party::Instance, &Response::counter(d("30"), "long wait"), t0()).unwrap();
        let err = desk.respond(&id, Party::Requester, &Response::counter(d("0"), ""), t0()).unwrap_err();
        assert_eq!(err.code, ErrorCode::ValidationError);
    }

    #[test]
    fn round_limit_forces_a_decision() {
        let desk = QuoteDesk::new(Arc::new(MemoryStore::new()), Arc::new(SeededIds::new(1)), 2);
        let reg = registry(&["nosh.example"]);
        let id = desk.create_quote(&RequesterId::new("r1"), "nosh.example", &quote(), &reg, t0()).unwrap().thread_id;
        desk.respond(&id, Party::Instance, &Response::counter(d("14"), ""), t0()).unwrap();
        desk.respond(&id, Party::Requester, &Response::counter(d("13"), ""), t0()).unwrap();
        let err = desk.respond(&id, Party::Instance, &Response::counter(d("13.5"), ""), t0()).unwrap_err();
        assert_eq!(err.code, ErrorCode::RoundLimit);
        let t = desk.respond(&id, Party::Instance, &Response::accept(""), t0()).unwrap();
        assert_eq!(t.rounds.len(), 4);
        assert_eq!(t.agreed_amount, Some(d("13")));
    }

    #[test]
    fn finalize_payout_and_idempotency() {
        let desk = desk();
        let reg = registry(&["nosh.example"]);
        let id = desk.create_quote(&RequesterId::new("r1"), "nosh.example", &quote(), &reg, t0()).unwrap().thread_id;
        assert_eq!(desk.finalize(&id, t0()).unwrap_err().code, ErrorCode::NotAccepted);
        desk.respond(&id, Party::Instance, &Response::counter(d("14.00"), ""), t0()).unwrap();
        desk.respond(&id, Party::Requester, &Response::accept(""), t0()).unwrap();
        let (t, delivery) = desk.finalize(&id, t0()).unwrap();
        assert_eq!(t.state, ThreadState::Finalized);
        assert_eq!(delivery.payout.to_string(), "12.60");
        assert_eq!(delivery.status, DeliveryStatus::Created);
        assert_eq!(t.delivery_id.as_ref(), Some(&delivery.delivery_id));
        assert_eq!(desk.finalize(&id, t0()).unwrap_err().code, ErrorCode::AlreadyFinalized);
        assert_eq!(desk.get(&id).unwrap().delivery_id, Some(delivery.delivery_id));
    }

    #[test]
    fn broadcast_single_winner() {
        let desk = desk();
        let reg = registry(&["a.example", "b.example", "c.example"]);
        let threads = desk
            .broadcast_quote(&RequesterId::new("r1"), &reg, &InstanceFilter::default(), &quote(), t0())
            .unwrap();
        assert_eq!(threads.len(), 3);
        let group = threads[0].broadcast_group_id.clone().unwrap();
        assert!(threads.iter().all(|t| t.broadcast_group_id.as_ref() == Some(&group)));
        desk.respond(&threads[0].thread_id, Party::Instance, &Response::accept(""), t0()).unwrap();
        desk.finalize(&threads[0].thread_id, t0()).unwrap();
        for sib in &threads[1..] {
            let t = desk.get(&sib.thread_id).unwrap();
            assert_eq!(t.state, ThreadState::Rejected);
            assert_eq!(t.rounds.last().unwrap().by, Party::System);
            let err = desk.respond(&sib.thread_id, Party::Instance, &Response::accept(""), t0()).unwrap_err();
            assert_eq!(err.code, ErrorCode::ThreadClosed);
        }
        let empty = InstanceFilter {
            language: Some("fr".into()),
            ..Default::default()
        };
        let err = desk.broadcast_quote(&RequesterId::new("r1"), &reg, &empty, &quote(), t0()).unwrap_err();
        assert_eq!(err.code, ErrorCode::NoMatchingInstance);
    }

    #[test]
    fn expiry_sweep() {
        let desk = desk();
        let reg = registry(&["nosh.example"]);
        assert_eq!(desk.expire_quotes(t0()).unwrap(), 0);
        desk.create_quote(&RequesterId::new("r1"), "nosh.example", &quote(), &reg, t0()).unwrap();
        let at = quote().expires_at;
        assert_eq!(desk.expire_quotes(at - Duration::seconds(1)).unwrap(), 0);
        assert_eq!(desk.expire_quotes(at).unwrap(), 1);
        assert_eq!(desk.expire_quotes(at).unwrap(), 0);
    }
}
