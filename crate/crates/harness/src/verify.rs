//! Offline checks over a simulator log.
//!
//! Nothing here calls into the state machine or the negotiation code; the
//! rules are restated so a bug there cannot hide itself.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use opencourier_core::delivery::{Actor, DeliveryStatus as S, EventKind as E, TripPhase as P};
use opencourier_core::ids::{CourierId, DeliveryId, GroupId, ThreadId};
use opencourier_core::instance::TaskState;
use opencourier_core::money::{Currency, Decimal};
use opencourier_core::quoting::{Party, RoundKind, ThreadState};

use crate::log::{Event, InstanceSummary, LogLine, State};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Line number, 1-based. Zero for whole-log findings.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "log: {}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub lines: usize,
    pub violations: Vec<Violation>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn edge(from: State, event: E) -> Option<State> {
    let st = |status, phase| Some(State { status, phase });
    match (from.status, from.phase, event) {
        (S::Created, P::None, E::Dispatch) => st(S::Dispatched, P::None),
        (S::Dispatched, P::None, E::Accept) => st(S::Accepted, P::None),
        (S::Dispatched, P::None, E::Reject) => st(S::Rejected, P::None),
        (S::Dispatched, P::None, E::Cancel) => st(S::Canceled, P::None),
        (S::Accepted, P::None, E::ArrivedAtPickup) => st(S::Accepted, P::ArrivedAtPickup),
        (S::Accepted, P::None | P::ArrivedAtPickup, E::Cancel) => st(S::Canceled, P::None),
        (S::Accepted, P::ArrivedAtPickup, E::MarkPickedUp) => st(S::PickedUp, P::None),
        (S::PickedUp, P::None, E::MarkOnTheWay) => st(S::PickedUp, P::OnTheWay),
        (S::PickedUp, P::OnTheWay, E::ArrivedAtDropoff) => st(S::PickedUp, P::ArrivedAtDropoff),
        (S::PickedUp, P::ArrivedAtDropoff, E::MarkDelivered) => st(S::Delivered, P::None),
        (S::PickedUp, _, E::Cancel) => st(S::Canceled, P::None),
        (S::Created | S::Dispatched | S::Accepted | S::PickedUp, _, E::ReportIssue) => Some(from),
        // Post-delivery reports leave the state alone.
        (S::Delivered, P::None, E::ReportIssue) => Some(from),
        _ => None,
    }
}

fn terminal(s: S) -> bool {
    matches!(s, S::Delivered | S::Rejected | S::Canceled)
}

/// Exact `agreed * (100 - fee) / 100`, rounded half up to minor units.
fn payout(agreed: Decimal, fee: Decimal, currency: &Currency) -> Option<Decimal> {
    let exp = currency.exponent();
    let (am, asc) = (agreed.mantissa() as i128, agreed.scale());
    let (fm, fsc) = (fee.mantissa() as i128, fee.scale());
    // agreed = am / 10^asc, fee = fm / 10^fsc
    let num = am * (100 * 10i128.checked_pow(fsc)? - fm) * 10i128.checked_pow(exp)?;
    let den = 10i128.checked_pow(asc)? * 100 * 10i128.checked_pow(fsc)?;
    if num < 0 {
        return None;
    }
    let q = (2 * num + den) / (2 * den);
    Some(Decimal::from_minor(i64::try_from(q).ok()?, exp))
}

struct Thread {
    instance: String,
    group: Option<GroupId>,
    quote: Decimal,
    range: (Decimal, Decimal),
    fee: Decimal,
    currency: Currency,
    rounds: Vec<(Party, RoundKind, Option<Decimal>)>,
    state: ThreadState,
    agreed: Option<Decimal>,
    delivery: Option<DeliveryId>,
}

impl Thread {
    fn last_offered(&self) -> Option<Decimal> {
        self.rounds
            .iter()
            .rev()
            .find(|r| matches!(r.1, RoundKind::Offer | RoundKind::Counter))
            .and_then(|r| r.2)
    }

    fn countered(&self, by: Party) -> bool {
        self.rounds.iter().any(|r| r.0 == by && r.1 == RoundKind::Counter)
    }
}

struct Delivery {
    instance: String,
    attempt: u32,
    state: State,
    courier: Option<CourierId>,
}

#[derive(Default)]
struct Checker {
    max_rounds: usize,
    threads: BTreeMap<ThreadId, Thread>,
    group_winners: BTreeMap<GroupId, ThreadId>,
    deliveries: BTreeMap<DeliveryId, Delivery>,
    /// task id to its deliveries in attempt order.
    tasks: BTreeMap<String, Vec<DeliveryId>>,
    closed: BTreeMap<String, TaskState>,
    violations: Vec<Violation>,
    line: usize,
}

impl Checker {
    fn fail(&mut self, message: impl Into<String>) {
        self.violations.push(Violation {
            line: self.line,
            message: message.into(),
        });
    }

    fn event(&mut self, ev: &Event) {
        match ev {
            Event::ScenarioStart { max_rounds, .. } => self.max_rounds = *max_rounds,
            Event::ThreadOpened {
                thread_id,
                instance,
                group_id,
                quote,
                range_from,
                range_to,
                fee_percentage,
                currency,
            } => {
                if self.threads.contains_key(thread_id) {
                    return self.fail(format!("thread {thread_id} opened twice"));
                }
                if !(range_from <= quote && quote <= range_to) {
                    self.fail(format!("thread {thread_id}: quote {quote} outside [{range_from}, {range_to}]"));
                }
                self.threads.insert(
                    thread_id.clone(),
                    Thread {
                        instance: instance.clone(),
                        group: group_id.clone(),
                        quote: *quote,
                        range: (*range_from, *range_to),
                        fee: *fee_percentage,
                        currency: currency.clone(),
                        rounds: vec![],
                        state: ThreadState::Open,
                        agreed: None,
                        delivery: None,
                    },
                );
            }
            Event::Round {
                thread_id,
                index,
                by,
                kind,
                amount,
            } => self.round(thread_id, *index, *by, *kind, *amount),
            Event::ThreadState {
                thread_id,
                state,
                agreed_amount,
            } => self.thread_state(thread_id, *state, *agreed_amount),
            Event::ThreadFinalized {
                thread_id,
                instance,
                delivery_id,
                agreed_amount,
                payout: paid,
            } => {
                let Some(t) = self.threads.get_mut(thread_id) else {
                    return self.fail(format!("unknown thread {thread_id}"));
                };
                let mut errs = vec![];
                if t.state != ThreadState::Accepted {
                    errs.push(format!("thread {thread_id} finalized from {:?}", t.state));
                }
                if t.agreed != Some(*agreed_amount) {
                    errs.push(format!("thread {thread_id}: finalized amount {agreed_amount} is not the agreed amount"));
                }
                if &t.instance != instance {
                    errs.push(format!("thread {thread_id} finalized on the wrong instance"));
                }
                match payout(*agreed_amount, t.fee, &t.currency) {
                    Some(p) if p == *paid => {}
                    expected => errs.push(format!(
                        "thread {thread_id}: payout {paid}, expected {}",
                        expected.map_or("nothing".into(), |p| p.to_string())
                    )),
                }
                t.state = ThreadState::Finalized;
                t.delivery = Some(delivery_id.clone());
                for e in errs {
                    self.fail(e);
                }
            }
            Event::DeliveryCreated {
                instance,
                delivery_id,
                task_id,
                attempt,
                thread_id,
            } => self.delivery_created(instance, delivery_id, task_id.as_str(), *attempt, thread_id.as_ref()),
            Event::Transition {
                instance,
                delivery_id,
                event,
                actor,
                courier_id,
                from,
                to,
            } => self.transition(instance, delivery_id, *event, actor, courier_id.as_ref(), *from, *to),
            Event::TaskClosed {
                task_id,
                state,
                attempts,
                ..
            } => self.task_closed(task_id.as_str(), *state, *attempts),
            Event::CourierMoved { lon, lat, .. } => {
                if !(-180.0..=180.0).contains(lon) || !(-90.0..=90.0).contains(lat) {
                    self.fail(format!("courier moved to impossible ({lon}, {lat})"));
                }
            }
            Event::ActionFailed { .. } => {}
            Event::ScenarioEnd { summary } => self.summary(summary),
        }
    }

    fn round(&mut self, id: &ThreadId, index: usize, by: Party, kind: RoundKind, amount: Option<Decimal>) {
        let max = self.max_rounds;
        let Some(t) = self.threads.get_mut(id) else {
            return self.fail(format!("round on unknown thread {id}"));
        };
        let mut errs = vec![];
        if index != t.rounds.len() {
            errs.push(format!("thread {id}: round {index} out of sequence"));
        }
        if t.state != ThreadState::Open {
            errs.push(format!("thread {id}: round after the thread closed"));
        }
        let negotiated: Vec<Party> = t.rounds.iter().map(|r| r.0).filter(|p| *p != Party::System).collect();
        if t.rounds.is_empty() {
            if (by, kind) != (Party::Requester, RoundKind::Offer) || amount != Some(t.quote) {
                errs.push(format!("thread {id}: does not open with the requester's OFFER of the quote"));
            }
        } else if kind == RoundKind::Offer {
            errs.push(format!("thread {id}: OFFER after the opening round"));
        }
        if by != Party::System {
            if negotiated.last() == Some(&by) {
                errs.push(format!("thread {id}: {by:?} moved twice in a row"));
            }
            let position = negotiated.len() + 1;
            if position > 2 * max {
                errs.push(format!("thread {id}: round {position} exceeds the limit of {}", 2 * max));
            } else if kind == RoundKind::Counter && position == 2 * max {
                errs.push(format!("thread {id}: COUNTER in the final round"));
            }
        } else if kind != RoundKind::Reject {
            errs.push(format!("thread {id}: SYSTEM may only REJECT"));
        }
        match kind {
            RoundKind::Counter => match amount {
                None => errs.push(format!("thread {id}: COUNTER without an amount")),
                Some(a) => {
                    let free = t.countered(Party::Requester) && t.countered(Party::Instance);
                    if !free && (a < t.range.0 || a > t.range.1) {
                        errs.push(format!("thread {id}: COUNTER {a} outside the quoted range"));
                    }
                }
            },
            RoundKind::Accept if amount.is_some() && amount != t.last_offered() => {
                errs.push(format!("thread {id}: ACCEPT amount differs from the last offer"));
            }
            _ => {}
        }
        t.rounds.push((by, kind, amount));
        for e in errs {
            self.fail(e);
        }
    }

    fn thread_state(&mut self, id: &ThreadId, state: ThreadState, agreed: Option<Decimal>) {
        let Some(t) = self.threads.get_mut(id) else {
            return self.fail(format!("state change on unknown thread {id}"));
        };
        let mut errs = vec![];
        if t.state != ThreadState::Open {
            errs.push(format!("thread {id}: {:?} after {:?}", state, t.state));
        }
        let last = t.rounds.last().map(|r| r.1);
        match state {
            ThreadState::Accepted => {
                if last != Some(RoundKind::Accept) {
                    errs.push(format!("thread {id}: ACCEPTED without an ACCEPT round"));
                }
                let offered = t.rounds[..t.rounds.len().saturating_sub(1)]
                    .iter()
                    .rev()
                    .find(|r| matches!(r.1, RoundKind::Offer | RoundKind::Counter))
                    .and_then(|r| r.2);
                if agreed.is_none() || agreed != offered {
                    errs.push(format!("thread {id}: agreed amount is not the last offer"));
                }
                if let Some(g) = &t.group {
                    match self.group_winners.get(g) {
                        Some(w) if w != id => errs.push(format!("group {g}: second winner {id} after {w}")),
                        _ => {
                            self.group_winners.insert(g.clone(), id.clone());
                        }
                    }
                }
                t.agreed = agreed;
            }
            ThreadState::Rejected => {
                if last != Some(RoundKind::Reject) {
                    errs.push(format!("thread {id}: REJECTED without a REJECT round"));
                }
            }
            ThreadState::Expired => {}
            ThreadState::Open | ThreadState::Finalized => errs.push(format!("thread {id}: bad state change to {state:?}")),
        }
        t.state = state;
        for e in errs {
            self.fail(e);
        }
    }

    fn delivery_created(&mut self, instance: &str, id: &DeliveryId, task: &str, attempt: u32, thread: Option<&ThreadId>) {
        if self.deliveries.contains_key(id) {
            return self.fail(format!("delivery {id} created twice"));
        }
        let prior = self.tasks.get(task).cloned().unwrap_or_default();
        if attempt as usize != prior.len() + 1 {
            self.fail(format!("delivery {id}: attempt {attempt} but task {task} has {} earlier", prior.len()));
        }
        if let Some(state) = self.closed.get(task) {
            self.fail(format!("delivery {id}: task {task} already closed as {state:?}"));
        }
        let mut errs = vec![];
        if attempt == 1 {
            match thread.and_then(|t| self.threads.get(t).map(|x| (t, x))) {
                None => errs.push(format!("delivery {id}: first attempt without a known thread")),
                Some((t, x)) => {
                    if x.state != ThreadState::Finalized || x.delivery.as_ref() != Some(id) {
                        errs.push(format!("delivery {id}: thread {t} was not finalized into it"));
                    }
                    if x.instance != instance {
                        errs.push(format!("delivery {id}: created on another instance than thread {t}"));
                    }
                }
            }
        } else if let Some(prev) = prior.last().and_then(|p| self.deliveries.get(p)) {
            if prev.state.status != S::Rejected {
                errs.push(format!("delivery {id}: attempt {attempt} follows an attempt in {}", prev.state));
            }
        }
        for e in errs {
            self.fail(e);
        }
        self.tasks.entry(task.to_owned()).or_default().push(id.clone());
        self.deliveries.insert(
            id.clone(),
            Delivery {
                instance: instance.to_owned(),
                attempt,
                state: State::CREATED,
                courier: None,
            },
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn transition(
        &mut self,
        instance: &str,
        id: &DeliveryId,
        event: E,
        actor: &Actor,
        courier: Option<&CourierId>,
        from: State,
        to: State,
    ) {
        let Some(d) = self.deliveries.get_mut(id) else {
            return self.fail(format!("transition on unknown delivery {id}"));
        };
        let mut errs = vec![];
        if d.instance != instance {
            errs.push(format!("delivery {id}: transition logged on {instance}"));
        }
        if from != d.state {
            errs.push(format!("delivery {id}: from {from} but it is {}", d.state));
        }
        match edge(from, event) {
            Some(x) if x == to => {}
            _ => errs.push(format!("illegal edge {from} --{}--> {to}", event.as_str())),
        }
        let assigned = |c: &CourierId| d.courier.as_ref() == Some(c);
        let actor_ok = match (actor, event) {
            (Actor::System | Actor::Admin, E::Dispatch) => courier.is_some(),
            (Actor::Courier(c), E::Dispatch) => courier.is_none_or(|x| x == c),
            (Actor::System | Actor::Admin, E::Cancel | E::ReportIssue) => true,
            (Actor::Courier(c), E::Cancel) => assigned(c) && from.status == S::Accepted,
            (Actor::Courier(c), _) => assigned(c),
            _ => false,
        };
        if !actor_ok {
            errs.push(format!("delivery {id}: {actor:?} may not {}", event.as_str()));
        }
        if event == E::Dispatch {
            d.courier = courier.cloned().or_else(|| actor.courier_id().cloned());
        }
        d.state = to;
        for e in errs {
            self.fail(e);
        }
    }

    fn task_closed(&mut self, task: &str, state: TaskState, attempts: u32) {
        let ids = self.tasks.get(task).cloned().unwrap_or_default();
        if ids.is_empty() {
            return self.fail(format!("unknown task {task} closed"));
        }
        if self.closed.insert(task.to_owned(), state).is_some() {
            self.fail(format!("task {task} closed twice"));
        }
        if attempts as usize != ids.len() {
            self.fail(format!("task {task}: {attempts} attempts claimed, {} logged", ids.len()));
        }
        let last = &self.deliveries[ids.last().expect("non-empty")];
        let ok = match state {
            TaskState::Completed => last.state.status == S::Delivered,
            TaskState::Canceled => terminal(last.state.status) && last.state.status != S::Delivered,
            TaskState::Open => false,
        };
        if !ok {
            self.fail(format!("task {task} closed as {state:?} while attempt {} is {}", last.attempt, last.state));
        }
    }

    fn summary(&mut self, summary: &[InstanceSummary]) {
        let mut instances: BTreeSet<&str> = self.deliveries.values().map(|d| d.instance.as_str()).collect();
        instances.extend(self.threads.values().map(|t| t.instance.as_str()));
        let mut errs = vec![];
        for s in summary {
            let finalized = self
                .threads
                .values()
                .filter(|t| t.instance == s.instance && t.state == ThreadState::Finalized)
                .count() as u64;
            let tasks: Vec<&String> = self
                .tasks
                .iter()
                .filter(|(_, ds)| self.deliveries[&ds[0]].instance == s.instance)
                .map(|(t, _)| t)
                .collect();
            let count = |st: TaskState| tasks.iter().filter(|t| self.closed.get(t.as_str()) == Some(&st)).count() as u64;
            let delivered = count(TaskState::Completed);
            let canceled = count(TaskState::Canceled);
            let open = tasks.len() as u64 - delivered - canceled;
            let actual = (finalized, tasks.len() as u64, delivered, canceled, open);
            let claimed = (s.finalized_threads, s.tasks, s.delivered, s.canceled, s.in_flight);
            if actual != claimed {
                errs.push(format!(
                    "{}: summary (finalized, tasks, delivered, canceled, inFlight) = {claimed:?}, log says {actual:?}",
                    s.instance
                ));
            }
            if s.tasks != s.delivered + s.canceled + s.in_flight {
                errs.push(format!("{}: tasks are not conserved", s.instance));
            }
            if s.finalized_threads != s.tasks {
                errs.push(format!("{}: {} finalized threads but {} tasks", s.instance, s.finalized_threads, s.tasks));
            }
            if s.metrics.deliveries_completed != delivered {
                errs.push(format!(
                    "{}: metrics count {} deliveries, log {delivered}",
                    s.instance, s.metrics.deliveries_completed
                ));
            }
            instances.remove(s.instance.as_str());
        }
        for i in instances {
            errs.push(format!("{i} missing from the summary"));
        }
        for e in errs {
            self.fail(e);
        }
    }
}

/// Checks a JSON-lines log.
pub fn verify_text(text: &str) -> Report {
    let mut c = Checker::default();
    let mut lines = vec![];
    for (i, raw) in text.lines().enumerate() {
        c.line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogLine>(raw) {
            Ok(l) => lines.push((i + 1, l)),
            Err(e) => c.fail(format!("unparseable: {e}")),
        }
    }
    let count = lines.len();
    let mut prev_at = None;
    for (k, (n, l)) in lines.iter().enumerate() {
        c.line = *n;
        if l.seq != k as u64 {
            c.fail(format!("seq {} where {k} was expected", l.seq));
        }
        if prev_at.is_some_and(|p| l.at < p) {
            c.fail("time runs backwards");
        }
        prev_at = Some(l.at);
        let is_start = matches!(l.event, Event::ScenarioStart { .. });
        let is_end = matches!(l.event, Event::ScenarioEnd { .. });
        if is_start != (k == 0) {
            c.fail("SCENARIO_START must be the first line and only the first");
        }
        if is_end != (k + 1 == count) {
            c.fail("SCENARIO_END must be the last line and only the last");
        }
        c.event(&l.event);
    }
    c.line = 0;
    if count == 0 {
        c.fail("empty log");
    }
    Report {
        lines: count,
        violations: c.violations,
    }
}

pub fn verify_lines(lines: &[LogLine]) -> Report {
    verify_text(&crate::log::render(lines))
}
