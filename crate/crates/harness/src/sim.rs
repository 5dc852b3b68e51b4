//! The virtual-time event loop.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use opencourier_core::clock::{Clock, ManualClock};
use opencourier_core::delivery::{replay, Delivery, DeliveryStatus, EventKind};
use opencourier_core::disclosure::TimeRange;
use opencourier_core::federation::Federation;
use opencourier_core::geo::LonLat;
use opencourier_core::ids::{CourierId, DeliveryId, IdGen, RequesterId, Role, SeededIds, ThreadId};
use opencourier_core::instance::{Instance, InstanceConfig, TaskState};
use opencourier_core::quoting::{thread_payout, DeliveryQuote, NegotiationThread, Party, QuoteDesk, Response, RoundKind, ThreadState};
use opencourier_core::registry::{InstanceFilter, InstanceRecord, Registry, RegistryService, SourceKind};
use opencourier_core::store::{MemoryStore, RecordKey, Store, VersionedRecord};
use opencourier_core::{sample, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

use crate::log::{render, Event, InstanceSummary, LogLine, State};
use crate::scenario::{RequesterAction, Scenario};

/// The requester identity used for every scripted action.
pub const REQUESTER: &str = "sim-requester";

/// Mixed into the seed so id generation and behaviour draws use
/// independent streams.
const ID_STREAM: u64 = 0x6f70_656e_636f_7572;

#[derive(Debug, Clone)]
enum Action {
    Requester(usize),
    InstanceTurn(ThreadId),
    RequesterTurn(ThreadId),
    Finalize(ThreadId),
    Decide { domain: String, delivery: DeliveryId },
    Step { domain: String, delivery: DeliveryId, kind: EventKind },
    Heartbeat { domain: String, courier: CourierId },
    Move(usize),
    Tick,
}

impl Action {
    fn label(&self) -> String {
        match self {
            Action::Requester(i) => format!("requesterScript[{i}]"),
            Action::InstanceTurn(t) => format!("instance respond {t}"),
            Action::RequesterTurn(t) => format!("requester respond {t}"),
            Action::Finalize(t) => format!("finalize {t}"),
            Action::Decide { delivery, .. } => format!("courier decide {delivery}"),
            Action::Step { delivery, kind, .. } => format!("{} {delivery}", kind.as_str()),
            Action::Heartbeat { courier, .. } => format!("heartbeat {courier}"),
            Action::Move(i) => format!("courierScript.moves[{i}]"),
            Action::Tick => "tick".into(),
        }
    }
}

#[derive(Debug, Default)]
struct Seen {
    threads: BTreeMap<ThreadId, (usize, ThreadState)>,
    deliveries: BTreeMap<DeliveryId, (usize, State)>,
    tasks: BTreeMap<String, TaskState>,
}

/// Result of one run.
pub struct RunOutput {
    pub lines: Vec<LogLine>,
    pub summary: Vec<InstanceSummary>,
    pub threads: Vec<NegotiationThread>,
    pub deliveries: BTreeMap<String, Vec<Delivery>>,
}

impl RunOutput {
    pub fn log_text(&self) -> String {
        render(&self.lines)
    }
}

struct Sim<'a> {
    sc: &'a Scenario,
    clock: Arc<ManualClock>,
    fed: Federation,
    rng: ChaCha20Rng,
    queue: BinaryHeap<Reverse<(i64, u64, u64)>>,
    actions: BTreeMap<u64, Action>,
    next_seq: u64,
    lines: Vec<LogLine>,
    seen: Seen,
    /// Requester refs to their threads.
    refs: BTreeMap<String, Vec<ThreadId>>,
    /// Per instance: courier name to id, and id to last known position.
    names: BTreeMap<String, BTreeMap<String, CourierId>>,
    positions: BTreeMap<(String, CourierId), LonLat>,
    requester: RequesterId,
    writes: Arc<AtomicU64>,
    observed: u64,
}

/// Memory store that counts successful writes, so the loop can skip
/// observation when nothing changed.
struct Counting {
    inner: MemoryStore,
    writes: Arc<AtomicU64>,
}

impl Store for Counting {
    fn get(&self, key: &RecordKey) -> Result<Option<VersionedRecord>> {
        self.inner.get(key)
    }

    fn put(&self, key: &RecordKey, payload: Vec<u8>, expected_version: u64) -> Result<u64> {
        let v = self.inner.put(key, payload, expected_version)?;
        self.writes.fetch_add(1, AtomicOrdering::Relaxed);
        Ok(v)
    }

    fn scan(&self, kind: &str, predicate: &dyn Fn(&VersionedRecord) -> bool) -> Result<Vec<VersionedRecord>> {
        self.inner.scan(kind, predicate)
    }
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Result<Self> {
        let writes = Arc::new(AtomicU64::new(0));
        let store = || -> Arc<dyn Store> {
            Arc::new(Counting {
                inner: MemoryStore::new(),
                writes: writes.clone(),
            })
        };
        let clock = Arc::new(ManualClock::new(sc.start));
        let ids: Arc<dyn IdGen> = Arc::new(SeededIds::new(sc.seed ^ ID_STREAM));
        let mut registry = Registry::empty(SourceKind::Service);
        for spec in &sc.instances {
            registry.register_instance(InstanceRecord {
                languages: spec.languages.clone(),
                location: spec.territory.clone().into(),
                ..sample::instance_record(&spec.domain)
            })?;
        }
        let desk = QuoteDesk::new(store(), ids.clone(), sc.max_rounds);
        let mut fed = Federation::new(Arc::new(RegistryService::new(registry, None)), desk);
        for spec in &sc.instances {
            let cfg = InstanceConfig {
                domain: spec.domain.clone(),
                currency: spec.currency.clone(),
                territory: spec.territory.clone(),
                matching: spec.matching.clone(),
            };
            let inst = Instance::open(cfg, store(), ids.clone())?;
            inst.set_policy(spec.policy.clone(), sc.start)?;
            fed.host(Arc::new(inst));
        }
        Ok(Self {
            sc,
            clock,
            fed,
            rng: ChaCha20Rng::seed_from_u64(sc.seed),
            queue: BinaryHeap::new(),
            actions: BTreeMap::new(),
            next_seq: 0,
            lines: vec![],
            seen: Seen::default(),
            refs: BTreeMap::new(),
            names: BTreeMap::new(),
            positions: BTreeMap::new(),
            requester: RequesterId::new(REQUESTER),
            writes,
            observed: u64::MAX,
        })
    }

    fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn offset(&self) -> i64 {
        (self.now() - self.sc.start).num_seconds()
    }

    fn end(&self) -> DateTime<Utc> {
        self.sc.start + Duration::seconds(self.sc.horizon_secs)
    }

    /// Queues `a` at virtual offset `at`. Same-time actions run in a
    /// seeded random order, except instance turns (see `lowest_thread_first`).
    fn schedule(&mut self, at: i64, a: Action) {
        if at > self.sc.horizon_secs {
            return;
        }
        let tiebreak = self.rng.random::<u64>();
        let seq = self.next_seq;
        self.next_seq += 1;
        self.actions.insert(seq, a);
        self.queue.push(Reverse((at, tiebreak, seq)));
    }

    fn after(&mut self, delay: i64, a: Action) {
        let at = self.offset() + delay;
        self.schedule(at, a);
    }

    fn emit(&mut self, event: Event) {
        let seq = self.lines.len() as u64;
        let at = self.now();
        self.lines.push(LogLine { seq, at, event });
    }

    fn instance(&self, domain: &str) -> Result<Arc<Instance>> {
        Ok(self.fed.instance(domain)?.clone())
    }

    fn setup(&mut self) -> Result<()> {
        self.emit(Event::ScenarioStart {
            seed: self.sc.seed,
            max_rounds: self.sc.max_rounds,
            instances: self.sc.instances.iter().map(|i| i.domain.clone()).collect(),
        });
        for spec in &self.sc.instances {
            let inst = self.instance(&spec.domain)?;
            let mut names = BTreeMap::new();
            for c in &spec.fleet {
                let rec = inst.enroll_courier(&c.name, self.sc.start + Duration::seconds(c.enrolled_offset_secs))?;
                let id = rec.courier_id;
                if !c.preferences.is_empty() {
                    inst.patch_preferences(&id, &c.preferences, None)?;
                }
                inst.set_position(&id, c.position, self.sc.start)?;
                inst.set_availability(&id, c.availability)?;
                self.positions.insert((spec.domain.clone(), id.clone()), c.position);
                names.insert(c.name.clone(), id);
            }
            self.names.insert(spec.domain.clone(), names);
        }
        for (domain, names) in self.names.clone() {
            for id in names.values() {
                self.schedule(
                    self.sc.courier_script.heartbeat_secs,
                    Action::Heartbeat {
                        domain: domain.clone(),
                        courier: id.clone(),
                    },
                );
            }
        }
        for (i, a) in self.sc.requester_script.iter().enumerate() {
            self.schedule(a.at(), Action::Requester(i));
        }
        for (i, m) in self.sc.courier_script.moves.iter().enumerate() {
            self.schedule(m.at, Action::Move(i));
        }
        self.schedule(self.sc.tick_secs, Action::Tick);
        Ok(())
    }

    fn quote_at(&self, overrides: &serde_json::Map<String, Value>) -> Result<DeliveryQuote> {
        let mut v = serde_json::to_value(sample::quote(self.now())).map_err(|e| Error::internal(e.to_string()))?;
        if let Value::Object(m) = &mut v {
            for (k, x) in overrides {
                m.insert(k.clone(), x.clone());
            }
        }
        serde_json::from_value(v).map_err(|e| Error::validation(format!("quote overrides: {e}")))
    }

    fn run_requester(&mut self, i: usize) -> Result<()> {
        let now = self.now();
        match self.sc.requester_script[i].clone() {
            RequesterAction::Quote {
                reference,
                instance,
                overrides,
                ..
            } => {
                let q = self.quote_at(&overrides)?;
                let reg = self.fed.registry.snapshot();
                let t = self.fed.desk.create_quote(&self.requester, &instance, &q, &reg, now)?;
                self.refs.insert(reference, vec![t.thread_id]);
            }
            RequesterAction::Broadcast {
                reference,
                filter,
                overrides,
                ..
            } => {
                let q = self.quote_at(&overrides)?;
                let reg = self.fed.registry.snapshot();
                let f = InstanceFilter {
                    point: filter.lon.zip(filter.lat).map(|(lon, lat)| LonLat::new(lon, lat)),
                    region: None,
                    language: filter.language,
                    text: filter.q,
                };
                let threads = self.fed.desk.broadcast_quote(&self.requester, &reg, &f, &q, now)?;
                self.refs.insert(reference, threads.into_iter().map(|t| t.thread_id).collect());
            }
            RequesterAction::Respond {
                reference,
                instance,
                kind,
                amount,
                message,
                ..
            } => {
                let ids = self.refs.get(&reference).cloned().unwrap_or_default();
                let mut target = None;
                for id in ids {
                    let t = self.fed.desk.get(&id)?;
                    if instance.as_ref().is_none_or(|d| *d == t.instance_domain) {
                        target = Some(id);
                        break;
                    }
                }
                let id = target.ok_or_else(|| Error::not_found("thread for ref", &reference))?;
                let r = Response { kind, message, amount };
                self.fed.desk.respond(&id, Party::Requester, &r, now)?;
            }
        }
        Ok(())
    }

    fn instance_turn(&mut self, id: &ThreadId) -> Result<()> {
        let t = self.fed.desk.get(id)?;
        if t.state != ThreadState::Open || t.rounds.last().map(|r| r.by) != Some(Party::Requester) {
            return Ok(());
        }
        let spec = self
            .sc
            .instances
            .iter()
            .find(|s| s.domain == t.instance_domain)
            .expect("threads only target scenario instances");
        let offered = t.last_offered();
        let counter_allowed = t.rounds.len() + 1 < 2 * t.max_rounds;
        let r = match (&spec.responder.min_amount, offered) {
            _ if spec.responder.reject_all => Response::reject("declined"),
            (None, _) => Response::accept("ok"),
            (Some(min), Some(o)) if o >= *min => Response::accept("ok"),
            (Some(min), _) if counter_allowed => Response::counter(*min, "our minimum"),
            _ => Response::reject("below our minimum"),
        };
        self.fed.desk.respond(id, Party::Instance, &r, self.now())?;
        Ok(())
    }

    fn requester_turn(&mut self, id: &ThreadId) -> Result<()> {
        let t = self.fed.desk.get(id)?;
        if t.state != ThreadState::Open || t.rounds.last().map(|r| r.by) != Some(Party::Instance) {
            return Ok(());
        }
        self.fed.desk.respond(id, Party::Requester, &Response::accept("ok"), self.now())?;
        Ok(())
    }

    fn decide(&mut self, domain: &str, id: &DeliveryId) -> Result<()> {
        let inst = self.instance(domain)?;
        let d = inst.delivery(id)?;
        let Some(courier) = d.courier_id.clone() else {
            return Ok(());
        };
        if d.status != DeliveryStatus::Dispatched {
            return Ok(());
        }
        let p = self.sc.courier_script.accept_probability;
        let accept = self.rng.random::<f64>() < p;
        let kind = if accept { EventKind::Accept } else { EventKind::Reject };
        inst.courier_event(&courier, id, kind, self.now())?;
        Ok(())
    }

    fn step(&mut self, domain: &str, id: &DeliveryId, kind: EventKind) -> Result<()> {
        let inst = self.instance(domain)?;
        let d = inst.delivery(id)?;
        let Some(courier) = d.courier_id.clone() else {
            return Ok(());
        };
        if d.status.is_terminal() {
            return Ok(());
        }
        let after = inst.courier_event(&courier, id, kind, self.now())?;
        if after.status == DeliveryStatus::Delivered {
            self.observe()?;
            let p = after.dropoff_location.point();
            inst.set_position(&courier, p, self.now())?;
            self.positions.insert((domain.to_owned(), courier.clone()), p);
            self.emit(Event::CourierMoved {
                instance: domain.to_owned(),
                courier_id: courier,
                lon: p.lon,
                lat: p.lat,
            });
        }
        Ok(())
    }

    fn heartbeat(&mut self, domain: &str, courier: &CourierId) -> Result<()> {
        if let Some(p) = self.positions.get(&(domain.to_owned(), courier.clone())).copied() {
            self.instance(domain)?.set_position(courier, p, self.now())?;
        }
        self.after(
            self.sc.courier_script.heartbeat_secs,
            Action::Heartbeat {
                domain: domain.to_owned(),
                courier: courier.clone(),
            },
        );
        Ok(())
    }

    fn do_move(&mut self, i: usize) -> Result<()> {
        let m = self.sc.courier_script.moves[i].clone();
        let id = self.names[&m.instance][&m.courier].clone();
        let p = LonLat::new(m.lon, m.lat);
        self.instance(&m.instance)?.set_position(&id, p, self.now())?;
        self.positions.insert((m.instance.clone(), id.clone()), p);
        self.emit(Event::CourierMoved {
            instance: m.instance,
            courier_id: id,
            lon: p.lon,
            lat: p.lat,
        });
        Ok(())
    }

    fn tick(&mut self) -> Result<()> {
        let now = self.now();
        self.fed.desk.expire_quotes(now)?;
        for inst in self.fed.instances() {
            inst.dispatch_pending(now)?;
        }
        self.after(self.sc.tick_secs, Action::Tick);
        Ok(())
    }

    fn perform(&mut self, a: &Action) -> Result<()> {
        match a {
            Action::Requester(i) => self.run_requester(*i),
            Action::InstanceTurn(t) => self.instance_turn(t),
            Action::RequesterTurn(t) => self.requester_turn(t),
            Action::Finalize(t) => self.fed.finalize(t, self.now()).map(|_| ()),
            Action::Decide { domain, delivery } => self.decide(domain, delivery),
            Action::Step { domain, delivery, kind } => self.step(domain, delivery, *kind),
            Action::Heartbeat { domain, courier } => self.heartbeat(domain, courier),
            Action::Move(i) => self.do_move(*i),
            Action::Tick => self.tick(),
        }
    }

    /// Logs everything that changed since the last call and schedules the
    /// reactions it calls for.
    fn observe(&mut self) -> Result<()> {
        self.observed = self.writes.load(AtomicOrdering::Relaxed);
        let threads = self.fed.desk.threads(|_| true)?;
        for t in threads {
            let (known_rounds, known_state) = match self.seen.threads.get(&t.thread_id) {
                Some(s) => *s,
                None => {
                    self.emit(Event::ThreadOpened {
                        thread_id: t.thread_id.clone(),
                        instance: t.instance_domain.clone(),
                        group_id: t.broadcast_group_id.clone(),
                        quote: t.quote.quote,
                        range_from: t.quote.quote_range_from,
                        range_to: t.quote.quote_range_to,
                        fee_percentage: t.quote.fee_percentage,
                        currency: t.quote.currency.clone(),
                    });
                    (0, ThreadState::Open)
                }
            };
            for (index, r) in t.rounds.iter().enumerate().skip(known_rounds) {
                self.emit(Event::Round {
                    thread_id: t.thread_id.clone(),
                    index,
                    by: r.by,
                    kind: r.kind,
                    amount: r.amount,
                });
                if t.state == ThreadState::Open && index + 1 == t.rounds.len() {
                    match (r.by, r.kind) {
                        (Party::Requester, _) => {
                            let delay = self.responder_delay(&t.instance_domain);
                            self.after(delay, Action::InstanceTurn(t.thread_id.clone()));
                        }
                        (Party::Instance, RoundKind::Counter) if self.sc.requester.accept_counters => {
                            self.after(self.sc.requester.response_delay_secs, Action::RequesterTurn(t.thread_id.clone()));
                        }
                        _ => {}
                    }
                }
            }
            let mut state = known_state;
            if t.state != state && state == ThreadState::Open && t.state == ThreadState::Finalized {
                // Accepted and finalized between two observations.
                self.emit(Event::ThreadState {
                    thread_id: t.thread_id.clone(),
                    state: ThreadState::Accepted,
                    agreed_amount: t.agreed_amount,
                });
                state = ThreadState::Accepted;
            }
            if t.state != state {
                if t.state == ThreadState::Finalized {
                    self.emit(Event::ThreadFinalized {
                        thread_id: t.thread_id.clone(),
                        instance: t.instance_domain.clone(),
                        delivery_id: t.delivery_id.clone().expect("finalized threads carry a delivery"),
                        agreed_amount: t.agreed_amount.expect("finalized threads carry an amount"),
                        payout: thread_payout(&t)?,
                    });
                } else {
                    self.emit(Event::ThreadState {
                        thread_id: t.thread_id.clone(),
                        state: t.state,
                        agreed_amount: t.agreed_amount,
                    });
                    if t.state == ThreadState::Accepted {
                        self.after(self.sc.requester.finalize_delay_secs, Action::Finalize(t.thread_id.clone()));
                    }
                }
            }
            self.seen.threads.insert(t.thread_id.clone(), (t.rounds.len(), t.state));
        }

        let domains: Vec<String> = self.sc.instances.iter().map(|i| i.domain.clone()).collect();
        for domain in domains {
            let inst = self.instance(&domain)?;
            let mut ds = inst.deliveries()?;
            ds.sort_by(|a, b| {
                (a.created_at, a.attempt, &a.delivery_id).cmp(&(b.created_at, b.attempt, &b.delivery_id))
            });
            for d in ds {
                let (known, mut state) = match self.seen.deliveries.get(&d.delivery_id) {
                    Some(s) => *s,
                    None => {
                        self.emit(Event::DeliveryCreated {
                            instance: domain.clone(),
                            delivery_id: d.delivery_id.clone(),
                            task_id: d.task_id.clone(),
                            attempt: d.attempt,
                            thread_id: d.quote_thread_id.clone().filter(|_| d.attempt == 1),
                        });
                        (0, State::CREATED)
                    }
                };
                for h in d.history.iter().skip(known) {
                    let to = if h.event == EventKind::ReportIssue {
                        state
                    } else {
                        let (status, phase) = opencourier_core::delivery::next_state(state.status, state.phase, h.event)
                            .ok_or_else(|| Error::internal(format!("stored history of {} is not replayable", d.delivery_id)))?;
                        State { status, phase }
                    };
                    let courier_id = match h.event {
                        EventKind::Dispatch => d.courier_id.clone(),
                        _ => None,
                    };
                    self.emit(Event::Transition {
                        instance: domain.clone(),
                        delivery_id: d.delivery_id.clone(),
                        event: h.event,
                        actor: h.actor.clone(),
                        courier_id,
                        from: state,
                        to,
                    });
                    self.react(&domain, &d.delivery_id, h.event);
                    state = to;
                }
                self.seen.deliveries.insert(d.delivery_id.clone(), (d.history.len(), state));
            }
            for t in inst.tasks()? {
                let prev = self.seen.tasks.insert(t.task_id.as_str().to_owned(), t.state);
                if t.state != TaskState::Open && prev != Some(t.state) {
                    self.emit(Event::TaskClosed {
                        instance: domain.clone(),
                        task_id: t.task_id.clone(),
                        state: t.state,
                        attempts: t.attempts.len() as u32,
                    });
                }
            }
        }
        Ok(())
    }

    fn responder_delay(&self, domain: &str) -> i64 {
        self.sc
            .instances
            .iter()
            .find(|s| s.domain == domain)
            .map_or(0, |s| s.responder.delay_secs)
    }

    fn react(&mut self, domain: &str, id: &DeliveryId, event: EventKind) {
        let next = match event {
            EventKind::Dispatch => {
                self.after(
                    self.sc.courier_script.decide_secs,
                    Action::Decide {
                        domain: domain.to_owned(),
                        delivery: id.clone(),
                    },
                );
                return;
            }
            EventKind::Accept => EventKind::ArrivedAtPickup,
            EventKind::ArrivedAtPickup => EventKind::MarkPickedUp,
            EventKind::MarkPickedUp => EventKind::MarkOnTheWay,
            EventKind::MarkOnTheWay => EventKind::ArrivedAtDropoff,
            EventKind::ArrivedAtDropoff => EventKind::MarkDelivered,
            _ => return,
        };
        self.after(
            self.sc.courier_script.step_secs,
            Action::Step {
                domain: domain.to_owned(),
                delivery: id.clone(),
                kind: next,
            },
        );
    }

    /// Instance turns due at the same moment run in thread id order, so the
    /// lowest thread id wins a broadcast whose siblings all accept at once.
    fn lowest_thread_first(&mut self, at: i64, seq: u64) {
        let Some(Action::InstanceTurn(mine)) = self.actions.get(&seq).cloned() else {
            return;
        };
        let lowest = self
            .queue
            .iter()
            .filter(|Reverse(k)| k.0 == at)
            .filter_map(|Reverse(k)| match self.actions.get(&k.2) {
                Some(Action::InstanceTurn(t)) if *t < mine => Some((t.clone(), k.2)),
                _ => None,
            })
            .min();
        if let Some((_, other)) = lowest {
            let a = self.actions.remove(&seq).expect("queued actions are stored");
            let b = self.actions.insert(other, a).expect("queued actions are stored");
            self.actions.insert(seq, b);
        }
    }

    fn run(mut self) -> Result<RunOutput> {
        self.setup()?;
        self.observe()?;
        while let Some(Reverse((at, _, seq))) = self.queue.pop() {
            self.lowest_thread_first(at, seq);
            let action = self.actions.remove(&seq).expect("queued actions are stored");
            self.clock.set(self.sc.start + Duration::seconds(at));
            let before = self.writes.load(AtomicOrdering::Relaxed);
            if let Err(e) = self.perform(&action) {
                self.emit(Event::ActionFailed {
                    action: action.label(),
                    code: e.code.as_str().to_owned(),
                    message: e.message,
                });
            }
            let writes = self.writes.load(AtomicOrdering::Relaxed);
            if matches!(action, Action::Heartbeat { .. }) {
                // Position refreshes never change threads or deliveries.
                if self.observed == before {
                    self.observed = writes;
                }
            } else if writes != self.observed {
                self.observe()?;
            }
        }
        self.clock.set(self.end());
        let summary = self.summarize()?;
        self.emit(Event::ScenarioEnd {
            summary: summary.clone(),
        });

        let mut deliveries = BTreeMap::new();
        for inst in self.fed.instances() {
            let ds = inst.deliveries()?;
            for d in &ds {
                let replayed = replay(&d.history)
                    .map_err(|i| Error::internal(format!("{}: history entry {i} does not replay", d.delivery_id)))?;
                if replayed != (d.status, d.trip_phase) {
                    return Err(Error::internal(format!("{}: replay disagrees with stored state", d.delivery_id)));
                }
            }
            deliveries.insert(inst.domain().to_owned(), ds);
        }
        Ok(RunOutput {
            threads: self.fed.desk.threads(|_| true)?,
            lines: self.lines,
            summary,
            deliveries,
        })
    }

    fn summarize(&self) -> Result<Vec<InstanceSummary>> {
        let threads = self.fed.desk.threads(|t| t.state == ThreadState::Finalized)?;
        let range = TimeRange::new(self.sc.start, self.end() + Duration::seconds(1))?;
        let mut out = vec![];
        for inst in self.fed.instances() {
            let tasks = inst.tasks()?;
            let count = |s: TaskState| tasks.iter().filter(|t| t.state == s).count() as u64;
            out.push(InstanceSummary {
                instance: inst.domain().to_owned(),
                finalized_threads: threads.iter().filter(|t| t.instance_domain == inst.domain()).count() as u64,
                tasks: tasks.len() as u64,
                delivered: count(TaskState::Completed),
                canceled: count(TaskState::Canceled),
                in_flight: count(TaskState::Open),
                metrics: inst.metrics(range, Role::Admin)?,
            });
        }
        Ok(out)
    }
}

/// Runs `sc` to its horizon.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput> {
    sc.validate()?;
    Sim::new(sc)?.run()
}
