//! Anonymized CSV export and aggregate labour metrics.

use std::collections::BTreeSet;

use chrono::{DateTime, DurationRound, TimeDelta, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::delivery::{Actor, Delivery, DeliveryStatus, EventKind};
use crate::error::{Error, ErrorCode, Result};
use crate::ids::{CourierId, Role};
use crate::money::{Currency, Decimal};

pub const HEADER: [&str; 12] = [
    "deliveryIdHash",
    "courierIdHash",
    "status",
    "createdAt",
    "deliveredAt",
    "pickupCell",
    "dropoffCell",
    "distance",
    "distanceUnit",
    "payout",
    "currency",
    "durationMinutes",
];

/// Longest run of decimal digits allowed inside a hash, so that hashes
/// never look like phone numbers to downstream scrubbers.
const MAX_DIGIT_RUN: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

impl TimeRange {
    pub fn new(from: DateTime<Utc>, to: DateTime<Utc>) -> Result<Self> {
        if from >= to {
            return Err(Error::new(
                ErrorCode::EmptyRange,
                format!("range [{from}, {to}) is empty"),
            ));
        }
        Ok(Self { from, to })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.from <= t && t < self.to
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Salt(String);

impl Salt {
    /// 128 random bits; hashes are unlinkable across exports.
    pub fn random() -> Self {
        let mut b = [0u8; 16];
        rand::rng().fill_bytes(&mut b);
        Salt(hex::encode(b))
    }

    /// A salt chosen by the caller, for longitudinal studies.
    pub fn pinned(s: impl Into<String>) -> Self {
        Salt(s.into())
    }

    pub fn hash(&self, id: &str) -> String {
        let mut round = 0u32;
        loop {
            let mut h = Sha256::new();
            h.update(self.0.as_bytes());
            h.update(b":");
            h.update(id.as_bytes());
            if round > 0 {
                h.update(format!(":{round}").as_bytes());
            }
            let out = hex::encode(h.finalize());
            if longest_digit_run(&out) <= MAX_DIGIT_RUN {
                return out;
            }
            round += 1;
        }
    }
}

fn longest_digit_run(s: &str) -> usize {
    s.split(|c: char| !c.is_ascii_digit()).map(str::len).max().unwrap_or(0)
}

/// Truncates toward zero to two decimals, working on the shortest decimal
/// representation so values such as 40.35 are not pushed down to 40.34.
pub fn truncate2(v: f64) -> String {
    let s = format!("{v}");
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.as_str()),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let frac: String = frac.chars().chain("00".chars()).take(2).collect();
    let zero = int.bytes().all(|b| b == b'0') && frac == "00";
    format!("{}{int}.{frac}", if neg && !zero { "-" } else { "" })
}

pub fn cell(lon: f64, lat: f64) -> String {
    format!("{},{}", truncate2(lon), truncate2(lat))
}

fn ts(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn first_event(d: &Delivery, kind: EventKind) -> Option<DateTime<Utc>> {
    d.history.iter().find(|h| h.event == kind).map(|h| h.at)
}

/// Seconds from the courier's ACCEPT to MARK_DELIVERED.
pub fn duration_secs(d: &Delivery) -> Option<i64> {
    let start = first_event(d, EventKind::Accept)?;
    let end = d.delivered_at()?;
    Some((end - start).num_seconds())
}

fn minutes(secs: i64) -> Decimal {
    Decimal::new(secs, 0).div_round(60, 2)
}

fn ensure_can_export(role: Role) -> Result<()> {
    match role {
        Role::Admin | Role::Auditor => Ok(()),
        _ => Err(Error::new(ErrorCode::Unauthorized, format!("{role:?} may not export disclosure data"))),
    }
}

pub fn export_csv(deliveries: &[Delivery], range: TimeRange, role: Role, salt: &Salt) -> Result<String> {
    ensure_can_export(role)?;
    let mut rows: Vec<(DateTime<Utc>, String, [String; 12])> = deliveries
        .iter()
        .filter(|d| range.contains(d.created_at))
        .map(|d| {
            let id_hash = salt.hash(d.delivery_id.as_str());
            let row = [
                id_hash.clone(),
                d.courier_id.as_ref().map(|c| salt.hash(c.as_str())).unwrap_or_default(),
                d.status.as_str().to_owned(),
                ts(d.created_at),
                d.delivered_at().map(ts).unwrap_or_default(),
                cell(d.pickup_location.lon, d.pickup_location.lat),
                cell(d.dropoff_location.lon, d.dropoff_location.lat),
                d.distance.round_to(2).to_string(),
                d.distance_unit.as_str().to_owned(),
                d.payout.to_string(),
                d.currency.to_string(),
                duration_secs(d).map(|s| minutes(s).to_string()).unwrap_or_default(),
            ];
            (d.created_at, id_hash, row)
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    let io = |e: csv::Error| Error::internal(format!("csv: {e}"));
    w.write_record(HEADER).map_err(io)?;
    for (_, _, row) in &rows {
        w.write_record(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::internal(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::internal(e.to_string()))
}

/// Raw numerators and denominators behind [`Metrics`]. Totals over
/// disjoint ranges add up to the totals over their union.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsTotals {
    pub deliveries_completed: u64,
    /// Deliveries completed in the reporting currency.
    pub paid_deliveries: u64,
    pub payout_minor: i64,
    pub active_hours: u64,
    pub duration_secs: i64,
    pub timed_deliveries: u64,
    pub dispatched: u64,
    pub rejected: u64,
}

impl MetricsTotals {
    pub fn merge(&self, o: &Self) -> Self {
        Self {
            deliveries_completed: self.deliveries_completed + o.deliveries_completed,
            paid_deliveries: self.paid_deliveries + o.paid_deliveries,
            payout_minor: self.payout_minor + o.payout_minor,
            active_hours: self.active_hours + o.active_hours,
            duration_secs: self.duration_secs + o.duration_secs,
            timed_deliveries: self.timed_deliveries + o.timed_deliveries,
            dispatched: self.dispatched + o.dispatched,
            rejected: self.rejected + o.rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub currency: Currency,
    pub deliveries_completed: u64,
    pub avg_hourly_earnings: Option<Decimal>,
    pub avg_payout_per_delivery: Option<Decimal>,
    pub avg_duration_minutes: Option<Decimal>,
    pub rejection_rate: Option<f64>,
    pub totals: MetricsTotals,
}

impl Metrics {
    pub fn from_totals(t: MetricsTotals, currency: Currency) -> Self {
        let exp = currency.exponent();
        let per = |num: i64, den: u64| (den > 0).then(|| Decimal::new(num, exp).div_round(den as i64, exp));
        Self {
            deliveries_completed: t.deliveries_completed,
            avg_hourly_earnings: per(t.payout_minor, t.active_hours),
            avg_payout_per_delivery: per(t.payout_minor, t.paid_deliveries),
            avg_duration_minutes: (t.timed_deliveries > 0)
                .then(|| Decimal::new(t.duration_secs, 0).div_round(60 * t.timed_deliveries as i64, 2)),
            rejection_rate: (t.dispatched > 0).then(|| t.rejected as f64 / t.dispatched as f64),
            currency,
            totals: t,
        }
    }
}

fn hour_start(t: DateTime<Utc>) -> DateTime<Utc> {
    t.duration_trunc(TimeDelta::hours(1)).unwrap_or(t)
}

/// Sums for `range`. Completions, payouts and durations count by delivery
/// time; dispatches and rejections by the time of that event; an active
/// hour is a (courier, clock hour) pair with at least one courier-made
/// transition, counted in the range containing the start of the hour.
pub fn metrics_totals(deliveries: &[Delivery], range: TimeRange, currency: &Currency) -> Result<MetricsTotals> {
    let mut t = MetricsTotals::default();
    let mut hours: BTreeSet<(&CourierId, DateTime<Utc>)> = BTreeSet::new();
    for d in deliveries {
        for h in &d.history {
            if let Actor::Courier(c) = &h.actor {
                let start = hour_start(h.at);
                if range.contains(start) {
                    hours.insert((c, start));
                }
            }
            if range.contains(h.at) {
                match h.event {
                    EventKind::Dispatch => t.dispatched += 1,
                    EventKind::Reject => t.rejected += 1,
                    _ => {}
                }
            }
        }
        if d.status != DeliveryStatus::Delivered {
            continue;
        }
        let Some(at) = d.delivered_at() else { continue };
        if !range.contains(at) {
            continue;
        }
        t.deliveries_completed += 1;
        if &d.currency == currency {
            t.paid_deliveries += 1;
            t.payout_minor += d.payout.to_minor(currency.exponent())?;
        }
        if let Some(s) = duration_secs(d) {
            t.timed_deliveries += 1;
            t.duration_secs += s;
        }
    }
    t.active_hours = hours.len() as u64;
    Ok(t)
}

pub fn metrics(deliveries: &[Delivery], range: TimeRange, role: Role, currency: &Currency) -> Result<Metrics> {
    ensure_can_export(role)?;
    Ok(Metrics::from_totals(metrics_totals(deliveries, range, currency)?, currency.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delivery::tests::{happy_path, sample, t0};
    use crate::delivery::TransitionEvent;
    use chrono::Duration;

    fn run(d: Delivery, courier: &str, events: &[EventKind], step: Duration) -> Delivery {
        let mut d = d;
        let mut at = d.created_at;
        for &k in events {
            at += step;
            let ev = match k {
                EventKind::Dispatch => TransitionEvent::dispatch(Actor::System, CourierId::new(courier)),
                _ => TransitionEvent::new(k, Actor::courier(courier)),
            };
            d = d.transition(&ev, at).unwrap();
        }
        d
    }

    fn range(h0: i64, h1: i64) -> TimeRange {
        TimeRange::new(t0() + Duration::hours(h0), t0() + Duration::hours(h1)).unwrap()
    }

    #[test]
    fn truncation_not_rounding() {
        assert_eq!(truncate2(40.3520), "40.35");
        assert_eq!(truncate2(40.35), "40.35");
        assert_eq!(truncate2(-74.6675), "-74.66");
        assert_eq!(truncate2(-74.669999), "-74.66");
        assert_eq!(truncate2(-0.004), "0.00");
        assert_eq!(truncate2(5.0), "5.00");
        assert_eq!(truncate2(1e-7), "0.00");
        assert_eq!(cell(-74.6675, 40.3520), "-74.66,40.35");
    }

    #[test]
    fn empty_instance_has_header_only() {
        let csv = export_csv(&[], range(0, 1), Role::Admin, &Salt::pinned("s")).unwrap();
        assert_eq!(csv, format!("{}\n", HEADER.join(",")));
    }

    #[test]
    fn range_and_role_checks() {
        let mut ds: Vec<Delivery> = (0..3).map(|i| sample(&format!("d{i}"))).collect();
        ds[2].created_at = t0() + Duration::hours(5);
        ds[2].updated_at = ds[2].created_at;
        let csv = export_csv(&ds, range(-1, 1), Role::Auditor, &Salt::pinned("s")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(
            export_csv(&ds, range(0, 1), Role::Courier, &Salt::random()).unwrap_err().code,
            ErrorCode::Unauthorized
        );
        assert_eq!(TimeRange::new(t0(), t0()).unwrap_err().code, ErrorCode::EmptyRange);
    }

    #[test]
    fn salts_separate_exports() {
        let a = Salt::pinned("a");
        assert_eq!(a.hash("x"), a.hash("x"));
        assert_ne!(a.hash("x"), Salt::pinned("b").hash("x"));
        for i in 0..2000 {
            assert!(longest_digit_run(&a.hash(&i.to_string())) <= MAX_DIGIT_RUN);
        }
    }

    #[test]
    fn hourly_earnings_example() {
        let a = run(sample("a"), "c1", &happy_path(), Duration::minutes(5));
        let mut b = sample("b");
        b.created_at = t0() + Duration::hours(1);
        b.updated_at = b.created_at;
        let b = run(b, "c1", &happy_path(), Duration::minutes(5));
        let m = metrics(&[a, b], range(0, 3), Role::Admin, &Currency::usd()).unwrap();
        assert_eq!(m.deliveries_completed, 2);
        assert_eq!(m.totals.active_hours, 2);
        assert_eq!(m.avg_hourly_earnings.unwrap().to_string(), "12.60");
        assert_eq!(m.avg_payout_per_delivery.unwrap().to_string(), "12.60");
        assert_eq!(m.rejection_rate, Some(0.0));
    }

    #[test]
    fn no_activity_is_absent() {
        let m = metrics(&[], range(0, 1), Role::Admin, &Currency::usd()).unwrap();
        assert_eq!(m.deliveries_completed, 0);
        assert!(m.avg_hourly_earnings.is_none() && m.rejection_rate.is_none() && m.avg_duration_minutes.is_none());
        let v = serde_json::to_value(&m).unwrap();
        assert!(v["avgHourlyEarnings"].is_null());
    }

    #[test]
    fn rejection_rate_quarter() {
        let mut ds = vec![run(sample("r"), "c1", &[EventKind::Dispatch, EventKind::Reject], Duration::minutes(1))];
        for i in 0..3 {
            ds.push(run(sample(&format!("x{i}")), "c2", &[EventKind::Dispatch], Duration::minutes(1)));
        }
        let m = metrics(&ds, range(0, 1), Role::Admin, &Currency::usd()).unwrap();
        assert_eq!(m.rejection_rate, Some(0.25));
    }
}
