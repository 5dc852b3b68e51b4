//! Ready-made records for demos, the simulator and tests.

use chrono::{DateTime, Duration, Utc};

use crate::geo::{Place, Polygon};
use crate::money::Currency;
use crate::delivery::{Delivery, DeliveryStatus, DistanceUnit, TripPhase};
use crate::ids::{DeliveryId, TaskId};
use crate::quoting::DeliveryQuote;
use crate::registry::InstanceRecord;

/// Downtown Princeton, the default territory of the sample instance.
pub fn territory() -> Polygon {
    Polygon::rectangle(-74.6675, 40.3435, -74.6565, 40.3520)
}

pub fn instance_record(domain: &str) -> InstanceRecord {
    InstanceRecord {
        instance_name: format!("Courier hub {domain}"),
        admin: "Courier Cooperative".into(),
        contact: format!("ops@{domain}"),
        logo_url: None,
        domain_name: domain.into(),
        terms_of_service_url: format!("https://{domain}/tos"),
        privacy_policy_url: format!("https://{domain}/privacy"),
        location: territory().into(),
        languages: vec!["en".into()],
        description: "Worker-owned delivery in downtown Princeton.".into(),
        tombstone: false,
    }
}

/// A $12.00 quote (range 10 to 16, 10% fee) across the sample territory,
/// open for ten minutes from `at`.
pub fn quote(at: DateTime<Utc>) -> DeliveryQuote {
    DeliveryQuote {
        quote_id: None,
        quote: "12.00".parse().expect("literal"),
        quote_range_from: "10.00".parse().expect("literal"),
        quote_range_to: "16.00".parse().expect("literal"),
        fee_percentage: "10".parse().expect("literal"),
        currency: Currency::usd(),
        duration: 25,
        distance: "1.2".parse().expect("literal"),
        distance_unit: DistanceUnit::Miles,
        pickup_phone_number: Some("+1 609 555 0100".into()),
        pickup_name: "Small World Coffee".into(),
        dropoff_phone_number: "+1 609 555 0199".into(),
        dropoff_name: "A. Customer".into(),
        expires_at: at + Duration::minutes(10),
        pickup_ready_at: at + Duration::minutes(5),
        pickup_deadline_at: at + Duration::minutes(20),
        dropoff_ready_at: at + Duration::minutes(10),
        dropoff_eta: at + Duration::minutes(30),
        dropoff_deadline_at: at + Duration::minutes(45),
        order_total_value: "38.50".parse().expect("literal"),
        pickup_location: Place::new(-74.6675, 40.3520, "NW corner"),
        dropoff_location: Place::new(-74.6565, 40.3435, "SE corner"),
        item_weight_lbs: Some(3.0),
        merchant_tags: vec![],
    }
}

/// A CREATED delivery for the sample quote, paying $10.80.
pub fn delivery(id: &str, at: DateTime<Utc>) -> Delivery {
    let q = quote(at);
    Delivery {
        delivery_id: DeliveryId::new(id),
        task_id: TaskId::new(format!("task-{id}")),
        attempt: 1,
        quote_thread_id: None,
        instance_domain: "nosh.example".into(),
        courier_id: None,
        status: DeliveryStatus::Created,
        trip_phase: TripPhase::None,
        pickup_location: q.pickup_location,
        dropoff_location: q.dropoff_location,
        item_weight_lbs: q.item_weight_lbs,
        merchant_tags: q.merchant_tags,
        payout: "10.80".parse().expect("literal"),
        currency: q.currency,
        distance: q.distance,
        distance_unit: q.distance_unit,
        pickup_deadline_at: Some(q.pickup_deadline_at),
        dropoff_deadline_at: Some(q.dropoff_deadline_at),
        created_at: at,
        updated_at: at,
        issue: None,
        history: vec![],
        excluded_couriers: vec![],
    }
}
