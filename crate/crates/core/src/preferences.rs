//! Per-courier work preferences and the eligibility check used by
//! assignment.
//!
//! Hard constraints (territory, shift, item weight, order size, merchant
//! type) decide eligibility. Everything else is a ranking hint and never
//! blocks a delivery.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Timelike, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::delivery::Delivery;
use crate::error::{Error, FieldErrors, Result};
use crate::geo::Polygon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VehicleType {
    Bicycle,
    Ebike,
    Scooter,
    Car,
    Walk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OrderSize {
    #[serde(alias = "small order")]
    SmallOrder,
    #[serde(alias = "medium order")]
    MediumOrder,
    #[serde(alias = "large order")]
    LargeOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeliverySpeed {
    #[default]
    Regular,
    Rush,
}

pub const NO_RESTRICTIONS: &str = "NONE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CourierPreferences {
    pub delivery_polygon: Polygon,
    pub vehicle_type: Option<VehicleType>,
    pub preferred_areas: Vec<String>,
    /// Lowercase weekday name to `"HH:MM-HH:MM"` ranges in instance-local time.
    pub shift_availability: BTreeMap<String, Vec<String>>,
    pub delivery_preferences: Vec<OrderSize>,
    pub food_preferences: Vec<String>,
    pub earning_goals: BTreeMap<String, String>,
    pub delivery_speed: DeliverySpeed,
    pub restaurant_types: Vec<String>,
    pub cuisine_types: Vec<String>,
    pub dietary_restrictions: Vec<String>,
    pub max_item_weight_lbs: Option<f64>,
}

impl CourierPreferences {
    /// Document created at enrollment.
    pub fn defaults(territory: Polygon) -> Self {
        Self {
            delivery_polygon: territory,
            vehicle_type: None,
            preferred_areas: vec![],
            shift_availability: BTreeMap::new(),
            delivery_preferences: vec![],
            food_preferences: vec![],
            earning_goals: BTreeMap::new(),
            delivery_speed: DeliverySpeed::Regular,
            restaurant_types: vec![],
            cuisine_types: vec![],
            dietary_restrictions: vec![NO_RESTRICTIONS.into()],
            max_item_weight_lbs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = FieldErrors::new();
        errs.absorb("deliveryPolygon", self.delivery_polygon.validate());
        errs.absorb("shiftAvailability", validate_shifts(&self.shift_availability));
        errs.absorb("dietaryRestrictions", validate_dietary(&self.dietary_restrictions));
        errs.absorb("earningGoals", validate_goals(&self.earning_goals));
        if let Some(w) = self.max_item_weight_lbs {
            errs.check(w.is_finite() && w > 0.0, "maxItemWeightLbs", "must be > 0");
        }
        errs.into_result("preferences")
    }
}

const WEEKDAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];

fn weekday_name(w: Weekday) -> &'static str {
    WEEKDAYS[w.num_days_from_monday() as usize]
}

fn parse_clock(s: &str, allow_midnight_end: bool) -> Option<u32> {
    let (h, m) = s.split_once(':')?;
    if h.len() != 2 || m.len() != 2 {
        return None;
    }
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    match (h, m) {
        (0..=23, 0..=59) => Some(h * 60 + m),
        (24, 0) if allow_midnight_end => Some(24 * 60),
        _ => None,
    }
}

/// Parses `"HH:MM-HH:MM"` into minutes after midnight, requiring start < end.
pub fn parse_shift(range: &str) -> Result<(u32, u32)> {
    let bad = |why: &str| Error::validation(format!("'{range}': {why}"));
    let (a, b) = range.split_once('-').ok_or_else(|| bad("expected HH:MM-HH:MM"))?;
    let start = parse_clock(a, false).ok_or_else(|| bad("start is not HH:MM"))?;
    let end = parse_clock(b, true).ok_or_else(|| bad("end is not HH:MM"))?;
    if start >= end {
        return Err(bad("start must be before end"));
    }
    Ok((start, end))
}

fn validate_shifts(shifts: &BTreeMap<String, Vec<String>>) -> Result<()> {
    for (day, ranges) in shifts {
        if !WEEKDAYS.contains(&day.as_str()) {
            return Err(Error::validation(format!("'{day}' is not a lowercase weekday")));
        }
        for r in ranges {
            parse_shift(r)?;
        }
    }
    Ok(())
}

fn validate_dietary(list: &[String]) -> Result<()> {
    let has_none = list.iter().any(|s| s == NO_RESTRICTIONS);
    if list.is_empty() {
        return Err(Error::validation("use [\"NONE\"] for no restrictions"));
    }
    if has_none && list.len() > 1 {
        return Err(Error::validation("\"NONE\" cannot be combined with other restrictions"));
    }
    Ok(())
}

fn validate_goals(goals: &BTreeMap<String, String>) -> Result<()> {
    match goals.keys().find(|k| k.as_str() != "maximize") {
        Some(k) => Err(Error::validation(format!("unknown key '{k}', only \"maximize\" is supported"))),
        None => Ok(()),
    }
}

fn field<T: serde::de::DeserializeOwned>(errs: &mut FieldErrors, name: &str, v: &Value) -> Option<T> {
    match serde_json::from_value(v.clone()) {
        Ok(x) => Some(x),
        Err(e) => {
            errs.push(name, e.to_string());
            None
        }
    }
}

/// Merges a partial document: supplied fields replace wholesale, absent ones
/// are kept. Every field is checked independently so the error lists all
/// offending fields. Returns whether anything changed.
pub fn apply_patch(prefs: &mut CourierPreferences, patch: &Map<String, Value>) -> Result<bool> {
    let mut errs = FieldErrors::new();
    let mut next = prefs.clone();
    for (name, v) in patch {
        match name.as_str() {
            "deliveryPolygon" => {
                if let Some(p) = field::<Polygon>(&mut errs, name, v) {
                    errs.absorb(name, p.validate());
                    next.delivery_polygon = p;
                }
            }
            "vehicleType" => {
                if let Some(x) = field(&mut errs, name, v) {
                    next.vehicle_type = x;
                }
            }
            "preferredAreas" => {
                if let Some(x) = field(&mut errs, name, v) {
                    next.preferred_areas = x;
                }
            }
            "shiftAvailability" => {
                if let Some(x) = field(&mut errs, name, v) {
                    errs.absorb(name, validate_shifts(&x));
                    next.shift_availability = x;
                }
            }
            "deliveryPreferences" => {
                if let Some(x) = field(&mut errs, name, v) {
                    next.delivery_preferences = x;
                }
            }
            "foodPreferences" => {
                if let Some(x) = field(&mut errs, name, v) {
                    next.food_preferences = x;
                }
            }
            "earningGoals" => {
                if let Some(x) = field(&mut errs, name, v) {
                    errs.absorb(name, validate_goals(&x));
                    next.earning_goals = x;
                }
            }
            "deliverySpeed" => {
                if let Some(x) = field(&mut errs, name, v) {
                    next.delivery_speed = x;
                }
            }
            "restaurantTypes" => {
                if let Some(x) = field(&mut errs, name, v) {
                    next.restaurant_types = x;
                }
            }
            "cuisineTypes" => {
                if let Some(x) = field(&mut errs, name, v) {
                    next.cuisine_types = x;
                }
            }
            "dietaryRestrictions" => {
                if let Some(x) = field::<Vec<String>>(&mut errs, name, v) {
                    errs.absorb(name, validate_dietary(&x));
                    next.dietary_restrictions = x;
                }
            }
            "maxItemWeightLbs" => {
                if let Some(x) = field::<Option<f64>>(&mut errs, name, v) {
                    errs.check(x.is_none_or(|w| w.is_finite() && w > 0.0), name, "must be > 0");
                    next.max_item_weight_lbs = x;
                }
            }
            other => errs.push(other, "unknown preference field"),
        }
    }
    errs.into_result("preferences patch")?;
    let changed = next != *prefs;
    *prefs = next;
    Ok(changed)
}

/// Instance-level knobs for [`matches`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchConfig {
    /// IANA zone in which shift ranges are interpreted.
    pub timezone: Tz,
    /// Orders lighter than this are SMALL_ORDER.
    pub small_below_lbs: f64,
    /// Orders at least this heavy are LARGE_ORDER; in between is MEDIUM_ORDER.
    pub large_from_lbs: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            timezone: chrono_tz::UTC,
            small_below_lbs: 5.0,
            large_from_lbs: 20.0,
        }
    }
}

impl MatchConfig {
    pub fn order_size(&self, weight_lbs: f64) -> OrderSize {
        if weight_lbs < self.small_below_lbs {
            OrderSize::SmallOrder
        } else if weight_lbs < self.large_from_lbs {
            OrderSize::MediumOrder
        } else {
            OrderSize::LargeOrder
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eligibility {
    pub eligible: bool,
    pub reasons: Vec<String>,
}

/// True when `at` falls inside a shift range for its local weekday. No
/// shifts at all means always available.
pub fn in_shift(shifts: &BTreeMap<String, Vec<String>>, at: DateTime<Utc>, tz: Tz) -> bool {
    if shifts.is_empty() {
        return true;
    }
    let local = at.with_timezone(&tz);
    let minute = local.hour() * 60 + local.minute();
    shifts
        .get(weekday_name(local.weekday()))
        .into_iter()
        .flatten()
        .filter_map(|r| parse_shift(r).ok())
        .any(|(start, end)| start <= minute && minute < end)
}

pub fn matches(prefs: &CourierPreferences, d: &Delivery, at: DateTime<Utc>, cfg: &MatchConfig) -> Eligibility {
    let mut reasons = Vec::new();
    if !prefs.delivery_polygon.contains(d.pickup_location.point()) {
        reasons.push("pickup outside deliveryPolygon".to_owned());
    }
    if !prefs.delivery_polygon.contains(d.dropoff_location.point()) {
        reasons.push("dropoff outside deliveryPolygon".to_owned());
    }
    if !in_shift(&prefs.shift_availability, at, cfg.timezone) {
        reasons.push("outside shiftAvailability".to_owned());
    }
    if let (Some(w), Some(max)) = (d.item_weight_lbs, prefs.max_item_weight_lbs) {
        if w > max {
            reasons.push(format!("item weight {w} lbs exceeds maxItemWeightLbs {max}"));
        }
    }
    if let Some(w) = d.item_weight_lbs {
        let size = cfg.order_size(w);
        if !prefs.delivery_preferences.is_empty() && !prefs.delivery_preferences.contains(&size) {
            reasons.push(format!("order size {size:?} not in deliveryPreferences"));
        }
    }
    if !prefs.restaurant_types.is_empty() {
        let hit = d
            .merchant_tags
            .iter()
            .any(|t| prefs.restaurant_types.iter().any(|r| r.trim().eq_ignore_ascii_case(t.trim())));
        if !hit {
            reasons.push("no merchant tag in restaurantTypes".to_owned());
        }
    }
    Eligibility {
        eligible: reasons.is_empty(),
        reasons,
    }
}
