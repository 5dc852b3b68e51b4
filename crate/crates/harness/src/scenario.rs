//! Scenario files: instances with their fleets, a timed requester script
//! and courier behaviour.

use std::collections::BTreeSet;

use chrono::{DateTime, TimeZone, Utc};
use opencourier_core::assignment::AssignmentPolicy;
use opencourier_core::delivery::CourierAvailability;
use opencourier_core::geo::{LonLat, Polygon};
use opencourier_core::money::{Currency, Decimal};
use opencourier_core::preferences::MatchConfig;
use opencourier_core::quoting::RoundKind;
use opencourier_core::registry::valid_language_tag;
use opencourier_core::{Error, ErrorCode, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Virtual time at which the run starts.
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
    /// Length of the run in virtual seconds.
    #[serde(default = "default_horizon")]
    pub horizon_secs: i64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    /// Interval of the maintenance tick (quote expiry, queued dispatch).
    #[serde(default = "default_tick")]
    pub tick_secs: i64,
    pub instances: Vec<InstanceSpec>,
    #[serde(default)]
    pub requester_script: Vec<RequesterAction>,
    #[serde(default)]
    pub requester: RequesterBehavior,
    #[serde(default)]
    pub courier_script: CourierScript,
}

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 2, 15, 0, 0).unwrap()
}

fn default_horizon() -> i64 {
    4 * 3600
}

fn default_max_rounds() -> usize {
    opencourier_core::quoting::DEFAULT_MAX_ROUNDS
}

fn default_tick() -> i64 {
    30
}

fn default_languages() -> Vec<String> {
    vec!["en".into()]
}

fn usd() -> Currency {
    Currency::usd()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InstanceSpec {
    pub domain: String,
    #[serde(default = "usd")]
    pub currency: Currency,
    pub territory: Polygon,
    #[serde(default = "default_languages")]
    pub languages: Vec<String>,
    #[serde(default)]
    pub matching: MatchConfig,
    #[serde(default)]
    pub policy: AssignmentPolicy,
    #[serde(default)]
    pub fleet: Vec<CourierSpec>,
    #[serde(default)]
    pub responder: Responder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CourierSpec {
    pub name: String,
    pub position: LonLat,
    /// Enrollment time relative to `start`; earlier means more senior.
    #[serde(default)]
    pub enrolled_offset_secs: i64,
    #[serde(default = "online")]
    pub availability: CourierAvailability,
    /// Partial settings document applied at enrollment.
    #[serde(default)]
    pub preferences: Map<String, Value>,
}

fn online() -> CourierAvailability {
    CourierAvailability::Online
}

/// How an instance answers the requester's moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Responder {
    #[serde(default = "default_respond_delay")]
    pub delay_secs: i64,
    /// Accept offers at or above this; counter with it otherwise. Absent
    /// means accept anything.
    #[serde(default)]
    pub min_amount: Option<Decimal>,
    #[serde(default)]
    pub reject_all: bool,
}

fn default_respond_delay() -> i64 {
    30
}

impl Default for Responder {
    fn default() -> Self {
        Self {
            delay_secs: default_respond_delay(),
            min_amount: None,
            reject_all: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RequesterBehavior {
    /// Accept an instance's counteroffer automatically.
    #[serde(default = "yes")]
    pub accept_counters: bool,
    #[serde(default = "default_respond_delay")]
    pub response_delay_secs: i64,
    #[serde(default)]
    pub finalize_delay_secs: i64,
}

impl Default for RequesterBehavior {
    fn default() -> Self {
        Self {
            accept_counters: true,
            response_delay_secs: default_respond_delay(),
            finalize_delay_secs: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Filter {
    #[serde(default)]
    pub lon: Option<f64>,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub q: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "SCREAMING_SNAKE_CASE", rename_all_fields = "camelCase")]
pub enum RequesterAction {
    /// Sends the sample quote, with `overrides` merged over it, to one instance.
    Quote {
        at: i64,
        #[serde(rename = "ref")]
        reference: String,
        instance: String,
        #[serde(default)]
        overrides: Map<String, Value>,
    },
    /// Sends a quote to every instance matching `filter`.
    Broadcast {
        at: i64,
        #[serde(rename = "ref")]
        reference: String,
        #[serde(default)]
        filter: Filter,
        #[serde(default)]
        overrides: Map<String, Value>,
    },
    /// Answers on a thread opened by an earlier action. `instance` picks
    /// one thread out of a broadcast.
    Respond {
        at: i64,
        #[serde(rename = "ref")]
        reference: String,
        #[serde(default)]
        instance: Option<String>,
        kind: RoundKind,
        #[serde(default)]
        amount: Option<Decimal>,
        #[serde(default)]
        message: String,
    },
}

impl RequesterAction {
    pub fn at(&self) -> i64 {
        match self {
            Self::Quote { at, .. } | Self::Broadcast { at, .. } | Self::Respond { at, .. } => *at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CourierScript {
    #[serde(default = "one")]
    pub accept_probability: f64,
    /// Delay between being dispatched and accepting or rejecting.
    #[serde(default = "default_decide")]
    pub decide_secs: i64,
    /// Delay between trip steps.
    #[serde(default = "default_step")]
    pub step_secs: i64,
    /// Position reports keep couriers fresh for the staleness bound.
    #[serde(default = "default_heartbeat")]
    pub heartbeat_secs: i64,
    #[serde(default)]
    pub moves: Vec<Move>,
}

fn one() -> f64 {
    1.0
}

fn default_decide() -> i64 {
    20
}

fn default_step() -> i64 {
    120
}

fn default_heartbeat() -> i64 {
    60
}

impl Default for CourierScript {
    fn default() -> Self {
        Self {
            accept_probability: 1.0,
            decide_secs: default_decide(),
            step_secs: default_step(),
            heartbeat_secs: default_heartbeat(),
            moves: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Move {
    pub at: i64,
    pub instance: String,
    pub courier: String,
    pub lon: f64,
    pub lat: f64,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::new(ErrorCode::ScenarioInvalid, msg)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| invalid(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(invalid("at least one instance is required"));
        }
        if self.horizon_secs <= 0 || self.tick_secs <= 0 {
            return Err(invalid("horizonSecs and tickSecs must be positive"));
        }
        if self.max_rounds == 0 {
            return Err(invalid("maxRounds must be at least 1"));
        }
        let mut domains = BTreeSet::new();
        for i in &self.instances {
            if !domains.insert(i.domain.as_str()) {
                return Err(invalid(format!("duplicate instance {}", i.domain)));
            }
            i.territory
                .validate()
                .map_err(|e| invalid(format!("{}: territory: {}", i.domain, e.message)))?;
            i.policy
                .validate()
                .map_err(|e| invalid(format!("{}: policy: {}", i.domain, e.message)))?;
            if i.languages.is_empty() || !i.languages.iter().all(|l| valid_language_tag(l)) {
                return Err(invalid(format!("{}: languages must be BCP-47 tags", i.domain)));
            }
            if i.responder.delay_secs < 0 {
                return Err(invalid(format!("{}: responder.delaySecs is negative", i.domain)));
            }
            let mut names = BTreeSet::new();
            for c in &i.fleet {
                if !names.insert(c.name.as_str()) {
                    return Err(invalid(format!("{}: duplicate courier {}", i.domain, c.name)));
                }
                c.position
                    .validate()
                    .map_err(|e| invalid(format!("{}/{}: {}", i.domain, c.name, e.message)))?;
            }
        }
        let cs = &self.courier_script;
        if !(0.0..=1.0).contains(&cs.accept_probability) {
            return Err(invalid("courierScript.acceptProbability must lie in [0, 1]"));
        }
        if cs.decide_secs < 0 || cs.step_secs < 0 || cs.heartbeat_secs <= 0 {
            return Err(invalid("courierScript delays must be non-negative and heartbeatSecs positive"));
        }
        for m in &cs.moves {
            let inst = self
                .instances
                .iter()
                .find(|i| i.domain == m.instance)
                .ok_or_else(|| invalid(format!("move for unknown instance {}", m.instance)))?;
            if !inst.fleet.iter().any(|c| c.name == m.courier) {
                return Err(invalid(format!("move for unknown courier {}/{}", m.instance, m.courier)));
            }
            if m.at < 0 {
                return Err(invalid("move times must be non-negative"));
            }
            LonLat::new(m.lon, m.lat)
                .validate()
                .map_err(|e| invalid(format!("move: {}", e.message)))?;
        }
        let r = &self.requester;
        if r.response_delay_secs < 0 || r.finalize_delay_secs < 0 {
            return Err(invalid("requester delays must be non-negative"));
        }
        let mut refs = BTreeSet::new();
        for a in &self.requester_script {
            if a.at() < 0 {
                return Err(invalid("requester action times must be non-negative"));
            }
            match a {
                RequesterAction::Quote { reference, instance, .. } => {
                    if !domains.contains(instance.as_str()) {
                        return Err(invalid(format!("quote to unknown instance {instance}")));
                    }
                    if !refs.insert(reference.as_str()) {
                        return Err(invalid(format!("duplicate ref {reference}")));
                    }
                }
                RequesterAction::Broadcast { reference, filter, .. } => {
                    if filter.lon.is_some() != filter.lat.is_some() {
                        return Err(invalid("broadcast filter needs both lon and lat"));
                    }
                    if !refs.insert(reference.as_str()) {
                        return Err(invalid(format!("duplicate ref {reference}")));
                    }
                }
                RequesterAction::Respond { reference, kind, .. } => {
                    if !refs.contains(reference.as_str()) {
                        return Err(invalid(format!("respond to unknown or later ref {reference}")));
                    }
                    if *kind == RoundKind::Offer {
                        return Err(invalid("OFFER is not a response"));
                    }
                }
            }
        }
        Ok(())
    }
}
