#![allow(dead_code)]

use std::path::PathBuf;

use opencourier_harness::scenario::Scenario;
use serde_json::{json, Value};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load(name: &str) -> Scenario {
    Scenario::from_json(&std::fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

fn square(w: f64, s: f64, size: f64) -> Value {
    let (e, n) = (w + size, s + size);
    json!({"type": "Polygon", "coordinates": [[[w, s], [e, s], [e, n], [w, n], [w, s]]]})
}

/// `n` overlapping instances with one courier each, every one accepting,
/// and one broadcast over the shared area.
pub fn broadcast_scenario(n: usize, seed: u64) -> Scenario {
    let instances: Vec<Value> = (0..n)
        .map(|i| {
            json!({
                "domain": format!("i{i}.example"),
                "territory": square(-74.70, 40.30, 0.1),
                "responder": {"delaySecs": 30},
                "fleet": [{"name": "c", "position": {"lon": -74.66, "lat": 40.35}}]
            })
        })
        .collect();
    let v = json!({
        "seed": seed,
        "horizonSecs": 7200,
        "instances": instances,
        "requesterScript": [
            {"action": "BROADCAST", "at": 60, "ref": "b", "filter": {"lon": -74.66, "lat": 40.35}}
        ]
    });
    Scenario::from_json(&v.to_string()).unwrap()
}

fn parse(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn unparse(lines: &[Value]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

fn find(lines: &[Value], pred: impl Fn(&Value) -> bool) -> usize {
    lines.iter().position(pred).expect("the base log has the line a forgery needs")
}

fn is(l: &Value, ty: &str) -> bool {
    l["type"] == ty
}

fn transition(l: &Value, event: &str) -> bool {
    is(l, "TRANSITION") && l["event"] == event
}

/// Hand-made corruptions of a valid log. Each entry is a name, the forged
/// text and a fragment the verifier's report must contain.
///
/// The base log must contain a broadcast with a SYSTEM-rejected sibling, a
/// courier REJECT and a completed delivery.
pub fn forgeries(base: &str) -> Vec<(&'static str, String, &'static str)> {
    let lines = parse(base);
    let mut out = vec![];
    let mut forge = |name: &'static str, expect: &'static str, f: &dyn Fn(&mut Vec<Value>)| {
        let mut l = lines.clone();
        f(&mut l);
        out.push((name, unparse(&l), expect));
    };

    forge("delivered straight from accepted", "illegal edge ACCEPTED/NONE --MARK_DELIVERED--> DELIVERED/NONE", &|l| {
        let i = find(l, |x| transition(x, "ARRIVED_AT_PICKUP"));
        l[i]["event"] = json!("MARK_DELIVERED");
        l[i]["to"] = json!({"status": "DELIVERED", "phase": "NONE"});
    });
    forge("stale from state", "from", &|l| {
        let i = find(l, |x| transition(x, "MARK_ON_THE_WAY"));
        l[i]["from"] = json!({"status": "ACCEPTED", "phase": "NONE"});
    });
    forge("dropped line", "seq", &|l| {
        let i = find(l, |x| is(x, "COURIER_MOVED"));
        l.remove(i);
    });
    forge("time runs backwards", "backwards", &|l| {
        let i = find(l, |x| transition(x, "MARK_PICKED_UP"));
        l[i]["at"] = json!("2026-03-02T14:00:00Z");
    });
    forge("second broadcast winner", "second winner", &|l| {
        let r = find(l, |x| is(x, "ROUND") && x["by"] == "SYSTEM");
        let t = l[r]["threadId"].clone();
        l[r]["by"] = json!("INSTANCE");
        l[r]["kind"] = json!("ACCEPT");
        l[r]["amount"] = json!(12.0);
        let s = find(l, |x| is(x, "THREAD_STATE") && x["threadId"] == t);
        l[s]["state"] = json!("ACCEPTED");
        l[s]["agreedAmount"] = json!(12.0);
    });
    forge("inflated payout", "payout", &|l| {
        let i = find(l, |x| is(x, "THREAD_FINALIZED"));
        l[i]["payout"] = json!(12.0);
    });
    forge("agreed amount never offered", "agreed amount", &|l| {
        let i = find(l, |x| is(x, "THREAD_STATE") && x["state"] == "ACCEPTED");
        l[i]["agreedAmount"] = json!(15.5);
    });
    forge("requester moves twice", "twice in a row", &|l| {
        let i = find(l, |x| is(x, "ROUND") && x["index"] == 1);
        l[i]["by"] = json!("REQUESTER");
    });
    forge("another courier accepts", "may not ACCEPT", &|l| {
        let i = find(l, |x| transition(x, "ACCEPT"));
        l[i]["actor"] = json!({"kind": "COURIER", "id": "someone-else"});
    });
    forge("summary overstates deliveries", "summary", &|l| {
        let last = l.len() - 1;
        let d = l[last]["summary"][0]["delivered"].as_u64().unwrap();
        l[last]["summary"][0]["delivered"] = json!(d + 1);
    });
    forge("delivery with no thread", "first attempt without a known thread", &|l| {
        let i = find(l, |x| is(x, "DELIVERY_CREATED") && x["attempt"] == 1);
        l[i].as_object_mut().unwrap().remove("threadId");
    });
    forge("truncated", "SCENARIO_END", &|l| {
        l.pop();
    });
    forge("redispatch after acceptance", "follows an attempt in", &|l| {
        let i = find(l, |x| transition(x, "REJECT"));
        l[i]["event"] = json!("ACCEPT");
        l[i]["to"] = json!({"status": "ACCEPTED", "phase": "NONE"});
    });
    out
}
