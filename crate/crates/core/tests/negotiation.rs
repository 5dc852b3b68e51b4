use chrono::{DateTime, Duration, TimeZone, Utc};
use opencourier_core::ids::{RequesterId, ThreadId};
use opencourier_core::money::Decimal;
use opencourier_core::quoting::{NegotiationThread, Party, Response, RoundKind, ThreadState};
use opencourier_core::sample;
use proptest::prelude::*;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 2, 15, 0, 0).unwrap()
}

#[derive(Debug, Clone)]
struct Move {
    requester: bool,
    kind: u8,
    cents: i64,
    wait_secs: i64,
}

fn moves() -> impl Strategy<Value = Vec<Move>> {
    prop::collection::vec(
        (any::<bool>(), 0u8..10, 500i64..2500, prop_oneof![9 => Just(0i64), 1 => 0i64..400]).prop_map(
            |(requester, kind, cents, wait_secs)| Move { requester, kind, cents, wait_secs },
        ),
        0..60,
    )
}

fn response(m: &Move, t: &NegotiationThread) -> Response {
    let amount = Decimal::from_minor(m.cents, 2);
    match m.kind {
        0..=5 => Response::counter(amount, "counter"),
        6 | 7 => Response::accept("deal"),
        8 => Response {
            amount: t.last_offered().map(|_| amount),
            ..Response::accept("deal at")
        },
        _ => Response::reject("no"),
    }
}

fn terminal(s: ThreadState) -> bool {
    matches!(s, ThreadState::Accepted | ThreadState::Rejected | ThreadState::Expired)
}

fn check_agreement(t: &NegotiationThread) -> Result<(), TestCaseError> {
    if t.state == ThreadState::Accepted {
        let before = t.rounds[..t.rounds.len() - 1]
            .iter()
            .rev()
            .find(|r| matches!(r.kind, RoundKind::Offer | RoundKind::Counter))
            .and_then(|r| r.amount);
        prop_assert_eq!(t.agreed_amount, before);
        prop_assert_eq!(t.rounds.last().unwrap().kind, RoundKind::Accept);
    }
    Ok(())
}

proptest! {
    #[test]
    fn threads_stay_bounded_and_terminate(max in 1usize..7, script in moves()) {
        let mut t = NegotiationThread::open(
            ThreadId::new("t"), RequesterId::new("r"), "nosh.example".into(), sample::quote(t0()), None, max, t0(),
        );
        let mut now = t0();
        for m in &script {
            now += Duration::seconds(m.wait_secs);
            let by = if m.requester { Party::Requester } else { Party::Instance };
            let r = response(m, &t);
            let _ = t.respond(by, &r, now);
            prop_assert!(t.rounds.len() <= 2 * max);
            check_agreement(&t)?;
            if terminal(t.state) {
                break;
            }
        }
        // Whoever's turn it is keeps countering in range until the limit forces a close.
        let mut steps = 0;
        while t.state == ThreadState::Open {
            steps += 1;
            prop_assert!(steps <= 2 * max + 1, "thread did not terminate");
            let by = match t.rounds.last().unwrap().by {
                Party::Requester => Party::Instance,
                _ => Party::Requester,
            };
            let counter = Response::counter(Decimal::from_minor(1300, 2), "again");
            if t.respond(by, &counter, now).is_err() {
                t.respond(by, &Response::accept("fine"), now).unwrap();
            }
            prop_assert!(t.rounds.len() <= 2 * max);
        }
        prop_assert!(terminal(t.state));
        check_agreement(&t)?;
        prop_assert!(t.check_invariants().is_ok());
    }
}
