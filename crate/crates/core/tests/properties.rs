use std::collections::{BTreeMap, BTreeSet};

use bankflow_core::chain::{decide, submit_request};
use bankflow_core::notify::{DomainEvent, ScriptedSink};
use bankflow_core::store::{parse_log, render_jsonl};
use bankflow_core::{
    AuthorityLimit, ChainConfig, ChainError, Channel, Decision, DecisionAction, DeliveryStatus,
    NotificationHub, RequestKind, RequestStatus, RetryPolicy, ServiceRequest, Sinks, StoredEvent,
    TailPolicy, Timestamp,
};
use proptest::prelude::*;
use std::sync::Arc;

fn arb_chain() -> impl Strategy<Value = ChainConfig> {
    (prop::collection::vec(0u64..8_000_000, 0..4), any::<bool>()).prop_map(|(mut limits, auto)| {
        limits.sort_unstable();
        let mut tiers: Vec<(String, AuthorityLimit)> = limits
            .into_iter()
            .enumerate()
            .map(|(i, l)| (format!("T{i}"), AuthorityLimit::Limited(l)))
            .collect();
        tiers.push((format!("T{}", tiers.len()), AuthorityLimit::Unbounded));
        ChainConfig::new("c", RequestKind::Loan, tiers).with_auto_escalate(auto)
    })
}

fn arb_action() -> impl Strategy<Value = DecisionAction> {
    prop_oneof![
        Just(DecisionAction::Approve),
        Just(DecisionAction::Reject),
        Just(DecisionAction::Escalate),
    ]
}

fn request(amount: u64) -> ServiceRequest {
    ServiceRequest {
        request_id: "r".into(),
        customer_id: "c".into(),
        kind: RequestKind::Loan,
        amount,
        currency: "INR".into(),
        submitted_at: Timestamp::from_millis(0),
        details: BTreeMap::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn chain_walks_never_skip_and_stay_sound(
        config in arb_chain(),
        amount in 0u64..9_000_000,
        script in prop::collection::vec((0usize..6, arb_action()), 0..12),
    ) {
        let mut inst = submit_request(request(amount), &config, 1).unwrap();
        let mut seq = 1 + inst.history.len() as u64;
        for (tier, action) in script {
            let tier_id = format!("T{tier}");
            let before = inst.clone();
            let decision = Decision::new(&tier_id, "officer", action, "");
            seq += 1;
            match decide(&inst, &decision, &config, seq, Timestamp::from_millis(seq as i64)) {
                Ok(next) => {
                    prop_assert!(!before.status.is_terminal());
                    prop_assert_eq!(next.history.len(), before.history.len() + 1);
                    inst = next;
                }
                Err(err) => {
                    if before.status.is_terminal() {
                        let is_terminal_error = matches!(err, ChainError::TerminalState { .. });
                        prop_assert!(is_terminal_error, "{}", err);
                    }
                    prop_assert_eq!(&inst, &before);
                }
            }
        }

        // No skipped tier: the walk starts at tier 0 and only escalations move it by one.
        let mut expected = 0usize;
        for (i, event) in inst.history.iter().enumerate() {
            prop_assert_eq!(config.tier_index(&event.tier_id), Some(expected));
            if i > 0 {
                prop_assert!(inst.history[i - 1].seq < event.seq);
            }
            if event.action == DecisionAction::Escalate {
                expected += 1;
            } else {
                prop_assert_eq!(i, inst.history.len() - 1, "terminal decision must be last");
            }
        }
        prop_assert_eq!(inst.current_tier_index, expected);

        if inst.status == RequestStatus::Approved {
            let last = inst.history.last().unwrap();
            let tier = &config.tiers[config.tier_index(&last.tier_id).unwrap()];
            prop_assert!(tier.authority_limit.covers(amount));
        }
        // With auto-escalation on, a request never waits below a tier able to approve it.
        if config.auto_escalate_on_submit {
            let first_capable = config.tiers.iter().position(|t| t.authority_limit.covers(amount)).unwrap();
            let system_steps = inst.history.iter().filter(|e| e.actor_id == "system").count();
            prop_assert_eq!(system_steps, first_capable);
        }
    }

    #[test]
    fn terminal_requests_absorb_every_decision(
        config in arb_chain(),
        reject in any::<bool>(),
        tail in prop::collection::vec((0usize..6, arb_action()), 1..8),
    ) {
        let inst = submit_request(request(0), &config, 1).unwrap();
        let action = if reject { DecisionAction::Reject } else { DecisionAction::Approve };
        let done = decide(&inst, &Decision::new("T0", "o", action, ""), &config, 2, Timestamp::from_millis(0)).unwrap();
        prop_assert!(done.status.is_terminal());
        for (i, (tier, action)) in tail.into_iter().enumerate() {
            let decision = Decision::new(format!("T{tier}"), "o", action, "");
            let err = decide(&done, &decision, &config, 3 + i as u64, Timestamp::from_millis(0)).unwrap_err();
            prop_assert_eq!(err.code(), "TerminalState");
        }
    }

    #[test]
    fn validated_chains_have_monotone_limits(limits in prop::collection::vec(
        prop_oneof![ (0u64..100).prop_map(AuthorityLimit::Limited), Just(AuthorityLimit::Unbounded) ],
        1..6,
    )) {
        let tiers = limits.iter().enumerate().map(|(i, l)| (format!("T{i}"), *l));
        let config = ChainConfig::new("c", RequestKind::Loan, tiers);
        let monotone = limits.windows(2).all(|w| w[0] <= w[1]);
        let unbounded_last = *limits.last().unwrap() == AuthorityLimit::Unbounded;
        prop_assert_eq!(config.validate().is_ok(), monotone && unbounded_last);
    }

    #[test]
    fn scripted_outbox_settles_within_budget(failures in 0u32..8, max_attempts in 1u32..6) {
        let mut hub = NotificationHub::new();
        hub.subscribe("c", "t", Channel::Sms, "sub-1", Timestamp::from_millis(0)).unwrap();
        hub.publish(event(1, "t")).unwrap();
        let mut sinks = Sinks::new();
        sinks.register(Arc::new(ScriptedSink::new(Channel::Sms, failures)));
        hub.drive_outbox(&sinks, &RetryPolicy::new(max_attempts, Vec::new())).unwrap();
        let record = &hub.deliveries()[0];
        let expected = if failures < max_attempts { DeliveryStatus::Delivered } else { DeliveryStatus::Failed };
        prop_assert_eq!(record.status, expected);
        prop_assert_eq!(record.attempts, (failures + 1).min(max_attempts));
    }

    #[test]
    fn timestamps_round_trip(millis in -62_000_000_000_000i64..250_000_000_000_000) {
        let ts = Timestamp::from_millis(millis);
        let text = ts.to_string();
        prop_assert!(text.ends_with('Z'));
        prop_assert_eq!(text.parse::<Timestamp>().unwrap(), ts);
    }

    #[test]
    fn rendered_logs_parse_back(bodies in prop::collection::vec(any::<u32>(), 0..20), cut in any::<prop::sample::Index>()) {
        let events: Vec<StoredEvent> = bodies
            .iter()
            .enumerate()
            .map(|(i, b)| StoredEvent {
                seq: i as u64 + 1,
                recorded_at: Timestamp::from_millis(i as i64),
                category: bankflow_core::Category::Subscription,
                body: serde_json::json!({
                    "change": "unsubscribed",
                    "subscription_id": format!("sub-{b}"),
                }),
            })
            .collect();
        let text = render_jsonl(&events);
        let parsed = parse_log(&text, TailPolicy::Reject).unwrap();
        prop_assert_eq!(&parsed.events, &events);

        // Any cut inside the final line is a truncated tail.
        if !events.is_empty() {
            let last_start = text[..text.len() - 1].rfind('\n').map_or(0, |i| i + 1);
            let last_len = text.len() - last_start;
            let at = last_start + 1 + cut.index(last_len - 1);
            let torn = &text[..at];
            prop_assert!(parse_log(torn, TailPolicy::Reject).is_err());
            let dropped = parse_log(torn, TailPolicy::DropTruncated).unwrap();
            prop_assert_eq!(&dropped.events[..], &events[..events.len() - 1]);
        }
    }
}

fn event(seq: u64, topic: &str) -> DomainEvent {
    DomainEvent {
        event_seq: seq,
        topic: topic.into(),
        subject_ref: None,
        payload: BTreeMap::new(),
        occurred_at: Timestamp::from_millis(seq as i64),
    }
}

#[derive(Debug, Clone)]
enum HubOp {
    Subscribe(u8, u8, u8),
    Unsubscribe(usize),
    Publish(u8),
}

const TOPICS: [&str; 4] = ["*", "a", "a.b", "b"];

fn arb_op() -> impl Strategy<Value = HubOp> {
    prop_oneof![
        (0u8..4, 0u8..4, 0u8..3).prop_map(|(c, t, ch)| HubOp::Subscribe(c, t, ch)),
        (0usize..64).prop_map(HubOp::Unsubscribe),
        (1u8..4).prop_map(HubOp::Publish),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fan_out_matches_shadow_set(ops in prop::collection::vec(arb_op(), 0..60)) {
        let mut hub = NotificationHub::new();
        // subscription id -> (customer, topic, channel, active)
        let mut shadow: BTreeMap<String, (String, &str, Channel, bool)> = BTreeMap::new();
        let mut next_id = 0;
        let mut seq = 0;
        for op in ops {
            match op {
                HubOp::Subscribe(c, t, ch) => {
                    let customer = format!("c{c}");
                    let topic = TOPICS[t as usize];
                    let channel = Channel::ALL[ch as usize];
                    next_id += 1;
                    let sub = hub.subscribe(&customer, topic, channel, format!("sub-{next_id}"), Timestamp::from_millis(0)).unwrap();
                    let existing = shadow.iter().find(|(_, v)| v.0 == customer && v.1 == topic && v.2 == channel && v.3);
                    match existing {
                        Some((id, _)) => prop_assert_eq!(&sub.subscription_id, id),
                        None => {
                            prop_assert_eq!(&sub.subscription_id, &format!("sub-{next_id}"));
                            shadow.insert(sub.subscription_id.clone(), (customer, topic, channel, true));
                        }
                    }
                }
                HubOp::Unsubscribe(i) => {
                    let id = format!("sub-{}", i % (next_id + 1));
                    match shadow.get_mut(&id) {
                        Some(entry) => {
                            prop_assert!(!hub.unsubscribe(&id).unwrap().active);
                            entry.3 = false;
                        }
                        None => prop_assert!(hub.unsubscribe(&id).is_err()),
                    }
                }
                HubOp::Publish(t) => {
                    seq += 1;
                    let topic = TOPICS[t as usize];
                    let report = hub.publish(event(seq, topic)).unwrap();
                    let expected: BTreeSet<&String> = shadow
                        .iter()
                        .filter(|(_, v)| v.3 && (v.1 == topic || v.1 == "*"))
                        .map(|(id, _)| id)
                        .collect();
                    let actual: Vec<&String> = hub
                        .deliveries()
                        .iter()
                        .filter(|d| d.event_seq == seq)
                        .map(|d| &d.subscription_id)
                        .collect();
                    prop_assert_eq!(actual.len(), expected.len(), "duplicate delivery");
                    prop_assert_eq!(actual.into_iter().collect::<BTreeSet<_>>(), expected);
                    prop_assert_eq!(report.matched, report.queued);
                }
            }
        }
        prop_assert!(hub.deliveries().iter().all(|d| d.status == DeliveryStatus::Queued && d.attempts == 0));
    }
}
