//! Fixtures shared by the benchmarks.

use std::collections::BTreeMap;
use std::sync::Arc;

use bankflow_core::{
    ChainRegistry, Channel, Decision, DecisionAction, Engine, MemoryLog, NewRequest, RequestKind,
    SteppingClock, StoredEvent,
};

pub fn engine() -> Engine {
    Engine::open(
        ChainRegistry::default_bank(),
        Box::new(MemoryLog::new()),
        Arc::new(SteppingClock::default()),
    )
    .expect("empty log")
}

/// Submits a loan that needs the second tier and walks it to approval.
pub fn escalate_and_approve(engine: &Engine, id: &str) {
    engine
        .submit(NewRequest::new("c1", RequestKind::Loan, 2_000_000, "INR").with_id(id))
        .expect("submit");
    engine
        .decide(
            id,
            Decision::new("BSC", "bsc", DecisionAction::Escalate, ""),
        )
        .expect("escalate");
    engine
        .decide(
            id,
            Decision::new("OZSSC", "oz", DecisionAction::Approve, ""),
        )
        .expect("approve");
}

/// An engine with `n` active subscriptions on one topic, spread over channels.
pub fn engine_with_subscribers(n: usize, topic: &str) -> Engine {
    let engine = engine();
    for i in 0..n {
        engine
            .subscribe(
                &format!("c{i}"),
                topic,
                Channel::ALL[i % Channel::ALL.len()],
            )
            .expect("subscribe");
    }
    engine
}

/// A log of roughly `requests * 8` events mixing chains and notifications.
pub fn mixed_log(requests: usize) -> (ChainRegistry, Vec<StoredEvent>) {
    let engine = engine();
    for c in 0..10 {
        engine
            .subscribe(&format!("c{c}"), "*", Channel::InApp)
            .expect("subscribe");
    }
    for i in 0..requests {
        escalate_and_approve(&engine, &format!("r{i}"));
        if i % 10 == 0 {
            engine
                .publish("loan.interest.due", None, BTreeMap::new())
                .expect("publish");
        }
    }
    (engine.registry().clone(), engine.events().expect("events"))
}
