//! Scripted scenarios: a JSON array of steps run against an [`Engine`].
//!
//! ```json
//! [
//!   {"step": "subscribe", "customer": "c1", "topic": "request.approved", "channel": "in_app"},
//!   {"step": "submit", "id": "loan-1", "customer": "c1", "kind": "loan", "amount": 2000000},
//!   {"step": "decide", "request": "loan-1", "tier": "BSC", "actor": "bsc-1", "action": "escalate"},
//!   {"step": "assert", "check": "request_status", "request": "loan-1", "expect": "pending"}
//! ]
//! ```
//!
//! Any action step may carry `"expect_error": "<code>"`; it then passes only
//! when the engine refuses with that code.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{Decision, DecisionAction, RequestKind, RequestStatus};
use crate::engine::{Engine, EngineError, NewRequest};
use crate::notify::{Channel, RetryPolicy};

fn default_currency() -> String {
    "INR".into()
}

fn default_max_attempts() -> u32 {
    RetryPolicy::default().max_attempts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    Submit {
        #[serde(default)]
        id: Option<String>,
        customer: String,
        kind: RequestKind,
        #[serde(default)]
        amount: u64,
        #[serde(default = "default_currency")]
        currency: String,
        #[serde(default)]
        details: BTreeMap<String, String>,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Decide {
        request: String,
        tier: String,
        actor: String,
        action: DecisionAction,
        #[serde(default)]
        reason: String,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Subscribe {
        customer: String,
        topic: String,
        channel: String,
        /// Name later steps may use instead of the generated id.
        #[serde(default, rename = "as")]
        alias: Option<String>,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Unsubscribe {
        subscription: String,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Publish {
        topic: String,
        #[serde(default)]
        subject: Option<String>,
        #[serde(default)]
        payload: BTreeMap<String, String>,
        #[serde(default)]
        expect_error: Option<String>,
    },
    DriveOutbox {
        #[serde(default = "default_max_attempts")]
        max_attempts: u32,
        #[serde(default)]
        expect_error: Option<String>,
    },
    Assert(Check),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum Check {
    RequestStatus {
        request: String,
        expect: RequestStatus,
    },
    QueueSize {
        tier: String,
        expect: usize,
    },
    InboxSize {
        customer: String,
        expect: usize,
    },
    /// Inbox entries whose event has the given topic.
    InboxTopic {
        customer: String,
        topic: String,
        expect: usize,
    },
    HistoryLength {
        request: String,
        expect: usize,
    },
}

impl Step {
    fn label(&self) -> String {
        match self {
            Step::Submit {
                id, kind, amount, ..
            } => format!(
                "submit {} {kind} {amount}",
                id.as_deref().unwrap_or("(new)")
            ),
            Step::Decide {
                request,
                tier,
                action,
                ..
            } => format!("decide {request} {action}@{tier}"),
            Step::Subscribe {
                customer,
                topic,
                channel,
                ..
            } => format!("subscribe {customer} {topic} {channel}"),
            Step::Unsubscribe { subscription, .. } => format!("unsubscribe {subscription}"),
            Step::Publish { topic, .. } => format!("publish {topic}"),
            Step::DriveOutbox { max_attempts, .. } => format!("drive_outbox max={max_attempts}"),
            Step::Assert(check) => match check {
                Check::RequestStatus { request, .. } => format!("assert request_status {request}"),
                Check::QueueSize { tier, .. } => format!("assert queue_size {tier}"),
                Check::InboxSize { customer, .. } => format!("assert inbox_size {customer}"),
                Check::InboxTopic {
                    customer, topic, ..
                } => format!("assert inbox_topic {customer} {topic}"),
                Check::HistoryLength { request, .. } => {
                    format!("assert history_length {request}")
                }
            },
        }
    }

    fn expected_error(&self) -> Option<&str> {
        match self {
            Step::Submit { expect_error, .. }
            | Step::Decide { expect_error, .. }
            | Step::Subscribe { expect_error, .. }
            | Step::Unsubscribe { expect_error, .. }
            | Step::Publish { expect_error, .. }
            | Step::DriveOutbox { expect_error, .. } => expect_error.as_deref(),
            Step::Assert(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(#[from] serde_json::Error),
}

pub fn parse_scenario(source: &str) -> Result<Vec<Step>, ScenarioError> {
    Ok(serde_json::from_str(source)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepOutcome {
    /// 1-based.
    pub index: usize,
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for StepOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {:>3} {:<4} {}: {}",
            self.index,
            if self.passed { "ok" } else { "FAIL" },
            self.label,
            self.detail
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub steps: Vec<StepOutcome>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| s.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &StepOutcome> {
        self.steps.iter().filter(|s| !s.passed)
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            writeln!(f, "{step}")?;
        }
        let failed = self.failures().count();
        write!(
            f,
            "{} steps, {} passed, {} failed",
            self.steps.len(),
            self.steps.len() - failed,
            failed
        )
    }
}

/// Runs steps in order against `engine`. Every step runs even after a
/// failure; the report says which ones failed and why.
pub fn run_scenario(engine: &Engine, steps: &[Step]) -> ScenarioReport {
    let mut runner = Runner {
        engine,
        aliases: HashMap::new(),
    };
    let steps = steps
        .iter()
        .enumerate()
        .map(|(i, step)| {
            let (passed, detail) = match step {
                Step::Assert(check) => runner.check(check),
                action => match (runner.act(action), action.expected_error()) {
                    (Ok(summary), None) => (true, summary),
                    (Ok(summary), Some(code)) => (
                        false,
                        format!("expected error {code}, actual success ({summary})"),
                    ),
                    (Err(err), Some(code)) if err.code() == code => {
                        (true, format!("refused as expected: {code}"))
                    }
                    (Err(err), Some(code)) => (
                        false,
                        format!("expected error {code}, actual {}: {err}", err.code()),
                    ),
                    (Err(err), None) => (
                        false,
                        format!("expected success, actual {}: {err}", err.code()),
                    ),
                },
            };
            StepOutcome {
                index: i + 1,
                label: step.label(),
                passed,
                detail,
            }
        })
        .collect();
    ScenarioReport { steps }
}

struct Runner<'a> {
    engine: &'a Engine,
    aliases: HashMap<String, String>,
}

impl Runner<'_> {
    fn act(&mut self, step: &Step) -> Result<String, EngineError> {
        let engine = self.engine;
        match step {
            Step::Submit {
                id,
                customer,
                kind,
                amount,
                currency,
                details,
                ..
            } => {
                let mut new = NewRequest::new(customer, *kind, *amount, currency);
                new.request_id = id.clone();
                new.details = details.clone();
                let inst = engine.submit(new)?;
                let view = engine.view(&inst);
                Ok(format!(
                    "{} {} at {} ({} system escalations)",
                    view.request_id,
                    view.status,
                    view.current_tier_id,
                    inst.history.len()
                ))
            }
            Step::Decide {
                request,
                tier,
                actor,
                action,
                reason,
                ..
            } => {
                let inst =
                    engine.decide(request, Decision::new(tier, actor, *action, reason.clone()))?;
                let view = engine.view(&inst);
                Ok(format!(
                    "{} {} at {}",
                    view.request_id, view.status, view.current_tier_id
                ))
            }
            Step::Subscribe {
                customer,
                topic,
                channel,
                alias,
                ..
            } => {
                let channel: Channel = channel.parse()?;
                let (sub, created) = engine.subscribe(customer, topic, channel)?;
                if let Some(alias) = alias {
                    self.aliases
                        .insert(alias.clone(), sub.subscription_id.clone());
                }
                Ok(format!(
                    "{} {}",
                    sub.subscription_id,
                    if created { "created" } else { "already active" }
                ))
            }
            Step::Unsubscribe { subscription, .. } => {
                let id = self
                    .aliases
                    .get(subscription)
                    .cloned()
                    .unwrap_or_else(|| subscription.clone());
                let (sub, changed) = engine.unsubscribe(&id)?;
                Ok(format!(
                    "{} {}",
                    sub.subscription_id,
                    if changed {
                        "deactivated"
                    } else {
                        "already inactive"
                    }
                ))
            }
            Step::Publish {
                topic,
                subject,
                payload,
                ..
            } => {
                let (report, seq) = engine.publish(topic, subject.clone(), payload.clone())?;
                Ok(format!(
                    "event {seq} matched {} queued {}",
                    report.matched, report.queued
                ))
            }
            Step::DriveOutbox { max_attempts, .. } => {
                let moved = engine.drive_outbox(&RetryPolicy::new(*max_attempts, Vec::new()))?;
                Ok(format!("{moved} transitions"))
            }
            Step::Assert(_) => unreachable!("assertions are checked, not acted"),
        }
    }

    fn check(&self, check: &Check) -> (bool, String) {
        let engine = self.engine;
        let compare = |expected: String, actual: Result<String, EngineError>| match actual {
            Ok(actual) if actual == expected => (true, actual),
            Ok(actual) => (false, format!("expected {expected}, actual {actual}")),
            Err(err) => (
                false,
                format!("expected {expected}, actual error {}: {err}", err.code()),
            ),
        };
        match check {
            Check::RequestStatus { request, expect } => compare(
                expect.to_string(),
                engine.request(request).map(|i| i.status.to_string()),
            ),
            Check::QueueSize { tier, expect } => compare(
                expect.to_string(),
                engine.pending_for_tier(tier).map(|q| q.len().to_string()),
            ),
            Check::InboxSize { customer, expect } => compare(
                expect.to_string(),
                Ok(engine.deliveries_for(customer).len().to_string()),
            ),
            Check::InboxTopic {
                customer,
                topic,
                expect,
            } => compare(
                expect.to_string(),
                Ok(engine
                    .deliveries_for(customer)
                    .iter()
                    .filter(|e| &e.event.topic == topic)
                    .count()
                    .to_string()),
            ),
            Check::HistoryLength { request, expect } => compare(
                expect.to_string(),
                engine.chain_history(request).map(|h| h.len().to_string()),
            ),
        }
    }
}
