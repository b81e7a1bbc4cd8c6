//! Append-only event log.
//!
//! On disk the log is JSON Lines: one [`StoredEvent`] per LF-terminated line,
//! keys in the order `seq`, `recorded_at`, `category`, `body`. Sequence
//! numbers start at 1 and are dense.

mod file;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::chain::{DecisionEvent, ServiceRequest};
use crate::notify::{DeliveryAttempt, DomainEvent, SubscriptionChange};
use crate::time::Timestamp;

pub use file::{FileLog, TailPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Decision,
    Domain,
    Subscription,
    Delivery,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Decision => "decision",
            Category::Domain => "domain",
            Category::Subscription => "subscription",
            Category::Delivery => "delivery",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub seq: u64,
    pub recorded_at: Timestamp,
    pub category: Category,
    pub body: Value,
}

impl StoredEvent {
    /// The event as one log line, without the trailing LF.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("stored events always serialize")
    }

    pub fn decode(&self) -> Result<EventBody, serde_json::Error> {
        EventBody::decode(self.category, &self.body)
    }
}

/// Events of the request chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ChainEvent {
    Submitted {
        chain_id: String,
        request: ServiceRequest,
    },
    Decided(DecisionEvent),
}

/// Typed view of a stored event body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventBody {
    Chain(ChainEvent),
    Domain(DomainEvent),
    Subscription(SubscriptionChange),
    Delivery(DeliveryAttempt),
}

impl EventBody {
    pub fn category(&self) -> Category {
        match self {
            EventBody::Chain(_) => Category::Decision,
            EventBody::Domain(_) => Category::Domain,
            EventBody::Subscription(_) => Category::Subscription,
            EventBody::Delivery(_) => Category::Delivery,
        }
    }

    pub fn to_value(&self) -> Value {
        let value = match self {
            EventBody::Chain(e) => serde_json::to_value(e),
            EventBody::Domain(e) => serde_json::to_value(e),
            EventBody::Subscription(e) => serde_json::to_value(e),
            EventBody::Delivery(e) => serde_json::to_value(e),
        };
        value.expect("event bodies always serialize")
    }

    pub fn decode(category: Category, body: &Value) -> Result<Self, serde_json::Error> {
        Ok(match category {
            Category::Decision => EventBody::Chain(ChainEvent::deserialize(body)?),
            Category::Domain => EventBody::Domain(DomainEvent::deserialize(body)?),
            Category::Subscription => {
                EventBody::Subscription(SubscriptionChange::deserialize(body)?)
            }
            Category::Delivery => EventBody::Delivery(DeliveryAttempt::deserialize(body)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("storage failure: {reason}")]
    StorageFailure { reason: String },
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::StorageFailure { .. } => "StorageFailure",
            StoreError::CorruptLog { .. } => "CorruptLog",
        }
    }

    pub(crate) fn storage(err: impl fmt::Display) -> Self {
        StoreError::StorageFailure {
            reason: err.to_string(),
        }
    }
}

/// A single-writer, append-only sequence of [`StoredEvent`]s.
pub trait EventLog: Send {
    /// Highest sequence number written so far, 0 when empty.
    fn last_seq(&self) -> u64;

    /// Appends the bodies as consecutive events, all stamped `recorded_at`.
    /// The batch is durable when this returns; on error nothing was appended.
    fn append_batch(
        &mut self,
        bodies: Vec<(Category, Value)>,
        recorded_at: Timestamp,
    ) -> Result<Vec<StoredEvent>, StoreError>;

    /// Every event in sequence order.
    fn events(&self) -> Result<Vec<StoredEvent>, StoreError>;

    fn append(
        &mut self,
        category: Category,
        body: Value,
        recorded_at: Timestamp,
    ) -> Result<u64, StoreError> {
        let stored = self.append_batch(vec![(category, body)], recorded_at)?;
        Ok(stored[0].seq)
    }
}

pub(crate) fn stamp(
    first_seq: u64,
    bodies: Vec<(Category, Value)>,
    recorded_at: Timestamp,
) -> Vec<StoredEvent> {
    bodies
        .into_iter()
        .zip(first_seq..)
        .map(|((category, body), seq)| StoredEvent {
            seq,
            recorded_at,
            category,
            body,
        })
        .collect()
}

#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    events: Vec<StoredEvent>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// The log rendered exactly as [`FileLog`] would write it.
    pub fn to_jsonl(&self) -> String {
        render_jsonl(&self.events)
    }
}

impl EventLog for MemoryLog {
    fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    fn append_batch(
        &mut self,
        bodies: Vec<(Category, Value)>,
        recorded_at: Timestamp,
    ) -> Result<Vec<StoredEvent>, StoreError> {
        let stored = stamp(self.last_seq() + 1, bodies, recorded_at);
        self.events.extend(stored.iter().cloned());
        Ok(stored)
    }

    fn events(&self) -> Result<Vec<StoredEvent>, StoreError> {
        Ok(self.events.clone())
    }
}

pub fn render_jsonl(events: &[StoredEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&event.to_line());
        out.push('\n');
    }
    out
}

/// Result of parsing log text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLog {
    pub events: Vec<StoredEvent>,
    /// Byte length of the accepted prefix.
    pub valid_len: usize,
    /// 1-based line number of a dropped truncated tail, if any.
    pub dropped_tail: Option<usize>,
}

/// Parses JSON Lines log text, checking line shape and sequence density.
/// A final line without its LF terminator is a crash artifact: an error under
/// [`TailPolicy::Reject`], skipped under [`TailPolicy::DropTruncated`].
pub fn parse_log(text: &str, tail: TailPolicy) -> Result<ParsedLog, StoreError> {
    let mut events = Vec::new();
    let mut offset = 0;
    let mut line_no = 0;
    let mut dropped_tail = None;
    while offset < text.len() {
        line_no += 1;
        let rest = &text[offset..];
        let Some(end) = rest.find('\n') else {
            match tail {
                TailPolicy::DropTruncated => {
                    dropped_tail = Some(line_no);
                    break;
                }
                TailPolicy::Reject => {
                    return Err(StoreError::CorruptLog {
                        line: line_no,
                        reason: "truncated final line (no LF terminator)".into(),
                    })
                }
            }
        };
        let line = &rest[..end];
        let corrupt = |reason: String| StoreError::CorruptLog {
            line: line_no,
            reason,
        };
        let event: StoredEvent =
            serde_json::from_str(line).map_err(|e| corrupt(format!("unreadable event: {e}")))?;
        let expected = events.len() as u64 + 1;
        if event.seq != expected {
            return Err(corrupt(format!(
                "sequence {} where {expected} was expected",
                event.seq
            )));
        }
        event
            .decode()
            .map_err(|e| corrupt(format!("bad {} body: {e}", event.category)))?;
        events.push(event);
        offset += end + 1;
    }
    Ok(ParsedLog {
        events,
        valid_len: offset,
        dropped_tail,
    })
}
