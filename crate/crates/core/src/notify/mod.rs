//! Customer notification fan-out.
//!
//! Customers register [`Subscription`]s on a topic and a channel. Publishing a
//! [`DomainEvent`] creates one queued [`DeliveryRecord`] per active matching
//! subscription; the outbox driver then pushes each record through the
//! [`ChannelSink`] for its channel, retrying failures up to a cap.

mod outbox;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub use outbox::{
    settle_record, ChannelSink, LoggingSink, MemorySink, RetryPolicy, ScriptedSink, Sinks,
};

/// Topic that matches every published event.
pub const WILDCARD_TOPIC: &str = "*";

/// Topics the engine publishes on its own.
pub mod topics {
    pub const REQUEST_SUBMITTED: &str = "request.submitted";
    pub const REQUEST_ESCALATED: &str = "request.escalated";
    pub const REQUEST_APPROVED: &str = "request.approved";
    pub const REQUEST_REJECTED: &str = "request.rejected";
    pub const SERVICE_ADDED: &str = "service.added";
    pub const BILL_TELEPHONE_DUE: &str = "bill.telephone.due";
    pub const LOAN_INTEREST_DUE: &str = "loan.interest.due";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Email,
    Sms,
    InApp,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Email, Channel::Sms, Channel::InApp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Email => "email",
            Channel::Sms => "sms",
            Channel::InApp => "in_app",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| HubError::InvalidChannel { channel: s.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub subscription_id: String,
    pub customer_id: String,
    pub topic: String,
    pub channel: Channel,
    pub active: bool,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainEvent {
    pub event_seq: u64,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_ref: Option<String>,
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
    pub occurred_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Queued,
    Delivered,
    Failed,
}

impl DeliveryStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            DeliveryStatus::Queued => "queued",
            DeliveryStatus::Delivered => "delivered",
            DeliveryStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub delivery_id: String,
    pub event_seq: u64,
    pub subscription_id: String,
    pub channel: Channel,
    pub status: DeliveryStatus,
    pub attempts: u32,
    #[serde(default)]
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub matched: usize,
    pub queued: usize,
}

/// Result of one sink call for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Delivered,
    /// Failed, but the record stays queued for another try.
    Retrying {
        error: String,
    },
    /// Failed and the retry budget is spent.
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryAttempt {
    pub delivery_id: String,
    #[serde(flatten)]
    pub outcome: AttemptOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum SubscriptionChange {
    Subscribed(Subscription),
    Unsubscribed { subscription_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HubError {
    #[error("invalid topic `{topic}`: {reason}")]
    InvalidTopic { topic: String, reason: String },
    #[error("invalid channel `{channel}`; expected email, sms or in_app")]
    InvalidChannel { channel: String },
    #[error("unknown subscription `{subscription_id}`")]
    UnknownSubscription { subscription_id: String },
    #[error("invalid event: {reason}")]
    InvalidEvent { reason: String },
    #[error("no sink registered for channel `{channel}`")]
    UnknownChannelSink { channel: Channel },
    #[error("unknown delivery `{delivery_id}`")]
    UnknownDelivery { delivery_id: String },
    #[error("subscription change rejected: {reason}")]
    Conflict { reason: String },
}

impl HubError {
    pub fn code(&self) -> &'static str {
        match self {
            HubError::InvalidTopic { .. } => "InvalidTopic",
            HubError::InvalidChannel { .. } => "InvalidChannel",
            HubError::UnknownSubscription { .. } => "UnknownSubscription",
            HubError::InvalidEvent { .. } => "InvalidEvent",
            HubError::UnknownChannelSink { .. } => "UnknownChannelSink",
            HubError::UnknownDelivery { .. } => "UnknownDelivery",
            HubError::Conflict { .. } => "Conflict",
        }
    }
}

/// Subscription topics: `*`, or dot-separated segments of `[a-z0-9_-]`.
pub fn validate_topic(topic: &str) -> Result<(), HubError> {
    let invalid = |reason: &str| HubError::InvalidTopic {
        topic: topic.into(),
        reason: reason.into(),
    };
    if topic.is_empty() {
        return Err(invalid("must not be empty"));
    }
    if topic == WILDCARD_TOPIC {
        return Ok(());
    }
    for segment in topic.split('.') {
        if segment.is_empty() {
            return Err(invalid("empty segment"));
        }
        if !segment
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
        {
            return Err(invalid(
                "segments use lower-case letters, digits, `_` and `-`",
            ));
        }
    }
    Ok(())
}

fn topic_matches(subscribed: &str, published: &str) -> bool {
    subscribed == WILDCARD_TOPIC || subscribed == published
}

type ActiveKey = (String, String, Channel);

/// Subscription registry, published events and the delivery outbox.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NotificationHub {
    subscriptions: BTreeMap<String, Subscription>,
    events: BTreeMap<u64, DomainEvent>,
    deliveries: Vec<DeliveryRecord>,
    #[serde(skip)]
    active: HashMap<ActiveKey, String>,
    #[serde(skip)]
    delivery_index: HashMap<String, usize>,
}

impl NotificationHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscription(&self, subscription_id: &str) -> Option<&Subscription> {
        self.subscriptions.get(subscription_id)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.values()
    }

    pub fn active_subscription(
        &self,
        customer_id: &str,
        topic: &str,
        channel: Channel,
    ) -> Option<&Subscription> {
        let key = (customer_id.to_string(), topic.to_string(), channel);
        self.active
            .get(&key)
            .and_then(|id| self.subscriptions.get(id))
    }

    pub fn event(&self, event_seq: u64) -> Option<&DomainEvent> {
        self.events.get(&event_seq)
    }

    pub fn last_event_seq(&self) -> u64 {
        self.events.keys().next_back().copied().unwrap_or(0)
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    pub fn delivery(&self, delivery_id: &str) -> Option<&DeliveryRecord> {
        self.delivery_index
            .get(delivery_id)
            .map(|&i| &self.deliveries[i])
    }

    pub fn queued(&self) -> impl Iterator<Item = &DeliveryRecord> {
        self.deliveries
            .iter()
            .filter(|r| r.status == DeliveryStatus::Queued)
    }

    /// Registers `customer_id` on `topic` via `channel`, or returns the
    /// active subscription that already covers the triple.
    pub fn subscribe(
        &mut self,
        customer_id: &str,
        topic: &str,
        channel: Channel,
        subscription_id: impl Into<String>,
        created_at: Timestamp,
    ) -> Result<Subscription, HubError> {
        validate_topic(topic)?;
        if let Some(existing) = self.active_subscription(customer_id, topic, channel) {
            return Ok(existing.clone());
        }
        self.apply_subscription(SubscriptionChange::Subscribed(Subscription {
            subscription_id: subscription_id.into(),
            customer_id: customer_id.into(),
            topic: topic.into(),
            channel,
            active: true,
            created_at,
        }))
    }

    /// Deactivates a subscription. Already inactive ones are returned as is.
    pub fn unsubscribe(&mut self, subscription_id: &str) -> Result<Subscription, HubError> {
        let sub = self.subscriptions.get(subscription_id).ok_or_else(|| {
            HubError::UnknownSubscription {
                subscription_id: subscription_id.into(),
            }
        })?;
        if !sub.active {
            return Ok(sub.clone());
        }
        self.apply_subscription(SubscriptionChange::Unsubscribed {
            subscription_id: subscription_id.into(),
        })
    }

    /// Applies a recorded subscription change. Rejects changes that would
    /// break the one-active-subscription-per-triple rule.
    pub fn apply_subscription(
        &mut self,
        change: SubscriptionChange,
    ) -> Result<Subscription, HubError> {
        match change {
            SubscriptionChange::Subscribed(sub) => {
                validate_topic(&sub.topic)?;
                if !sub.active {
                    return Err(HubError::Conflict {
                        reason: "new subscriptions start active".into(),
                    });
                }
                if self.subscriptions.contains_key(&sub.subscription_id) {
                    return Err(HubError::Conflict {
                        reason: format!("subscription id `{}` already used", sub.subscription_id),
                    });
                }
                let key = (sub.customer_id.clone(), sub.topic.clone(), sub.channel);
                if self.active.contains_key(&key) {
                    return Err(HubError::Conflict {
                        reason: format!(
                            "customer `{}` already has an active {} subscription on `{}`",
                            sub.customer_id, sub.channel, sub.topic
                        ),
                    });
                }
                self.active.insert(key, sub.subscription_id.clone());
                self.subscriptions
                    .insert(sub.subscription_id.clone(), sub.clone());
                Ok(sub)
            }
            SubscriptionChange::Unsubscribed { subscription_id } => {
                let sub = self
                    .subscriptions
                    .get_mut(&subscription_id)
                    .ok_or_else(|| HubError::UnknownSubscription {
                        subscription_id: subscription_id.clone(),
                    })?;
                if sub.active {
                    sub.active = false;
                    self.active
                        .remove(&(sub.customer_id.clone(), sub.topic.clone(), sub.channel));
                }
                Ok(sub.clone())
            }
        }
    }

    pub fn validate_event(&self, event: &DomainEvent) -> Result<(), HubError> {
        let invalid = |reason: String| HubError::InvalidEvent { reason };
        if event.topic.is_empty() {
            return Err(invalid("topic must not be empty".into()));
        }
        if event.topic == WILDCARD_TOPIC {
            return Err(invalid(
                "`*` is a subscription wildcard, not a publishable topic".into(),
            ));
        }
        validate_topic(&event.topic).map_err(|e| invalid(e.to_string()))?;
        if event.event_seq <= self.last_event_seq() {
            return Err(invalid(format!(
                "event_seq {} is not above the last published {}",
                event.event_seq,
                self.last_event_seq()
            )));
        }
        Ok(())
    }

    /// Fans `event` out to every active subscription on its topic or on `*`.
    pub fn publish(&mut self, event: DomainEvent) -> Result<DeliveryReport, HubError> {
        self.validate_event(&event)?;
        let matching: Vec<(String, Channel)> = self
            .subscriptions
            .values()
            .filter(|s| s.active && topic_matches(&s.topic, &event.topic))
            .map(|s| (s.subscription_id.clone(), s.channel))
            .collect();
        for (subscription_id, channel) in &matching {
            let delivery_id = format!("dlv-{}-{}", event.event_seq, subscription_id);
            self.delivery_index
                .insert(delivery_id.clone(), self.deliveries.len());
            self.deliveries.push(DeliveryRecord {
                delivery_id,
                event_seq: event.event_seq,
                subscription_id: subscription_id.clone(),
                channel: *channel,
                status: DeliveryStatus::Queued,
                attempts: 0,
                last_error: None,
            });
        }
        self.events.insert(event.event_seq, event);
        Ok(DeliveryReport {
            matched: matching.len(),
            queued: matching.len(),
        })
    }

    /// Records the outcome of one delivery attempt on a queued record.
    pub fn apply_attempt(
        &mut self,
        attempt: &DeliveryAttempt,
    ) -> Result<&DeliveryRecord, HubError> {
        let index = *self
            .delivery_index
            .get(&attempt.delivery_id)
            .ok_or_else(|| HubError::UnknownDelivery {
                delivery_id: attempt.delivery_id.clone(),
            })?;
        let record = &mut self.deliveries[index];
        if record.status != DeliveryStatus::Queued {
            return Err(HubError::Conflict {
                reason: format!(
                    "delivery `{}` is already {}",
                    record.delivery_id,
                    record.status.as_str()
                ),
            });
        }
        match &attempt.outcome {
            AttemptOutcome::Delivered => {
                record.attempts += 1;
                record.status = DeliveryStatus::Delivered;
            }
            AttemptOutcome::Retrying { error } => {
                record.attempts += 1;
                record.last_error = Some(error.clone());
            }
            AttemptOutcome::Failed { error } => {
                record.attempts += 1;
                record.status = DeliveryStatus::Failed;
                record.last_error = Some(error.clone());
            }
        }
        Ok(record)
    }

    /// Every record addressed to the customer's subscriptions, oldest event
    /// first.
    pub fn deliveries_for(&self, customer_id: &str) -> Vec<(DeliveryRecord, DomainEvent)> {
        let mut out: Vec<(DeliveryRecord, DomainEvent)> = self
            .deliveries
            .iter()
            .filter(|r| {
                self.subscriptions
                    .get(&r.subscription_id)
                    .is_some_and(|s| s.customer_id == customer_id)
            })
            .filter_map(|r| {
                self.events
                    .get(&r.event_seq)
                    .map(|e| (r.clone(), e.clone()))
            })
            .collect();
        out.sort_by(|a, b| {
            (a.0.event_seq, &a.0.subscription_id).cmp(&(b.0.event_seq, &b.0.subscription_id))
        });
        out
    }

    /// Drives every queued record to delivered or failed. Returns the number
    /// of recorded attempts.
    pub fn drive_outbox(&mut self, sinks: &Sinks, policy: &RetryPolicy) -> Result<usize, HubError> {
        let pending: Vec<DeliveryRecord> = self.queued().cloned().collect();
        for record in &pending {
            sinks.get(record.channel)?;
        }
        let mut transitions = 0;
        for record in pending {
            let sink = sinks.get(record.channel)?;
            let event = self.events[&record.event_seq].clone();
            transitions += settle_record(sink.as_ref(), &record, &event, policy, |attempt| {
                self.apply_attempt(&attempt).map(|_| ())
            })?;
        }
        Ok(transitions)
    }
}

impl<'de> Deserialize<'de> for NotificationHub {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            subscriptions: BTreeMap<String, Subscription>,
            events: BTreeMap<u64, DomainEvent>,
            deliveries: Vec<DeliveryRecord>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let active = raw
            .subscriptions
            .values()
            .filter(|s| s.active)
            .map(|s| {
                (
                    (s.customer_id.clone(), s.topic.clone(), s.channel),
                    s.subscription_id.clone(),
                )
            })
            .collect();
        let delivery_index = raw
            .deliveries
            .iter()
            .enumerate()
            .map(|(i, r)| (r.delivery_id.clone(), i))
            .collect();
        Ok(NotificationHub {
            subscriptions: raw.subscriptions,
            events: raw.events,
            deliveries: raw.deliveries,
            active,
            delivery_index,
        })
    }
}
