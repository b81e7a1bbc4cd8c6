//! Event-sourced facade over the chain engine and notification hub.
//!
//! Every mutation is validated against the current state, written to the log
//! as one contiguous batch, and only then folded into the in-memory state
//! through the same [`AggregateState::apply`] that replay uses. A failed
//! operation appends nothing.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    self, AuthorityLimit, ChainError, ChainInstance, ChainRegistry, Decision, DecisionAction,
    DecisionEvent, MinorUnits, RequestKind, RequestStatus, ServiceRequest,
};
use crate::notify::{
    self, settle_record, topics, Channel, DeliveryAttempt, DeliveryRecord, DeliveryReport,
    DomainEvent, HubError, RetryPolicy, Sinks, Subscription, SubscriptionChange,
};
use crate::state::{replay, AggregateState};
use crate::store::{
    ChainEvent, EventBody, EventLog, FileLog, MemoryLog, StoreError, StoredEvent, TailPolicy,
};
use crate::time::{Clock, SystemClock, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Hub(#[from] HubError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Chain(e) => e.code(),
            EngineError::Hub(e) => e.code(),
            EngineError::Store(e) => e.code(),
        }
    }
}

/// Fields a caller supplies when submitting a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewRequest {
    /// Generated as `req-<seq>` when absent.
    #[serde(default)]
    pub request_id: Option<String>,
    pub customer_id: String,
    pub kind: RequestKind,
    pub amount: MinorUnits,
    pub currency: String,
    #[serde(default)]
    pub details: BTreeMap<String, String>,
    /// Defaults to the engine clock.
    #[serde(default)]
    pub submitted_at: Option<Timestamp>,
}

impl NewRequest {
    pub fn new(
        customer_id: impl Into<String>,
        kind: RequestKind,
        amount: MinorUnits,
        currency: impl Into<String>,
    ) -> Self {
        NewRequest {
            request_id: None,
            customer_id: customer_id.into(),
            kind,
            amount,
            currency: currency.into(),
            details: BTreeMap::new(),
            submitted_at: None,
        }
    }

    pub fn with_id(mut self, request_id: impl Into<String>) -> Self {
        self.request_id = Some(request_id.into());
        self
    }
}

/// A chain instance joined with its configured tier, as shown to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestView {
    pub request_id: String,
    pub customer_id: String,
    pub kind: RequestKind,
    pub amount: MinorUnits,
    pub currency: String,
    pub submitted_at: Timestamp,
    pub details: BTreeMap<String, String>,
    pub chain_id: String,
    pub status: RequestStatus,
    pub current_tier_index: usize,
    pub current_tier_id: String,
    pub current_tier_name: String,
    pub current_authority_limit: AuthorityLimit,
    pub is_last_tier: bool,
    pub history: Vec<DecisionEvent>,
}

impl RequestView {
    pub fn new(instance: &ChainInstance, registry: &ChainRegistry) -> Self {
        let config = registry.by_chain_id(&instance.chain_id);
        let tier = config.and_then(|c| c.tier(instance.current_tier_index));
        let req = &instance.request;
        RequestView {
            request_id: req.request_id.clone(),
            customer_id: req.customer_id.clone(),
            kind: req.kind,
            amount: req.amount,
            currency: req.currency.clone(),
            submitted_at: req.submitted_at,
            details: req.details.clone(),
            chain_id: instance.chain_id.clone(),
            status: instance.status,
            current_tier_index: instance.current_tier_index,
            current_tier_id: tier.map(|t| t.tier_id.clone()).unwrap_or_default(),
            current_tier_name: tier.map(|t| t.display_name.clone()).unwrap_or_default(),
            current_authority_limit: tier
                .map(|t| t.authority_limit)
                .unwrap_or(AuthorityLimit::Limited(0)),
            is_last_tier: config.is_some_and(|c| instance.current_tier_index + 1 == c.tiers.len()),
            history: instance.history.clone(),
        }
    }
}

/// One entry of a customer's notification inbox.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxEntry {
    pub delivery: DeliveryRecord,
    pub event: DomainEvent,
}

struct Inner {
    state: AggregateState,
    log: Box<dyn EventLog>,
}

impl Inner {
    fn next_seq(&self) -> u64 {
        self.log.last_seq() + 1
    }

    fn commit(
        &mut self,
        bodies: Vec<EventBody>,
        now: Timestamp,
        registry: &ChainRegistry,
    ) -> Result<Vec<StoredEvent>, EngineError> {
        let batch = bodies
            .iter()
            .map(|b| (b.category(), b.to_value()))
            .collect();
        let stored = self.log.append_batch(batch, now)?;
        for event in &stored {
            if let Err(reason) = self.state.apply(event, registry) {
                panic!(
                    "event {} was validated but does not apply: {reason}",
                    event.seq
                );
            }
        }
        Ok(stored)
    }
}

pub struct Engine {
    registry: ChainRegistry,
    clock: Arc<dyn Clock>,
    sinks: Sinks,
    inner: Mutex<Inner>,
    in_flight: Mutex<HashSet<String>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("registry", &self.registry)
            .field("sinks", &self.sinks)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Rebuilds state from `log` and continues appending to it.
    pub fn open(
        registry: ChainRegistry,
        log: Box<dyn EventLog>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, EngineError> {
        let events = log.events()?;
        let state = replay(&events, &registry, None)?;
        Ok(Engine {
            registry,
            clock,
            sinks: Sinks::logging(),
            inner: Mutex::new(Inner { state, log }),
            in_flight: Mutex::new(HashSet::new()),
        })
    }

    pub fn open_file(
        registry: ChainRegistry,
        path: impl AsRef<Path>,
        tail: TailPolicy,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, EngineError> {
        let log = FileLog::open(path, tail)?;
        Engine::open(registry, Box::new(log), clock)
    }

    /// Empty in-memory engine on the system clock.
    pub fn in_memory(registry: ChainRegistry) -> Self {
        Engine::open(registry, Box::new(MemoryLog::new()), Arc::new(SystemClock))
            .expect("empty log replays")
    }

    pub fn with_sinks(mut self, sinks: Sinks) -> Self {
        self.sinks = sinks;
        self
    }

    pub fn registry(&self) -> &ChainRegistry {
        &self.registry
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("engine state mutex poisoned")
    }

    pub fn submit(&self, new: NewRequest) -> Result<ChainInstance, EngineError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let base = inner.next_seq();
        let request_id = new.request_id.unwrap_or_else(|| format!("req-{base}"));
        if inner.state.instance(&request_id).is_some() {
            return Err(ChainError::InvalidRequest {
                field: "request_id".into(),
                reason: format!("`{request_id}` already exists"),
            }
            .into());
        }
        let config = self
            .registry
            .for_kind(new.kind)
            .ok_or(ChainError::UnknownKind { kind: new.kind })?;
        let request = ServiceRequest {
            request_id: request_id.clone(),
            customer_id: new.customer_id,
            kind: new.kind,
            amount: new.amount,
            currency: new.currency,
            submitted_at: new.submitted_at.unwrap_or(now),
            details: new.details,
        };
        let instance = chain::submit_request(request.clone(), config, base)?;

        let mut bodies = vec![EventBody::Chain(ChainEvent::Submitted {
            chain_id: config.chain_id.clone(),
            request,
        })];
        bodies.extend(
            instance
                .history
                .iter()
                .map(|d| EventBody::Chain(ChainEvent::Decided(d.clone()))),
        );
        let mut domain_seq = base + bodies.len() as u64;
        let mut domain = vec![request_event(
            domain_seq,
            topics::REQUEST_SUBMITTED,
            &instance,
            None,
            now,
        )];
        for d in &instance.history {
            domain_seq += 1;
            domain.push(request_event(
                domain_seq,
                topics::REQUEST_ESCALATED,
                &instance,
                Some(d),
                now,
            ));
        }
        bodies.extend(domain.into_iter().map(EventBody::Domain));
        inner.commit(bodies, now, &self.registry)?;
        Ok(inner
            .state
            .instance(&request_id)
            .cloned()
            .expect("just committed"))
    }

    pub fn decide(
        &self,
        request_id: &str,
        decision: Decision,
    ) -> Result<ChainInstance, EngineError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let instance =
            inner
                .state
                .instance(request_id)
                .ok_or_else(|| ChainError::UnknownRequest {
                    request_id: request_id.into(),
                })?;
        let config = self
            .registry
            .by_chain_id(&instance.chain_id)
            .ok_or_else(|| ChainError::UnknownTier {
                tier_id: decision.tier_id.clone(),
            })?;
        let base = inner.next_seq();
        let next = chain::decide(instance, &decision, config, base, now)?;
        let event = next
            .history
            .last()
            .cloned()
            .expect("decide appends history");
        let topic = match event.action {
            DecisionAction::Approve => topics::REQUEST_APPROVED,
            DecisionAction::Reject => topics::REQUEST_REJECTED,
            DecisionAction::Escalate => topics::REQUEST_ESCALATED,
        };
        let domain = request_event(base + 1, topic, &next, Some(&event), now);
        inner.commit(
            vec![
                EventBody::Chain(ChainEvent::Decided(event)),
                EventBody::Domain(domain),
            ],
            now,
            &self.registry,
        )?;
        debug_assert_eq!(inner.state.instance(request_id), Some(&next));
        Ok(next)
    }

    pub fn request(&self, request_id: &str) -> Result<ChainInstance, EngineError> {
        self.lock()
            .state
            .instance(request_id)
            .cloned()
            .ok_or_else(|| {
                ChainError::UnknownRequest {
                    request_id: request_id.into(),
                }
                .into()
            })
    }

    pub fn view(&self, instance: &ChainInstance) -> RequestView {
        RequestView::new(instance, &self.registry)
    }

    pub fn chain_history(&self, request_id: &str) -> Result<Vec<DecisionEvent>, EngineError> {
        Ok(self.request(request_id)?.history)
    }

    pub fn pending_for_tier(&self, tier_id: &str) -> Result<Vec<ChainInstance>, EngineError> {
        if !self.registry.knows_tier(tier_id) {
            return Err(ChainError::UnknownTier {
                tier_id: tier_id.into(),
            }
            .into());
        }
        let inner = self.lock();
        Ok(inner
            .state
            .pending_for_tier(tier_id, &self.registry)
            .into_iter()
            .cloned()
            .collect())
    }

    /// Returns the subscription and whether it was newly created.
    pub fn subscribe(
        &self,
        customer_id: &str,
        topic: &str,
        channel: Channel,
    ) -> Result<(Subscription, bool), EngineError> {
        if customer_id.trim().is_empty() {
            return Err(ChainError::InvalidRequest {
                field: "customer_id".into(),
                reason: "must not be empty".into(),
            }
            .into());
        }
        notify::validate_topic(topic)?;
        let now = self.clock.now();
        let mut inner = self.lock();
        if let Some(existing) = inner
            .state
            .hub()
            .active_subscription(customer_id, topic, channel)
        {
            return Ok((existing.clone(), false));
        }
        let sub = Subscription {
            subscription_id: format!("sub-{}", inner.next_seq()),
            customer_id: customer_id.into(),
            topic: topic.into(),
            channel,
            active: true,
            created_at: now,
        };
        inner.commit(
            vec![EventBody::Subscription(SubscriptionChange::Subscribed(
                sub.clone(),
            ))],
            now,
            &self.registry,
        )?;
        Ok((sub, true))
    }

    /// Returns the subscription and whether this call deactivated it.
    pub fn unsubscribe(&self, subscription_id: &str) -> Result<(Subscription, bool), EngineError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let sub = inner
            .state
            .hub()
            .subscription(subscription_id)
            .cloned()
            .ok_or_else(|| HubError::UnknownSubscription {
                subscription_id: subscription_id.into(),
            })?;
        if !sub.active {
            return Ok((sub, false));
        }
        inner.commit(
            vec![EventBody::Subscription(SubscriptionChange::Unsubscribed {
                subscription_id: subscription_id.into(),
            })],
            now,
            &self.registry,
        )?;
        let updated = inner
            .state
            .hub()
            .subscription(subscription_id)
            .cloned()
            .expect("subscription exists");
        Ok((updated, true))
    }

    pub fn subscription(&self, subscription_id: &str) -> Option<Subscription> {
        self.lock()
            .state
            .hub()
            .subscription(subscription_id)
            .cloned()
    }

    /// Active and inactive subscriptions of one customer, by id.
    pub fn subscriptions_for(&self, customer_id: &str) -> Vec<Subscription> {
        self.lock()
            .state
            .hub()
            .subscriptions()
            .filter(|s| s.customer_id == customer_id)
            .cloned()
            .collect()
    }

    /// Requests submitted by one customer, oldest first.
    pub fn requests_for(&self, customer_id: &str) -> Vec<ChainInstance> {
        let mut out: Vec<ChainInstance> = self
            .lock()
            .state
            .instances()
            .filter(|i| i.request.customer_id == customer_id)
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            (a.request.submitted_at, &a.request.request_id)
                .cmp(&(b.request.submitted_at, &b.request.request_id))
        });
        out
    }

    /// Publishes a domain event on `topic`; returns the fan-out report and
    /// the event's sequence number.
    pub fn publish(
        &self,
        topic: &str,
        subject_ref: Option<String>,
        payload: BTreeMap<String, String>,
    ) -> Result<(DeliveryReport, u64), EngineError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let event = DomainEvent {
            event_seq: inner.next_seq(),
            topic: topic.into(),
            subject_ref,
            payload,
            occurred_at: now,
        };
        inner.state.hub().validate_event(&event)?;
        let seq = event.event_seq;
        inner.commit(vec![EventBody::Domain(event)], now, &self.registry)?;
        let queued = inner
            .state
            .hub()
            .deliveries()
            .iter()
            .filter(|r| r.event_seq == seq)
            .count();
        Ok((
            DeliveryReport {
                matched: queued,
                queued,
            },
            seq,
        ))
    }

    pub fn deliveries_for(&self, customer_id: &str) -> Vec<InboxEntry> {
        self.lock()
            .state
            .hub()
            .deliveries_for(customer_id)
            .into_iter()
            .map(|(delivery, event)| InboxEntry { delivery, event })
            .collect()
    }

    /// Pushes every queued delivery through its sink until it settles. Sink
    /// calls happen outside the state lock; each attempt is logged as it
    /// completes. Records already claimed by a concurrent driver are skipped.
    pub fn drive_outbox(&self, policy: &RetryPolicy) -> Result<usize, EngineError> {
        let claimed = {
            let inner = self.lock();
            let mut in_flight = self.in_flight.lock().expect("in-flight mutex poisoned");
            let hub = inner.state.hub();
            let work: Vec<(DeliveryRecord, DomainEvent)> = hub
                .queued()
                .filter(|r| !in_flight.contains(&r.delivery_id))
                .map(|r| {
                    (
                        r.clone(),
                        hub.event(r.event_seq).cloned().expect("event stored"),
                    )
                })
                .collect();
            for (record, _) in &work {
                self.sinks.get(record.channel)?;
            }
            for (record, _) in &work {
                in_flight.insert(record.delivery_id.clone());
            }
            work
        };
        let _release = Release {
            in_flight: &self.in_flight,
            ids: claimed.iter().map(|(r, _)| r.delivery_id.clone()).collect(),
        };
        let mut transitions = 0;
        for (record, event) in &claimed {
            let sink = self.sinks.get(record.channel)?;
            transitions += settle_record(sink.as_ref(), record, event, policy, |attempt| {
                self.record_attempt(attempt)
            })?;
        }
        Ok(transitions)
    }

    fn record_attempt(&self, attempt: DeliveryAttempt) -> Result<(), EngineError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        inner.commit(vec![EventBody::Delivery(attempt)], now, &self.registry)?;
        Ok(())
    }

    /// A consistent copy of the whole state.
    pub fn snapshot(&self) -> AggregateState {
        self.lock().state.clone()
    }

    pub fn events(&self) -> Result<Vec<StoredEvent>, EngineError> {
        Ok(self.lock().log.events()?)
    }
}

struct Release<'a> {
    in_flight: &'a Mutex<HashSet<String>>,
    ids: Vec<String>,
}

impl Drop for Release<'_> {
    fn drop(&mut self) {
        if let Ok(mut set) = self.in_flight.lock() {
            for id in &self.ids {
                set.remove(id);
            }
        }
    }
}

fn request_event(
    event_seq: u64,
    topic: &str,
    instance: &ChainInstance,
    decision: Option<&DecisionEvent>,
    occurred_at: Timestamp,
) -> DomainEvent {
    let req = &instance.request;
    let mut payload = BTreeMap::from([
        ("request_id".to_string(), req.request_id.clone()),
        ("customer_id".to_string(), req.customer_id.clone()),
        ("kind".to_string(), req.kind.to_string()),
        ("amount".to_string(), req.amount.to_string()),
        ("currency".to_string(), req.currency.clone()),
        ("status".to_string(), instance.status.to_string()),
    ]);
    if let Some(d) = decision {
        payload.insert("tier_id".into(), d.tier_id.clone());
        payload.insert("actor_id".into(), d.actor_id.clone());
        payload.insert("action".into(), d.action.to_string());
        if !d.reason.is_empty() {
            payload.insert("reason".into(), d.reason.clone());
        }
    }
    DomainEvent {
        event_seq,
        topic: topic.into(),
        subject_ref: Some(req.request_id.clone()),
        payload,
        occurred_at,
    }
}
