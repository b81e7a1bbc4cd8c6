//! The state rebuilt from the event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainInstance, ChainRegistry, RequestStatus};
use crate::notify::NotificationHub;
use crate::store::{ChainEvent, EventBody, StoreError, StoredEvent};

/// Every chain instance plus the notification hub, as of `last_seq`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateState {
    last_seq: u64,
    requests: BTreeMap<String, ChainInstance>,
    hub: NotificationHub,
}

impl AggregateState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn instance(&self, request_id: &str) -> Option<&ChainInstance> {
        self.requests.get(request_id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &ChainInstance> {
        self.requests.values()
    }

    pub fn hub(&self) -> &NotificationHub {
        &self.hub
    }

    /// Pending instances whose current tier is `tier_id`, oldest submission
    /// first, ties by request id.
    pub fn pending_for_tier(&self, tier_id: &str, registry: &ChainRegistry) -> Vec<&ChainInstance> {
        let mut out: Vec<&ChainInstance> = self
            .requests
            .values()
            .filter(|i| i.status == RequestStatus::Pending)
            .filter(|i| {
                registry
                    .by_chain_id(&i.chain_id)
                    .and_then(|c| c.tier(i.current_tier_index))
                    .is_some_and(|t| t.tier_id == tier_id)
            })
            .collect();
        out.sort_by(|a, b| {
            (a.request.submitted_at, &a.request.request_id)
                .cmp(&(b.request.submitted_at, &b.request.request_id))
        });
        out
    }

    /// Deterministic JSON rendering used to compare states byte for byte.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("state always serializes")
    }

    /// Folds one stored event into the state. The error is a human-readable
    /// reason; callers attach the log position.
    pub fn apply(&mut self, event: &StoredEvent, registry: &ChainRegistry) -> Result<(), String> {
        if event.seq != self.last_seq + 1 {
            return Err(format!(
                "sequence {} does not follow {}",
                event.seq, self.last_seq
            ));
        }
        let body = event
            .decode()
            .map_err(|e| format!("bad {} body: {e}", event.category))?;
        match body {
            EventBody::Chain(ChainEvent::Submitted { chain_id, request }) => {
                let config = registry
                    .by_chain_id(&chain_id)
                    .ok_or_else(|| format!("chain `{chain_id}` is not configured"))?;
                if config.applies_to_kind != request.kind {
                    return Err(format!(
                        "chain `{chain_id}` does not handle `{}` requests",
                        request.kind
                    ));
                }
                request.validate().map_err(|e| e.to_string())?;
                if self.requests.contains_key(&request.request_id) {
                    return Err(format!("request `{}` submitted twice", request.request_id));
                }
                self.requests.insert(
                    request.request_id.clone(),
                    ChainInstance::new(request, chain_id),
                );
            }
            EventBody::Chain(ChainEvent::Decided(decision)) => {
                if decision.seq != event.seq {
                    return Err(format!(
                        "decision carries seq {} inside event {}",
                        decision.seq, event.seq
                    ));
                }
                let instance = self.requests.get_mut(&decision.request_id).ok_or_else(|| {
                    format!("decision for unknown request `{}`", decision.request_id)
                })?;
                let config = registry
                    .by_chain_id(&instance.chain_id)
                    .ok_or_else(|| format!("chain `{}` is not configured", instance.chain_id))?;
                instance
                    .apply_decision(decision, config)
                    .map_err(|e| e.to_string())?;
            }
            EventBody::Domain(domain) => {
                if domain.event_seq != event.seq {
                    return Err(format!(
                        "domain event carries seq {} inside event {}",
                        domain.event_seq, event.seq
                    ));
                }
                self.hub.publish(domain).map_err(|e| e.to_string())?;
            }
            EventBody::Subscription(change) => {
                self.hub
                    .apply_subscription(change)
                    .map_err(|e| e.to_string())?;
            }
            EventBody::Delivery(attempt) => {
                self.hub
                    .apply_attempt(&attempt)
                    .map_err(|e| e.to_string())?;
            }
        }
        self.last_seq = event.seq;
        Ok(())
    }
}

/// Rebuilds state from `events`, stopping after `up_to_seq` when given.
/// Events are expected in log order, so event `n` sits on line `n`.
pub fn replay(
    events: &[StoredEvent],
    registry: &ChainRegistry,
    up_to_seq: Option<u64>,
) -> Result<AggregateState, StoreError> {
    let mut state = AggregateState::new();
    for (index, event) in events.iter().enumerate() {
        if up_to_seq.is_some_and(|limit| event.seq > limit) {
            break;
        }
        state
            .apply(event, registry)
            .map_err(|reason| StoreError::CorruptLog {
                line: index + 1,
                reason,
            })?;
    }
    Ok(state)
}
