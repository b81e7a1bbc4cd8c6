use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{AttemptOutcome, Channel, DeliveryAttempt, DeliveryRecord, DomainEvent, HubError};

/// Delivery backend for one channel. Sinks only transport; the hub keeps
/// attempts, statuses and errors.
pub trait ChannelSink: Send + Sync {
    fn channel(&self) -> Channel;

    fn deliver(&self, record: &DeliveryRecord, event: &DomainEvent) -> Result<(), String>;
}

#[derive(Clone, Default)]
pub struct Sinks {
    by_channel: HashMap<Channel, Arc<dyn ChannelSink>>,
}

impl Sinks {
    pub fn new() -> Self {
        Self::default()
    }

    /// A [`LoggingSink`] for every channel.
    pub fn logging() -> Self {
        let mut sinks = Sinks::new();
        for channel in Channel::ALL {
            sinks.register(Arc::new(LoggingSink::new(channel)));
        }
        sinks
    }

    /// Replaces any sink already registered for the same channel.
    pub fn register(&mut self, sink: Arc<dyn ChannelSink>) -> &mut Self {
        self.by_channel.insert(sink.channel(), sink);
        self
    }

    pub fn get(&self, channel: Channel) -> Result<&Arc<dyn ChannelSink>, HubError> {
        self.by_channel
            .get(&channel)
            .ok_or(HubError::UnknownChannelSink { channel })
    }
}

impl std::fmt::Debug for Sinks {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut channels: Vec<_> = self.by_channel.keys().collect();
        channels.sort();
        f.debug_struct("Sinks")
            .field("channels", &channels)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// `backoff[i]` is the pause before retry `i + 1`; the last entry repeats.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff: Vec::new(),
        }
    }
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, backoff: Vec<Duration>) -> Self {
        RetryPolicy {
            max_attempts,
            backoff,
        }
    }

    fn pause_before(&self, retry: u32) -> Duration {
        if self.backoff.is_empty() || retry == 0 {
            return Duration::ZERO;
        }
        let i = (retry as usize - 1).min(self.backoff.len() - 1);
        self.backoff[i]
    }
}

/// Attempts one queued record until it is delivered or its budget is spent,
/// handing each outcome to `record` as it happens. Returns the number of
/// outcomes recorded.
pub fn settle_record<E>(
    sink: &dyn ChannelSink,
    record: &DeliveryRecord,
    event: &DomainEvent,
    policy: &RetryPolicy,
    mut record_outcome: impl FnMut(DeliveryAttempt) -> Result<(), E>,
) -> Result<usize, E> {
    let mut current = record.clone();
    let mut recorded = 0;
    loop {
        if current.attempts >= policy.max_attempts {
            let error = current
                .last_error
                .clone()
                .unwrap_or_else(|| "retry budget exhausted".into());
            record_outcome(DeliveryAttempt {
                delivery_id: current.delivery_id.clone(),
                outcome: AttemptOutcome::Failed { error },
            })?;
            return Ok(recorded + 1);
        }
        let pause = policy.pause_before(current.attempts);
        if !pause.is_zero() {
            std::thread::sleep(pause);
        }
        let result = sink.deliver(&current, event);
        current.attempts += 1;
        let outcome = match result {
            Ok(()) => AttemptOutcome::Delivered,
            Err(error) if current.attempts >= policy.max_attempts => {
                AttemptOutcome::Failed { error }
            }
            Err(error) => {
                current.last_error = Some(error.clone());
                AttemptOutcome::Retrying { error }
            }
        };
        let settled = !matches!(outcome, AttemptOutcome::Retrying { .. });
        record_outcome(DeliveryAttempt {
            delivery_id: current.delivery_id.clone(),
            outcome,
        })?;
        recorded += 1;
        if settled {
            return Ok(recorded);
        }
    }
}

/// Always succeeds and keeps what it delivered. Doubles as an in-app inbox.
#[derive(Debug)]
pub struct MemorySink {
    channel: Channel,
    delivered: Mutex<Vec<(String, u64)>>,
}

impl MemorySink {
    pub fn new(channel: Channel) -> Self {
        MemorySink {
            channel,
            delivered: Mutex::new(Vec::new()),
        }
    }

    /// `(delivery_id, event_seq)` pairs in delivery order.
    pub fn delivered(&self) -> Vec<(String, u64)> {
        self.delivered.lock().expect("sink mutex poisoned").clone()
    }
}

impl ChannelSink for MemorySink {
    fn channel(&self) -> Channel {
        self.channel
    }

    fn deliver(&self, record: &DeliveryRecord, event: &DomainEvent) -> Result<(), String> {
        self.delivered
            .lock()
            .expect("sink mutex poisoned")
            .push((record.delivery_id.clone(), event.event_seq));
        Ok(())
    }
}

/// Fails the first `failures` attempts of every record, then succeeds.
/// The attempt number comes from the record, so the sink itself holds no
/// per-record state.
#[derive(Debug, Clone)]
pub struct ScriptedSink {
    channel: Channel,
    failures: u32,
}

impl ScriptedSink {
    pub fn new(channel: Channel, failures: u32) -> Self {
        ScriptedSink { channel, failures }
    }
}

impl ChannelSink for ScriptedSink {
    fn channel(&self) -> Channel {
        self.channel
    }

    fn deliver(&self, record: &DeliveryRecord, _event: &DomainEvent) -> Result<(), String> {
        if record.attempts < self.failures {
            Err(format!(
                "scripted failure {} of {}",
                record.attempts + 1,
                self.failures
            ))
        } else {
            Ok(())
        }
    }
}

/// Writes each delivery to the tracing log and reports success.
#[derive(Debug, Clone)]
pub struct LoggingSink {
    channel: Channel,
}

impl LoggingSink {
    pub fn new(channel: Channel) -> Self {
        LoggingSink { channel }
    }
}

impl ChannelSink for LoggingSink {
    fn channel(&self) -> Channel {
        self.channel
    }

    fn deliver(&self, record: &DeliveryRecord, event: &DomainEvent) -> Result<(), String> {
        tracing::info!(
            channel = %self.channel,
            delivery = %record.delivery_id,
            topic = %event.topic,
            subject = event.subject_ref.as_deref().unwrap_or("-"),
            "notification delivered"
        );
        Ok(())
    }
}
