//! Event-sourced banking request workflows.
//!
//! Two halves share one append-only log:
//!
//! - [`chain`]: service requests climb an ordered chain of handler tiers,
//!   each with an authority limit, until approved or rejected.
//! - [`notify`]: customers subscribe to topics on a channel and published
//!   events fan out to them through an outbox with capped retries.
//!
//! [`Engine`] is the front door. It validates each operation, writes the
//! resulting events to an [`EventLog`](store::EventLog), and folds them into
//! an [`AggregateState`] that [`replay`] can rebuild from the log alone.

pub mod catalog;
pub mod chain;
pub mod engine;
pub mod notify;
pub mod scenario;
pub mod state;
pub mod store;
pub mod time;

pub use chain::{
    AuthorityLimit, ChainConfig, ChainError, ChainInstance, ChainRegistry, Decision,
    DecisionAction, DecisionEvent, HandlerTier, RequestKind, RequestStatus, ServiceRequest,
};
pub use engine::{Engine, EngineError, InboxEntry, NewRequest, RequestView};
pub use notify::{
    Channel, DeliveryRecord, DeliveryReport, DeliveryStatus, DomainEvent, NotificationHub,
    RetryPolicy, Sinks, Subscription,
};
pub use state::{replay, AggregateState};
pub use store::{Category, EventLog, FileLog, MemoryLog, StoreError, StoredEvent, TailPolicy};
pub use time::{Clock, SteppingClock, SystemClock, Timestamp};
