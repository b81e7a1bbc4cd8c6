//! Request escalation along an ordered chain of handler tiers.
//!
//! A submitted [`ServiceRequest`] starts at the first tier of the chain
//! configured for its kind. Each tier's officer either approves (only within
//! the tier's authority limit), rejects, or escalates to the next tier. The
//! functions here are pure: they take an instance and return the next one, so
//! the same code drives the live engine and log replay.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::time::Timestamp;

pub use config::{ChainRegistry, ConfigError, ConfigViolation};

/// Money in integer minor units (paise, cents).
pub type MinorUnits = u64;

/// Actor recorded on escalations the engine performs by itself.
pub const SYSTEM_ACTOR: &str = "system";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Loan,
    InsuranceClaim,
    AccountOpening,
}

impl RequestKind {
    pub const ALL: [RequestKind; 3] = [
        RequestKind::Loan,
        RequestKind::InsuranceClaim,
        RequestKind::AccountOpening,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RequestKind::Loan => "loan",
            RequestKind::InsuranceClaim => "insurance_claim",
            RequestKind::AccountOpening => "account_opening",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequestKind {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RequestKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ChainError::InvalidRequest {
                field: "kind".into(),
                reason: format!("`{s}` is not one of loan, insurance_claim, account_opening"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub request_id: String,
    pub customer_id: String,
    pub kind: RequestKind,
    pub amount: MinorUnits,
    pub currency: String,
    pub submitted_at: Timestamp,
    #[serde(default)]
    pub details: BTreeMap<String, String>,
}

impl ServiceRequest {
    pub fn validate(&self) -> Result<(), ChainError> {
        let invalid = |field: &str, reason: &str| ChainError::InvalidRequest {
            field: field.into(),
            reason: reason.into(),
        };
        if self.request_id.trim().is_empty() {
            return Err(invalid("request_id", "must not be empty"));
        }
        if self.customer_id.trim().is_empty() {
            return Err(invalid("customer_id", "must not be empty"));
        }
        if self.currency.len() != 3 || !self.currency.bytes().all(|b| b.is_ascii_uppercase()) {
            return Err(invalid(
                "currency",
                "must be a three-letter upper-case ISO 4217 code",
            ));
        }
        if self.kind == RequestKind::AccountOpening && self.amount != 0 {
            return Err(invalid("amount", "account opening requests carry amount 0"));
        }
        Ok(())
    }
}

/// Largest amount a tier may approve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuthorityLimit {
    Limited(MinorUnits),
    Unbounded,
}

impl AuthorityLimit {
    pub fn covers(&self, amount: MinorUnits) -> bool {
        match self {
            AuthorityLimit::Limited(limit) => amount <= *limit,
            AuthorityLimit::Unbounded => true,
        }
    }
}

impl PartialOrd for AuthorityLimit {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AuthorityLimit {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use AuthorityLimit::*;
        match (self, other) {
            (Limited(a), Limited(b)) => a.cmp(b),
            (Limited(_), Unbounded) => std::cmp::Ordering::Less,
            (Unbounded, Limited(_)) => std::cmp::Ordering::Greater,
            (Unbounded, Unbounded) => std::cmp::Ordering::Equal,
        }
    }
}

impl fmt::Display for AuthorityLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuthorityLimit::Limited(n) => write!(f, "{n}"),
            AuthorityLimit::Unbounded => f.write_str("UNBOUNDED"),
        }
    }
}

impl Serialize for AuthorityLimit {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            AuthorityLimit::Limited(n) => serializer.serialize_u64(*n),
            AuthorityLimit::Unbounded => serializer.serialize_str("UNBOUNDED"),
        }
    }
}

impl<'de> Deserialize<'de> for AuthorityLimit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Amount(u64),
            Word(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Amount(n) => Ok(AuthorityLimit::Limited(n)),
            Raw::Word(w) if w == "UNBOUNDED" => Ok(AuthorityLimit::Unbounded),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "authority_limit must be a non-negative integer or \"UNBOUNDED\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandlerTier {
    pub tier_id: String,
    pub display_name: String,
    pub order_index: usize,
    pub authority_limit: AuthorityLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub chain_id: String,
    pub applies_to_kind: RequestKind,
    #[serde(default)]
    pub auto_escalate_on_submit: bool,
    pub tiers: Vec<HandlerTier>,
}

impl ChainConfig {
    /// Builds a chain whose tiers are numbered by position.
    pub fn new(
        chain_id: impl Into<String>,
        kind: RequestKind,
        tiers: impl IntoIterator<Item = (String, AuthorityLimit)>,
    ) -> Self {
        ChainConfig {
            chain_id: chain_id.into(),
            applies_to_kind: kind,
            auto_escalate_on_submit: false,
            tiers: tiers
                .into_iter()
                .enumerate()
                .map(|(order_index, (tier_id, authority_limit))| HandlerTier {
                    display_name: tier_id.clone(),
                    tier_id,
                    order_index,
                    authority_limit,
                })
                .collect(),
        }
    }

    /// Branch section manager, zonal sanction committee, head office.
    pub fn default_for(kind: RequestKind) -> Self {
        let tiers = [
            ("BSC", AuthorityLimit::Limited(500_000)),
            ("OZSSC", AuthorityLimit::Limited(5_000_000)),
            ("HO", AuthorityLimit::Unbounded),
        ];
        ChainConfig::new(
            format!("{kind}-default"),
            kind,
            tiers.iter().map(|(id, limit)| (id.to_string(), *limit)),
        )
    }

    pub fn with_auto_escalate(mut self, on: bool) -> Self {
        self.auto_escalate_on_submit = on;
        self
    }

    pub fn tier_index(&self, tier_id: &str) -> Option<usize> {
        self.tiers.iter().position(|t| t.tier_id == tier_id)
    }

    pub fn tier(&self, index: usize) -> Option<&HandlerTier> {
        self.tiers.get(index)
    }

    /// Checks every tier invariant; returns all violations found.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let violations = config::violations(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { violations })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionAction {
    Approve,
    Reject,
    Escalate,
}

impl DecisionAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecisionAction::Approve => "approve",
            DecisionAction::Reject => "reject",
            DecisionAction::Escalate => "escalate",
        }
    }
}

impl fmt::Display for DecisionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionAction {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "approve" => Ok(DecisionAction::Approve),
            "reject" => Ok(DecisionAction::Reject),
            "escalate" => Ok(DecisionAction::Escalate),
            other => Err(ChainError::InvalidRequest {
                field: "action".into(),
                reason: format!("`{other}` is not one of approve, reject, escalate"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub seq: u64,
    pub request_id: String,
    pub tier_id: String,
    pub actor_id: String,
    pub action: DecisionAction,
    pub reason: String,
    pub decided_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Pending,
    Approved,
    Rejected,
}

impl RequestStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, RequestStatus::Pending)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RequestStatus::Pending => "pending",
            RequestStatus::Approved => "approved",
            RequestStatus::Rejected => "rejected",
        }
    }
}

impl fmt::Display for RequestStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One officer's decision, before it is stamped with a sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub tier_id: String,
    pub actor_id: String,
    pub action: DecisionAction,
    pub reason: String,
}

impl Decision {
    pub fn new(
        tier_id: impl Into<String>,
        actor_id: impl Into<String>,
        action: DecisionAction,
        reason: impl Into<String>,
    ) -> Self {
        Decision {
            tier_id: tier_id.into(),
            actor_id: actor_id.into(),
            action,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainInstance {
    pub request: ServiceRequest,
    pub chain_id: String,
    pub current_tier_index: usize,
    pub status: RequestStatus,
    pub history: Vec<DecisionEvent>,
}

impl ChainInstance {
    /// Fresh instance at the first tier with no decisions.
    pub fn new(request: ServiceRequest, chain_id: impl Into<String>) -> Self {
        ChainInstance {
            request,
            chain_id: chain_id.into(),
            current_tier_index: 0,
            status: RequestStatus::Pending,
            history: Vec::new(),
        }
    }

    pub fn request_id(&self) -> &str {
        &self.request.request_id
    }

    /// Records one decision after checking the chain rules that depend on the
    /// instance: not terminal, issued by the current tier, within authority
    /// for approvals, and a successor tier exists for escalations. Replay goes
    /// through here too, so a tampered log cannot produce an unsound state.
    pub fn apply_decision(
        &mut self,
        event: DecisionEvent,
        config: &ChainConfig,
    ) -> Result<(), ChainError> {
        if self.status.is_terminal() {
            return Err(ChainError::TerminalState {
                request_id: self.request.request_id.clone(),
                status: self.status,
            });
        }
        let current =
            config
                .tier(self.current_tier_index)
                .ok_or_else(|| ChainError::UnknownTier {
                    tier_id: format!("#{}", self.current_tier_index),
                })?;
        if current.tier_id != event.tier_id {
            return Err(ChainError::NotCurrentTier {
                tier_id: event.tier_id,
                current_tier_id: current.tier_id.clone(),
            });
        }
        match event.action {
            DecisionAction::Approve => {
                if !current.authority_limit.covers(self.request.amount) {
                    return Err(ChainError::AuthorityExceeded {
                        tier_id: current.tier_id.clone(),
                        amount: self.request.amount,
                        limit: current.authority_limit,
                    });
                }
                self.status = RequestStatus::Approved;
            }
            DecisionAction::Reject => self.status = RequestStatus::Rejected,
            DecisionAction::Escalate => {
                if self.current_tier_index + 1 >= config.tiers.len() {
                    return Err(ChainError::NoNextTier {
                        tier_id: event.tier_id,
                    });
                }
                self.current_tier_index += 1;
            }
        }
        self.history.push(event);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("no chain configured for request kind `{kind}`")]
    UnknownKind { kind: RequestKind },
    #[error("invalid request: {field} {reason}")]
    InvalidRequest { field: String, reason: String },
    #[error("tier `{tier_id}` is not the current tier (`{current_tier_id}`)")]
    NotCurrentTier {
        tier_id: String,
        current_tier_id: String,
    },
    #[error("request `{request_id}` is already {status}")]
    TerminalState {
        request_id: String,
        status: RequestStatus,
    },
    #[error(
        "amount {amount} exceeds the authority limit {limit} of tier `{tier_id}`; escalate instead"
    )]
    AuthorityExceeded {
        tier_id: String,
        amount: MinorUnits,
        limit: AuthorityLimit,
    },
    #[error("tier `{tier_id}` is the last tier; there is nothing to escalate to")]
    NoNextTier { tier_id: String },
    #[error("unknown tier `{tier_id}`")]
    UnknownTier { tier_id: String },
    #[error("unknown request `{request_id}`")]
    UnknownRequest { request_id: String },
    #[error("instance belongs to chain `{instance_chain}`, not `{config_chain}`")]
    ChainMismatch {
        instance_chain: String,
        config_chain: String,
    },
}

impl ChainError {
    /// Stable identifier surfaced verbatim by the service and CLI.
    pub fn code(&self) -> &'static str {
        match self {
            ChainError::UnknownKind { .. } => "UnknownKind",
            ChainError::InvalidRequest { .. } => "InvalidRequest",
            ChainError::NotCurrentTier { .. } => "NotCurrentTier",
            ChainError::TerminalState { .. } => "TerminalState",
            ChainError::AuthorityExceeded { .. } => "AuthorityExceeded",
            ChainError::NoNextTier { .. } => "NoNextTier",
            ChainError::UnknownTier { .. } => "UnknownTier",
            ChainError::UnknownRequest { .. } => "UnknownRequest",
            ChainError::ChainMismatch { .. } => "ChainMismatch",
        }
    }
}

/// Opens a chain instance for `request`.
///
/// With `auto_escalate_on_submit`, the instance is moved straight to the first
/// tier able to approve the amount; each tier passed over gets a synthetic
/// escalate event by [`SYSTEM_ACTOR`], numbered from `submit_seq + 1`.
pub fn submit_request(
    request: ServiceRequest,
    config: &ChainConfig,
    submit_seq: u64,
) -> Result<ChainInstance, ChainError> {
    request.validate()?;
    if config.applies_to_kind != request.kind {
        return Err(ChainError::UnknownKind { kind: request.kind });
    }
    if config.tiers.is_empty() {
        return Err(ChainError::UnknownTier {
            tier_id: "#0".into(),
        });
    }
    let submitted_at = request.submitted_at;
    let mut instance = ChainInstance::new(request, config.chain_id.clone());
    if config.auto_escalate_on_submit {
        let mut seq = submit_seq;
        while !config.tiers[instance.current_tier_index]
            .authority_limit
            .covers(instance.request.amount)
            && instance.current_tier_index + 1 < config.tiers.len()
        {
            seq += 1;
            let tier = &config.tiers[instance.current_tier_index];
            let event = DecisionEvent {
                seq,
                request_id: instance.request.request_id.clone(),
                tier_id: tier.tier_id.clone(),
                actor_id: SYSTEM_ACTOR.into(),
                action: DecisionAction::Escalate,
                reason: format!(
                    "amount {} exceeds authority limit {}",
                    instance.request.amount, tier.authority_limit
                ),
                decided_at: submitted_at,
            };
            instance.apply_decision(event, config)?;
        }
    }
    Ok(instance)
}

/// Applies one officer decision, returning the successor instance. The input
/// instance is never modified, so a failed decision leaves state untouched.
pub fn decide(
    instance: &ChainInstance,
    decision: &Decision,
    config: &ChainConfig,
    seq: u64,
    decided_at: Timestamp,
) -> Result<ChainInstance, ChainError> {
    if instance.chain_id != config.chain_id {
        return Err(ChainError::ChainMismatch {
            instance_chain: instance.chain_id.clone(),
            config_chain: config.chain_id.clone(),
        });
    }
    if instance.status.is_terminal() {
        return Err(ChainError::TerminalState {
            request_id: instance.request.request_id.clone(),
            status: instance.status,
        });
    }
    if config.tier_index(&decision.tier_id).is_none() {
        return Err(ChainError::UnknownTier {
            tier_id: decision.tier_id.clone(),
        });
    }
    let mut next = instance.clone();
    next.apply_decision(
        DecisionEvent {
            seq,
            request_id: instance.request.request_id.clone(),
            tier_id: decision.tier_id.clone(),
            actor_id: decision.actor_id.clone(),
            action: decision.action,
            reason: decision.reason.clone(),
            decided_at,
        },
        config,
    )?;
    Ok(next)
}
