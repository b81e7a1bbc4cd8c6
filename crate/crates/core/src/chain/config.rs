use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use super::{AuthorityLimit, ChainConfig, HandlerTier, RequestKind};

/// One broken invariant in a chain configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub chain_id: String,
    /// JSON path of the offending field, e.g. `tiers[1].authority_limit`.
    pub field: String,
    pub tier_id: Option<String>,
    /// 1-based line in the source document, when loaded from text.
    pub line: Option<usize>,
    pub reason: String,
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        write!(f, "chain `{}` field `{}`", self.chain_id, self.field)?;
        if let Some(tier) = &self.tier_id {
            write!(f, " (tier `{tier}`)")?;
        }
        write!(f, ": {}", self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid { violations: Vec<ConfigViolation> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TierSpec {
    tier_id: String,
    display_name: Option<String>,
    order_index: Option<usize>,
    authority_limit: AuthorityLimit,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSpec {
    chain_id: String,
    applies_to_kind: RequestKind,
    #[serde(default)]
    auto_escalate_on_submit: bool,
    tiers: Vec<TierSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Document {
    One(ChainSpec),
    Many(Vec<ChainSpec>),
}

fn parse_error(err: serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    }
}

/// Tier positions as written in the file; the stored index comes from an
/// explicit `order_index` when given, otherwise from array position.
fn into_config(spec: ChainSpec) -> ChainConfig {
    ChainConfig {
        chain_id: spec.chain_id,
        applies_to_kind: spec.applies_to_kind,
        auto_escalate_on_submit: spec.auto_escalate_on_submit,
        tiers: spec
            .tiers
            .into_iter()
            .enumerate()
            .map(|(position, t)| HandlerTier {
                display_name: t.display_name.unwrap_or_else(|| t.tier_id.clone()),
                tier_id: t.tier_id,
                order_index: t.order_index.unwrap_or(position),
                authority_limit: t.authority_limit,
            })
            .collect(),
    }
}

pub(super) fn violations(config: &ChainConfig) -> Vec<ConfigViolation> {
    let mut out = Vec::new();
    let mut push = |field: String, tier_id: Option<&str>, reason: String| {
        out.push(ConfigViolation {
            chain_id: config.chain_id.clone(),
            field,
            tier_id: tier_id.map(str::to_string),
            line: None,
            reason,
        })
    };
    if config.chain_id.trim().is_empty() {
        push("chain_id".into(), None, "must not be empty".into());
    }
    if config.tiers.is_empty() {
        push(
            "tiers".into(),
            None,
            "a chain needs at least one tier".into(),
        );
        return out;
    }
    let mut seen = HashSet::new();
    for (i, tier) in config.tiers.iter().enumerate() {
        let id = Some(tier.tier_id.as_str());
        if tier.tier_id.trim().is_empty() {
            push(
                format!("tiers[{i}].tier_id"),
                None,
                "must not be empty".into(),
            );
        } else if !seen.insert(tier.tier_id.as_str()) {
            push(
                format!("tiers[{i}].tier_id"),
                id,
                "tier id appears more than once in the chain".into(),
            );
        }
        if tier.order_index != i {
            push(
                format!("tiers[{i}].order_index"),
                id,
                format!(
                    "order_index {} breaks the contiguous 0..{} sequence",
                    tier.order_index,
                    config.tiers.len()
                ),
            );
        }
        if i > 0 {
            let prev = &config.tiers[i - 1];
            if tier.authority_limit < prev.authority_limit {
                push(
                    format!("tiers[{i}].authority_limit"),
                    id,
                    format!(
                        "authority limit {} is lower than {} of preceding tier `{}`",
                        tier.authority_limit, prev.authority_limit, prev.tier_id
                    ),
                );
            }
        }
    }
    let last = config.tiers.len() - 1;
    if config.tiers[last].authority_limit != AuthorityLimit::Unbounded {
        push(
            format!("tiers[{last}].authority_limit"),
            Some(&config.tiers[last].tier_id),
            "the last tier must have an UNBOUNDED authority limit".into(),
        );
    }
    out
}

/// Line of the `nth` (0-based) occurrence of `"key"` in `source`.
fn line_of_key(source: &str, key: &str, nth: usize) -> Option<usize> {
    let needle = format!("\"{key}\"");
    let offset = source.match_indices(&needle).nth(nth)?.0;
    Some(source[..offset].matches('\n').count() + 1)
}

fn locate(source: &str, chain_ordinal: usize, tiers_before: usize, v: &mut ConfigViolation) {
    let tier_index = v
        .field
        .strip_prefix("tiers[")
        .and_then(|rest| rest.split(']').next())
        .and_then(|n| n.parse::<usize>().ok());
    v.line = match tier_index {
        Some(i) => line_of_key(source, "tier_id", tiers_before + i),
        None => line_of_key(source, "chain_id", chain_ordinal),
    };
}

/// The active chain for each request kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainRegistry {
    chains: BTreeMap<RequestKind, ChainConfig>,
}

impl ChainRegistry {
    pub fn new(chains: impl IntoIterator<Item = ChainConfig>) -> Result<Self, ConfigError> {
        let chains: Vec<ChainConfig> = chains.into_iter().collect();
        let mut found = Vec::new();
        let mut by_kind = BTreeMap::new();
        let mut chain_ids = HashSet::new();
        for chain in chains {
            found.extend(violations(&chain));
            if !chain_ids.insert(chain.chain_id.clone()) {
                found.push(ConfigViolation {
                    chain_id: chain.chain_id.clone(),
                    field: "chain_id".into(),
                    tier_id: None,
                    line: None,
                    reason: "chain id is used by more than one chain".into(),
                });
            }
            let kind = chain.applies_to_kind;
            if let Some(existing) = by_kind.insert(kind, chain) {
                found.push(ConfigViolation {
                    chain_id: existing.chain_id,
                    field: "applies_to_kind".into(),
                    tier_id: None,
                    line: None,
                    reason: format!("more than one chain applies to `{kind}`"),
                });
            }
        }
        if found.is_empty() {
            Ok(ChainRegistry { chains: by_kind })
        } else {
            Err(ConfigError::Invalid { violations: found })
        }
    }

    /// Default three-tier chains for every request kind.
    pub fn default_bank() -> Self {
        ChainRegistry::new(RequestKind::ALL.map(ChainConfig::default_for))
            .expect("default chains are valid")
    }

    /// Parses a chain configuration document: either a single chain object
    /// or an array of them. Violations carry the line they were found on.
    pub fn from_json_str(source: &str) -> Result<Self, ConfigError> {
        let specs = match serde_json::from_str::<Document>(source) {
            Ok(Document::One(spec)) => vec![spec],
            Ok(Document::Many(specs)) => specs,
            Err(_) => {
                // Re-parse strictly to get a precise diagnostic.
                let value: serde_json::Value = serde_json::from_str(source).map_err(parse_error)?;
                return Err(match value {
                    serde_json::Value::Array(_) => {
                        serde_json::from_str::<Vec<ChainSpec>>(source).err()
                    }
                    _ => serde_json::from_str::<ChainSpec>(source).err(),
                }
                .map(parse_error)
                .unwrap_or_else(|| ConfigError::Parse {
                    line: 1,
                    column: 1,
                    message: "not a chain configuration".into(),
                }));
            }
        };

        let mut tiers_before = 0;
        let mut located = Vec::new();
        let mut configs = Vec::new();
        for (ordinal, spec) in specs.into_iter().enumerate() {
            let config = into_config(spec);
            for mut v in violations(&config) {
                locate(source, ordinal, tiers_before, &mut v);
                located.push(v);
            }
            tiers_before += config.tiers.len();
            configs.push(config);
        }
        if !located.is_empty() {
            return Err(ConfigError::Invalid {
                violations: located,
            });
        }
        let registry = ChainRegistry::new(configs.clone());
        registry.map_err(|err| match err {
            ConfigError::Invalid { mut violations } => {
                for v in &mut violations {
                    let ordinal = configs
                        .iter()
                        .position(|c| c.chain_id == v.chain_id)
                        .unwrap_or(0);
                    v.line = line_of_key(source, "chain_id", ordinal);
                }
                ConfigError::Invalid { violations }
            }
            other => other,
        })
    }

    pub fn for_kind(&self, kind: RequestKind) -> Option<&ChainConfig> {
        self.chains.get(&kind)
    }

    pub fn by_chain_id(&self, chain_id: &str) -> Option<&ChainConfig> {
        self.chains.values().find(|c| c.chain_id == chain_id)
    }

    pub fn knows_tier(&self, tier_id: &str) -> bool {
        self.chains
            .values()
            .any(|c| c.tier_index(tier_id).is_some())
    }

    pub fn chains(&self) -> impl Iterator<Item = &ChainConfig> {
        self.chains.values()
    }
}
