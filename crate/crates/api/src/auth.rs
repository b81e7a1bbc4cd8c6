//! Static bearer tokens mapped to roles.

use std::collections::HashMap;

use axum::http::HeaderMap;
use bankflow_core::ChainRegistry;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Role {
    Customer,
    Officer { tier_id: String },
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleToken {
    pub token: String,
    pub actor_id: String,
    #[serde(flatten)]
    pub role: Role,
}

impl RoleToken {
    pub fn customer(token: impl Into<String>, actor_id: impl Into<String>) -> Self {
        RoleToken {
            token: token.into(),
            actor_id: actor_id.into(),
            role: Role::Customer,
        }
    }

    pub fn officer(
        token: impl Into<String>,
        actor_id: impl Into<String>,
        tier_id: impl Into<String>,
    ) -> Self {
        RoleToken {
            token: token.into(),
            actor_id: actor_id.into(),
            role: Role::Officer {
                tier_id: tier_id.into(),
            },
        }
    }

    pub fn admin(token: impl Into<String>, actor_id: impl Into<String>) -> Self {
        RoleToken {
            token: token.into(),
            actor_id: actor_id.into(),
            role: Role::Admin,
        }
    }

    pub fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }

    pub fn officer_tier(&self) -> Option<&str> {
        match &self.role {
            Role::Officer { tier_id } => Some(tier_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("tokens file line {line} column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("token entry {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    by_token: HashMap<String, RoleToken>,
}

impl TokenTable {
    /// Checks that tokens are unique and non-empty and that every officer
    /// tier exists in `registry`.
    pub fn new(
        tokens: impl IntoIterator<Item = RoleToken>,
        registry: &ChainRegistry,
    ) -> Result<Self, TokenError> {
        let mut by_token = HashMap::new();
        for (index, token) in tokens.into_iter().enumerate() {
            let invalid = |reason: String| TokenError::Invalid { index, reason };
            if token.token.trim().is_empty() {
                return Err(invalid("token must not be empty".into()));
            }
            if token.actor_id.trim().is_empty() {
                return Err(invalid("actor_id must not be empty".into()));
            }
            if let Some(tier) = token.officer_tier() {
                if !registry.knows_tier(tier) {
                    return Err(invalid(format!("officer tier `{tier}` is not configured")));
                }
            }
            if by_token.contains_key(&token.token) {
                return Err(invalid(format!("token `{}` is listed twice", token.token)));
            }
            by_token.insert(token.token.clone(), token);
        }
        Ok(TokenTable { by_token })
    }

    pub fn from_json_str(source: &str, registry: &ChainRegistry) -> Result<Self, TokenError> {
        let tokens: Vec<RoleToken> =
            serde_json::from_str(source).map_err(|e| TokenError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        TokenTable::new(tokens, registry)
    }

    pub fn get(&self, token: &str) -> Option<&RoleToken> {
        self.by_token.get(token)
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }

    pub(crate) fn authenticate(&self, headers: &HeaderMap) -> Option<&RoleToken> {
        let value = headers
            .get(axum::http::header::AUTHORIZATION)?
            .to_str()
            .ok()?;
        let token = value.strip_prefix("Bearer ")?.trim();
        self.get(token)
    }
}
