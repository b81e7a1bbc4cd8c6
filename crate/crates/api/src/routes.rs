use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::Json;
use bankflow_core::{
    ChainConfig, ChainInstance, Channel, Decision, DecisionAction, DecisionEvent, DeliveryReport,
    Engine, InboxEntry, NewRequest, RequestKind, RequestView, Subscription,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::auth::{Role, RoleToken};
use crate::error::ApiError;
use crate::AppState;

/// The authenticated caller.
pub struct Caller(pub RoleToken);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        state
            .tokens
            .authenticate(&parts.headers)
            .cloned()
            .map(Caller)
            .ok_or_else(ApiError::unauthorized)
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_body(format!("request body: {e}")))
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> T + Send + 'static,
{
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))
}

fn require_customer(caller: &RoleToken) -> Result<(), ApiError> {
    match caller.role {
        Role::Customer => Ok(()),
        _ => Err(ApiError::forbidden("only customers may do this")),
    }
}

fn require_self_or_admin(caller: &RoleToken, customer_id: &str) -> Result<(), ApiError> {
    if caller.is_admin() || (caller.role == Role::Customer && caller.actor_id == customer_id) {
        Ok(())
    } else {
        Err(ApiError::forbidden(format!(
            "`{}` may not read data of customer `{customer_id}`",
            caller.actor_id
        )))
    }
}

/// Customers see their own requests only; officers and admins see all.
fn require_can_read(caller: &RoleToken, instance: &ChainInstance) -> Result<(), ApiError> {
    if caller.role == Role::Customer && caller.actor_id != instance.request.customer_id {
        return Err(ApiError::forbidden(format!(
            "request `{}` belongs to another customer",
            instance.request.request_id
        )));
    }
    Ok(())
}

pub async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WhoAmI {
    pub actor_id: String,
    #[serde(flatten)]
    pub role: Role,
}

pub async fn whoami(Caller(caller): Caller) -> Json<WhoAmI> {
    Json(WhoAmI {
        actor_id: caller.actor_id,
        role: caller.role,
    })
}

pub async fn chains(State(state): State<AppState>, _caller: Caller) -> Json<Vec<ChainConfig>> {
    Json(state.engine.registry().chains().cloned().collect())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    kind: RequestKind,
    amount: u64,
    currency: String,
    #[serde(default)]
    details: BTreeMap<String, String>,
    #[serde(default)]
    request_id: Option<String>,
}

pub async fn submit(
    State(state): State<AppState>,
    Caller(caller): Caller,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    require_customer(&caller)?;
    let body: SubmitBody = parse(&body)?;
    let mut new = NewRequest::new(caller.actor_id, body.kind, body.amount, body.currency);
    new.details = body.details;
    new.request_id = body.request_id;
    let view = blocking(&state, move |engine| {
        engine.submit(new).map(|inst| engine.view(&inst))
    })
    .await??;
    Ok((StatusCode::CREATED, Json(view)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    action: DecisionAction,
    #[serde(default)]
    reason: String,
}

/// The tier comes from the officer's token. Officers of tiers outside the
/// request's chain are refused outright; officers of another tier in the
/// chain get the engine's `NotCurrentTier`.
pub async fn decide(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(request_id): Path<String>,
    body: Bytes,
) -> Result<Json<RequestView>, ApiError> {
    let Some(tier_id) = caller.officer_tier().map(str::to_owned) else {
        return Err(ApiError::forbidden("only officers may decide requests"));
    };
    let body: DecisionBody = parse(&body)?;
    let decision = Decision::new(tier_id.clone(), caller.actor_id, body.action, body.reason);
    let view = blocking(&state, move |engine| -> Result<RequestView, ApiError> {
        let instance = engine.request(&request_id)?;
        let in_chain = engine
            .registry()
            .by_chain_id(&instance.chain_id)
            .is_some_and(|c| c.tier_index(&tier_id).is_some());
        if !in_chain {
            return Err(ApiError::forbidden(format!(
                "tier `{tier_id}` is not part of chain `{}`",
                instance.chain_id
            )));
        }
        let next = engine.decide(&request_id, decision)?;
        Ok(engine.view(&next))
    })
    .await??;
    Ok(Json(view))
}

pub async fn queue(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(tier_id): Path<String>,
) -> Result<Json<Vec<RequestView>>, ApiError> {
    if !caller.is_admin() && caller.officer_tier() != Some(tier_id.as_str()) {
        return Err(ApiError::forbidden(format!(
            "queue `{tier_id}` is visible to its officers and admins only"
        )));
    }
    let views = blocking(&state, move |engine| {
        engine
            .pending_for_tier(&tier_id)
            .map(|list| list.iter().map(|i| engine.view(i)).collect::<Vec<_>>())
    })
    .await??;
    Ok(Json(views))
}

pub async fn request(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(request_id): Path<String>,
) -> Result<Json<RequestView>, ApiError> {
    let instance = blocking(&state, move |engine| engine.request(&request_id)).await??;
    require_can_read(&caller, &instance)?;
    Ok(Json(state.engine.view(&instance)))
}

pub async fn history(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(request_id): Path<String>,
) -> Result<Json<Vec<DecisionEvent>>, ApiError> {
    let instance = blocking(&state, move |engine| engine.request(&request_id)).await??;
    require_can_read(&caller, &instance)?;
    Ok(Json(instance.history))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubscribeBody {
    topic: String,
    channel: String,
}

pub async fn subscribe(
    State(state): State<AppState>,
    Caller(caller): Caller,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    require_customer(&caller)?;
    let body: SubscribeBody = parse(&body)?;
    let (sub, created) = blocking(&state, move |engine| {
        let channel: Channel = body.channel.parse()?;
        engine.subscribe(&caller.actor_id, &body.topic, channel)
    })
    .await??;
    let status = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(sub)))
}

pub async fn unsubscribe(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(subscription_id): Path<String>,
) -> Result<Json<Subscription>, ApiError> {
    let sub = blocking(&state, move |engine| -> Result<Subscription, ApiError> {
        let sub = engine.subscription(&subscription_id).ok_or_else(|| {
            bankflow_core::notify::HubError::UnknownSubscription {
                subscription_id: subscription_id.clone(),
            }
        });
        let sub = sub.map_err(bankflow_core::EngineError::from)?;
        if !caller.is_admin() && caller.actor_id != sub.customer_id {
            return Err(ApiError::forbidden(format!(
                "subscription `{subscription_id}` belongs to another customer"
            )));
        }
        Ok(engine.unsubscribe(&subscription_id)?.0)
    })
    .await??;
    Ok(Json(sub))
}

pub async fn notifications(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(customer_id): Path<String>,
) -> Result<Json<Vec<InboxEntry>>, ApiError> {
    require_self_or_admin(&caller, &customer_id)?;
    let inbox = blocking(&state, move |engine| engine.deliveries_for(&customer_id)).await?;
    Ok(Json(inbox))
}

pub async fn customer_subscriptions(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(customer_id): Path<String>,
) -> Result<Json<Vec<Subscription>>, ApiError> {
    require_self_or_admin(&caller, &customer_id)?;
    let subs = blocking(&state, move |engine| engine.subscriptions_for(&customer_id)).await?;
    Ok(Json(subs))
}

pub async fn customer_requests(
    State(state): State<AppState>,
    Caller(caller): Caller,
    Path(customer_id): Path<String>,
) -> Result<Json<Vec<RequestView>>, ApiError> {
    require_self_or_admin(&caller, &customer_id)?;
    let views = blocking(&state, move |engine| {
        engine
            .requests_for(&customer_id)
            .iter()
            .map(|i| engine.view(i))
            .collect::<Vec<_>>()
    })
    .await?;
    Ok(Json(views))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PublishBody {
    topic: String,
    #[serde(default)]
    subject_ref: Option<String>,
    #[serde(default)]
    payload: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PublishResponse {
    pub event_seq: u64,
    #[serde(flatten)]
    pub report: DeliveryReport,
}

pub async fn publish(
    State(state): State<AppState>,
    Caller(caller): Caller,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    if !caller.is_admin() {
        return Err(ApiError::forbidden("only admins may publish events"));
    }
    let body: PublishBody = parse(&body)?;
    let (report, event_seq) = blocking(&state, move |engine| {
        bankflow_core::notify::validate_topic(&body.topic)
            .map_err(bankflow_core::EngineError::from)?;
        engine.publish(&body.topic, body.subject_ref, body.payload)
    })
    .await??;
    Ok((
        StatusCode::ACCEPTED,
        Json(PublishResponse { event_seq, report }),
    ))
}
