use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use bankflow_api::{router, AppState, RoleToken, TokenTable};
use bankflow_core::{ChainConfig, ChainRegistry, Engine, MemoryLog, RequestKind, SteppingClock};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Api {
    app: Router,
    engine: Arc<Engine>,
}

fn api() -> Api {
    let registry = ChainRegistry::new([
        ChainConfig::default_for(RequestKind::Loan),
        ChainConfig::new(
            "claims",
            RequestKind::InsuranceClaim,
            [
                (
                    "CLAIMS".to_string(),
                    bankflow_core::AuthorityLimit::Limited(100),
                ),
                ("HO".to_string(), bankflow_core::AuthorityLimit::Unbounded),
            ],
        ),
    ])
    .unwrap();
    let tokens = TokenTable::new(
        [
            RoleToken::customer("cust1", "c1"),
            RoleToken::customer("cust2", "c2"),
            RoleToken::officer("bsc", "bsc-officer", "BSC"),
            RoleToken::officer("ozssc", "ozssc-officer", "OZSSC"),
            RoleToken::officer("claims", "claims-officer", "CLAIMS"),
            RoleToken::officer("ho", "ho-officer", "HO"),
            RoleToken::admin("root", "admin"),
        ],
        &registry,
    )
    .unwrap();
    let engine = Arc::new(
        Engine::open(
            registry,
            Box::new(MemoryLog::new()),
            Arc::new(SteppingClock::default()),
        )
        .unwrap(),
    );
    Api {
        app: router(AppState::new(engine.clone(), tokens)),
        engine,
    }
}

impl Api {
    async fn call(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self
            .app
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap()
        };
        (status, value)
    }

    async fn raw(&self, method: Method, uri: &str, token: &str, body: &str) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("authorization", format!("Bearer {token}"))
            .body(Body::from(body.to_string()))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    async fn submit_loan(&self, amount: u64) -> String {
        let (status, body) = self
            .call(
                Method::POST,
                "/requests",
                Some("cust1"),
                Some(json!({"kind": "loan", "amount": amount, "currency": "INR"})),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["request_id"].as_str().unwrap().to_string()
    }

    async fn decide(&self, token: &str, id: &str, action: &str) -> (StatusCode, Value) {
        self.call(
            Method::POST,
            &format!("/requests/{id}/decision"),
            Some(token),
            Some(json!({"action": action, "reason": "checked"})),
        )
        .await
    }

    fn log_len(&self) -> usize {
        self.engine.events().unwrap().len()
    }
}

#[tokio::test]
async fn health_needs_no_token() {
    let api = api();
    let (status, body) = api.call(Method::GET, "/healthz", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn missing_or_unknown_token_is_401() {
    let api = api();
    for token in [None, Some("nope")] {
        let (status, body) = api.call(Method::GET, "/queues/BSC", token, None).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED);
        assert_eq!(body["code"], "Unauthorized");
    }
}

#[tokio::test]
async fn whoami_reports_role() {
    let api = api();
    let (_, body) = api.call(Method::GET, "/whoami", Some("ozssc"), None).await;
    assert_eq!(
        body,
        json!({"actor_id": "ozssc-officer", "role": "officer", "tier_id": "OZSSC"})
    );
    let (_, chains) = api.call(Method::GET, "/chains", Some("cust1"), None).await;
    assert_eq!(chains.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn approve_within_limit() {
    let api = api();
    let id = api.submit_loan(200_000).await;
    let (status, body) = api.decide("bsc", &id, "approve").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "approved");
    assert_eq!(body["history"][0]["actor_id"], "bsc-officer");
    assert_eq!(body["history"][0]["tier_id"], "BSC");
}

#[tokio::test]
async fn submit_returns_view_with_gating_fields() {
    let api = api();
    let (status, body) = api
        .call(
            Method::POST,
            "/requests",
            Some("cust1"),
            Some(json!({"kind": "loan", "amount": 2000000, "currency": "INR", "details": {"purpose": "home"}})),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["status"], "pending");
    assert_eq!(body["customer_id"], "c1");
    assert_eq!(body["current_tier_id"], "BSC");
    assert_eq!(body["current_authority_limit"], 500000);
    assert_eq!(body["is_last_tier"], false);
    assert_eq!(body["details"]["purpose"], "home");
    assert_eq!(body["history"], json!([]));
}

#[tokio::test]
async fn approve_beyond_limit_is_409_and_appends_nothing() {
    let api = api();
    let id = api.submit_loan(2_000_000).await;
    let before = api.log_len();
    let (status, body) = api.decide("bsc", &id, "approve").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "AuthorityExceeded");
    assert_eq!(api.log_len(), before);
}

#[tokio::test]
async fn tier_mismatch_is_409_foreign_tier_is_403() {
    let api = api();
    let id = api.submit_loan(2_000_000).await;
    let (status, body) = api.decide("ozssc", &id, "approve").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "NotCurrentTier");

    let (status, body) = api.decide("claims", &id, "approve").await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["code"], "Forbidden");

    for token in ["cust1", "root"] {
        let (status, _) = api.decide(token, &id, "approve").await;
        assert_eq!(status, StatusCode::FORBIDDEN);
    }
}

#[tokio::test]
async fn escalate_then_approve_and_terminal_conflict() {
    let api = api();
    let id = api.submit_loan(2_000_000).await;
    assert_eq!(api.decide("bsc", &id, "escalate").await.0, StatusCode::OK);
    let (status, body) = api.decide("ozssc", &id, "approve").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "approved");

    let (status, body) = api.decide("ozssc", &id, "reject").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "TerminalState");

    let (status, history) = api
        .call(
            Method::GET,
            &format!("/requests/{id}/history"),
            Some("cust1"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let tiers: Vec<_> = history
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["tier_id"].clone())
        .collect();
    assert_eq!(tiers, [json!("BSC"), json!("OZSSC")]);
}

#[tokio::test]
async fn no_next_tier_is_409() {
    let api = api();
    let (_, body) = api
        .call(
            Method::POST,
            "/requests",
            Some("cust1"),
            Some(json!({"kind": "insurance_claim", "amount": 500, "currency": "INR"})),
        )
        .await;
    let id = body["request_id"].as_str().unwrap().to_string();
    let (status, _) = api.decide("claims", &id, "escalate").await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = api
        .call(Method::GET, &format!("/requests/{id}"), Some("root"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["is_last_tier"], true);
    let (status, body) = api.decide("ho", &id, "escalate").await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::CONFLICT, Some("NoNextTier"))
    );
    let (status, body) = api.decide("ho", &id, "approve").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["history"][1]["actor_id"], "ho-officer");
}

#[tokio::test]
async fn bad_input_is_400_with_engine_code() {
    let api = api();
    let cases = [
        json!({"kind": "loan", "amount": 5, "currency": "rupees"}),
        json!({"kind": "mortgage", "amount": 5, "currency": "INR"}),
        json!({"kind": "loan", "amount": -5, "currency": "INR"}),
        json!({"kind": "loan", "amount": 5, "currency": "INR", "customer_id": "c2"}),
    ];
    for case in cases {
        let (status, body) = api
            .call(Method::POST, "/requests", Some("cust1"), Some(case.clone()))
            .await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{case}");
        assert_eq!(body["code"], "InvalidRequest", "{case}");
    }
    let (status, body) = api
        .raw(Method::POST, "/requests", "cust1", "{not json")
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "InvalidRequest");

    let id = api.submit_loan(10).await;
    let (status, body) = api
        .call(
            Method::POST,
            &format!("/requests/{id}/decision"),
            Some("bsc"),
            Some(json!({"action": "approve", "actor_id": "someone-else"})),
        )
        .await;
    assert_eq!(
        status,
        StatusCode::BAD_REQUEST,
        "actor must come from the token"
    );
    assert_eq!(body["code"], "InvalidRequest");
    assert_eq!(api.log_len(), 2);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let api = api();
    let (status, body) = api
        .call(Method::GET, "/requests/req-99", Some("root"), None)
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("UnknownRequest"))
    );
    let (status, body) = api.decide("bsc", "req-99", "approve").await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("UnknownRequest"))
    );
    let (status, body) = api
        .call(Method::GET, "/queues/MARS", Some("root"), None)
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("UnknownTier"))
    );
    let (status, body) = api
        .call(Method::DELETE, "/subscriptions/sub-1", Some("cust1"), None)
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("UnknownSubscription"))
    );
    let (status, _) = api.call(Method::GET, "/nowhere", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn queues_are_tier_scoped() {
    let api = api();
    let a = api.submit_loan(10).await;
    let b = api.submit_loan(2_000_000).await;
    api.decide("bsc", &b, "escalate").await;

    let (status, body) = api
        .call(Method::GET, "/queues/BSC", Some("bsc"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<_> = body
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["request_id"].clone())
        .collect();
    assert_eq!(ids, [json!(a)]);

    let (status, body) = api
        .call(Method::GET, "/queues/OZSSC", Some("root"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body[0]["request_id"], json!(b));

    for token in ["bsc", "cust1"] {
        let (status, _) = api
            .call(Method::GET, "/queues/OZSSC", Some(token), None)
            .await;
        assert_eq!(status, StatusCode::FORBIDDEN);
    }
}

#[tokio::test]
async fn customers_see_only_their_own_data() {
    let api = api();
    let id = api.submit_loan(10).await;
    for path in [
        format!("/requests/{id}"),
        format!("/requests/{id}/history"),
        "/customers/c1/notifications".into(),
    ] {
        let (status, _) = api.call(Method::GET, &path, Some("cust2"), None).await;
        assert_eq!(status, StatusCode::FORBIDDEN, "{path}");
        let (status, _) = api.call(Method::GET, &path, Some("cust1"), None).await;
        assert_eq!(status, StatusCode::OK, "{path}");
        let (status, _) = api.call(Method::GET, &path, Some("root"), None).await;
        assert_eq!(status, StatusCode::OK, "{path}");
    }
    let (_, mine) = api
        .call(Method::GET, "/customers/c1/requests", Some("cust1"), None)
        .await;
    assert_eq!(mine.as_array().unwrap().len(), 1);
    let (_, theirs) = api
        .call(Method::GET, "/customers/c2/requests", Some("cust2"), None)
        .await;
    assert_eq!(theirs, json!([]));
}

#[tokio::test]
async fn subscription_lifecycle_and_inbox() {
    let api = api();
    let sub_body = json!({"topic": "request.approved", "channel": "in_app"});
    let (status, sub) = api
        .call(
            Method::POST,
            "/subscriptions",
            Some("cust1"),
            Some(sub_body.clone()),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(sub["customer_id"], "c1");
    let before = api.log_len();
    let (status, again) = api
        .call(
            Method::POST,
            "/subscriptions",
            Some("cust1"),
            Some(sub_body),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["subscription_id"], sub["subscription_id"]);
    assert_eq!(api.log_len(), before);

    let id = api.submit_loan(2_000_000).await;
    api.decide("bsc", &id, "escalate").await;
    api.decide("ozssc", &id, "approve").await;
    let (status, inbox) = api
        .call(
            Method::GET,
            "/customers/c1/notifications",
            Some("cust1"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let inbox = inbox.as_array().unwrap();
    assert_eq!(inbox.len(), 1);
    assert_eq!(inbox[0]["event"]["topic"], "request.approved");
    assert_eq!(inbox[0]["event"]["subject_ref"], json!(id));
    assert_eq!(inbox[0]["delivery"]["status"], "queued");

    let sub_id = sub["subscription_id"].as_str().unwrap();
    let (status, _) = api
        .call(
            Method::DELETE,
            &format!("/subscriptions/{sub_id}"),
            Some("cust2"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, gone) = api
        .call(
            Method::DELETE,
            &format!("/subscriptions/{sub_id}"),
            Some("cust1"),
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(gone["active"], false);
    let (_, subs) = api
        .call(
            Method::GET,
            "/customers/c1/subscriptions",
            Some("cust1"),
            None,
        )
        .await;
    assert_eq!(subs[0]["active"], false);

    let (status, body) = api
        .call(
            Method::POST,
            "/subscriptions",
            Some("cust1"),
            Some(json!({"topic": "Bad Topic", "channel": "sms"})),
        )
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("InvalidTopic"))
    );
    let (status, body) = api
        .call(
            Method::POST,
            "/subscriptions",
            Some("cust1"),
            Some(json!({"topic": "a", "channel": "pigeon"})),
        )
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("InvalidChannel"))
    );
    let (status, _) = api
        .call(
            Method::POST,
            "/subscriptions",
            Some("bsc"),
            Some(json!({"topic": "a", "channel": "sms"})),
        )
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn admin_publish_fans_out() {
    let api = api();
    for (token, channel) in [("cust1", "email"), ("cust1", "sms"), ("cust2", "in_app")] {
        api.call(
            Method::POST,
            "/subscriptions",
            Some(token),
            Some(json!({"topic": "bill.telephone.due", "channel": channel})),
        )
        .await;
    }
    api.call(
        Method::POST,
        "/subscriptions",
        Some("cust2"),
        Some(json!({"topic": "*", "channel": "email"})),
    )
    .await;

    let event = json!({"topic": "bill.telephone.due", "subject_ref": "bill-7", "payload": {"amount": "950"}});
    let (status, _) = api
        .call(Method::POST, "/events", Some("cust1"), Some(event.clone()))
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, report) = api
        .call(Method::POST, "/events", Some("root"), Some(event))
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(report["matched"], 4);
    assert_eq!(report["queued"], 4);
    assert!(report["event_seq"].as_u64().unwrap() > 0);

    let (status, body) = api
        .call(
            Method::POST,
            "/events",
            Some("root"),
            Some(json!({"topic": "*"})),
        )
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("InvalidEvent"))
    );
    let (status, body) = api
        .call(
            Method::POST,
            "/events",
            Some("root"),
            Some(json!({"topic": "A B"})),
        )
        .await;
    assert_eq!(
        (status, body["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("InvalidTopic"))
    );
}

#[tokio::test]
async fn every_successful_mutation_appends_and_failures_do_not() {
    let api = api();
    let mut expected = 0;
    // submit: Submitted + request.submitted domain event
    api.submit_loan(10).await;
    expected += 2;
    assert_eq!(api.log_len(), expected);
    api.decide("bsc", "req-1", "approve").await;
    expected += 2;
    assert_eq!(api.log_len(), expected);
    for _ in 0..3 {
        let (status, _) = api.decide("bsc", "req-1", "approve").await;
        assert_eq!(status, StatusCode::CONFLICT);
    }
    assert_eq!(api.log_len(), expected);
}

#[tokio::test]
async fn preflight_gets_cors_headers() {
    let api = api();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/requests")
        .body(Body::empty())
        .unwrap();
    let resp = api.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NO_CONTENT);
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}
