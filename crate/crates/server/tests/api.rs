mod support;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use axum::http::{StatusCode, header};
use chrono::Utc;
use factcheck_core::llm::{CompletionRequest, LlmError, LlmProvider, ScriptedReply, TranscriptMock};
use factcheck_core::search::{MockSearchProvider, SearchFixture};
use factcheck_core::{AgentConfig, Analysis, AnalysisStatus, Claim, CredibilityTable, Role, UserId};
use factcheck_server::api::Access;
use factcheck_server::{ROUTES, ServiceOptions, openapi_document};
use serde_json::json;

use support::{Harness, instant_agent, scripted};

/// Finalises every claim straight away with a score of 95.
struct Decisive;

#[async_trait::async_trait]
impl LlmProvider for Decisive {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let prompt = &request.messages.last().unwrap().content;
        Ok(if prompt.contains("SCORE: <integer") {
            "SCORE: 95\nEXPLANATION: Settled.".into()
        } else {
            "FINAL".into()
        })
    }
}

fn decisive_harness() -> Harness {
    Harness::new(instant_agent(
        Arc::new(Decisive),
        Arc::new(MockSearchProvider::new(SearchFixture::default())),
        CredibilityTable::new("empty"),
        AgentConfig::default(),
    ))
}

fn stalled_harness(delay_ms: u64) -> (Harness, Arc<TranscriptMock>) {
    let llm = Arc::new(TranscriptMock::from_replies(vec![
        ScriptedReply::Delayed {
            reply: "FINAL".into(),
            delay_ms,
        },
        ScriptedReply::Delayed {
            reply: "SCORE: 70\nEXPLANATION: Slow but sure.".into(),
            delay_ms,
        },
    ]));
    let agent = instant_agent(
        llm.clone(),
        Arc::new(MockSearchProvider::new(SearchFixture::default())),
        CredibilityTable::new("empty"),
        AgentConfig::default(),
    );
    (Harness::new(agent), llm)
}

async fn completed(harness: &Harness, token: &str, text: &str) -> String {
    let res = harness.post("/api/v1/claims", token, json!({"text": text, "language": "en"})).await;
    assert_eq!(res.status, StatusCode::ACCEPTED);
    let id = res.json()["analysis_id"].as_str().unwrap().to_string();
    let (_, view) = harness.poll_until_terminal(token, &id, Duration::from_secs(5)).await;
    assert_eq!(view["status"], "complete", "{view}");
    id
}

#[tokio::test]
async fn router_serves_every_documented_route() {
    let harness = Harness::new(scripted("no-search").agent());
    for route in ROUTES {
        let path = route.path.replace("{id}", &UserId::new().to_string());
        let res = harness.call(route.method, &path, None, Some(json!({}))).await;
        match route.access {
            Access::Public => assert!(
                res.status != StatusCode::NOT_FOUND && res.status != StatusCode::METHOD_NOT_ALLOWED,
                "{} {path}: {}",
                route.method,
                res.status
            ),
            _ => {
                assert_eq!(res.status, StatusCode::UNAUTHORIZED, "{} {path}", route.method);
                assert_eq!(res.headers[header::WWW_AUTHENTICATE], "Bearer");
            }
        }
    }
    let res = harness.call("get", "/api/v1/nope", None, None).await;
    assert_eq!(res.status, StatusCode::NOT_FOUND);
}

#[test]
fn openapi_lists_the_route_table() {
    let doc = openapi_document();
    let documented: BTreeSet<(String, String)> = doc["paths"]
        .as_object()
        .unwrap()
        .iter()
        .flat_map(|(path, ops)| ops.as_object().unwrap().keys().map(move |m| (m.clone(), path.clone())))
        .collect();
    let table: BTreeSet<(String, String)> = ROUTES.iter().map(|r| (r.method.into(), r.path.into())).collect();
    assert_eq!(documented, table);
    let approve = &doc["paths"]["/api/v1/admin/users/{id}/approve-expert"]["post"];
    assert_eq!(approve["parameters"][0]["name"], "id");
    assert!(approve["responses"]["403"].is_object());
    assert!(doc["paths"]["/api/v1/health"]["get"].get("security").is_none());
}

#[tokio::test]
async fn health_is_public() {
    let harness = Harness::new(scripted("no-search").agent());
    let res = harness.call("get", "/api/v1/health", None, None).await;
    assert_eq!(res.status, StatusCode::OK);
    assert_eq!(res.json()["status"], "ok");
}

#[tokio::test]
async fn bad_tokens_are_rejected() {
    let harness = Harness::new(scripted("no-search").agent());
    let (token, _) = harness.login(Role::General).await;
    let tampered = format!("{token}x");
    for bad in ["garbage", tampered.as_str()] {
        let res = harness.get("/api/v1/feedback/tags", bad).await;
        assert_eq!(res.status, StatusCode::UNAUTHORIZED, "{bad}");
        assert_eq!(res.json()["error"]["code"], "unauthorized");
    }
    let res = harness.get("/api/v1/feedback/tags", &token).await;
    assert_eq!(res.status, StatusCode::OK);
    assert_eq!(res.json()["tags"], json!(["explanation", "other", "score", "sources", "speed"]));
}

#[tokio::test]
async fn dev_login_rules() {
    let harness = Harness::new(scripted("no-search").agent());
    let res = harness.call("post", "/api/v1/dev/login", None, Some(json!({"role": "expert"}))).await;
    assert_eq!(res.status, StatusCode::BAD_REQUEST);
    assert_eq!(res.json()["error"]["code"], "expert_requires_approval");
    let res = harness.call("post", "/api/v1/dev/login", None, Some(json!({"role": "wizard"}))).await;
    assert_eq!(res.status, StatusCode::BAD_REQUEST);

    let disabled = Harness::with_options(
        scripted("no-search").agent(),
        ServiceOptions {
            dev_login: false,
            ..ServiceOptions::default()
        },
    );
    let res = disabled.call("post", "/api/v1/dev/login", None, Some(json!({}))).await;
    assert_eq!(res.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn claim_validation() {
    let harness = Harness::new(scripted("no-search").agent());
    let (token, _) = harness.login(Role::General).await;
    for body in [json!({"text": "   "}), json!({"text": "x".repeat(2001)}), json!({"nope": 1}), json!({"text": "ok", "language": "??"})] {
        let res = harness.post("/api/v1/claims", &token, body.clone()).await;
        assert_eq!(res.status, StatusCode::BAD_REQUEST, "{body}");
        assert!(res.json()["error"]["code"].is_string());
    }
    let res = harness.call("post", "/api/v1/claims", None, Some(json!({"text": "hi"}))).await;
    assert_eq!(res.status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn rate_limit_counts_accepted_claims_per_user() {
    let harness = Harness::with_options(
        scripted("no-search").agent(),
        ServiceOptions {
            rate_limit_per_min: 2,
            ..ServiceOptions::default()
        },
    );
    let (alice, _) = harness.login(Role::General).await;
    let (bob, _) = harness.login(Role::General).await;
    // Invalid submissions do not use up the allowance.
    assert_eq!(harness.post("/api/v1/claims", &alice, json!({"text": ""})).await.status, StatusCode::BAD_REQUEST);
    for _ in 0..2 {
        assert_eq!(harness.post("/api/v1/claims", &alice, json!({"text": "one"})).await.status, StatusCode::ACCEPTED);
    }
    let res = harness.post("/api/v1/claims", &alice, json!({"text": "three"})).await;
    assert_eq!(res.status, StatusCode::TOO_MANY_REQUESTS);
    let retry: u64 = res.headers[header::RETRY_AFTER].to_str().unwrap().parse().unwrap();
    assert!((1..=60).contains(&retry));
    assert_eq!(harness.post("/api/v1/claims", &bob, json!({"text": "bob"})).await.status, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn poll_immediately_then_complete() {
    let fixture = scripted("two-search");
    let harness = Harness::new(fixture.agent());
    let (token, _) = harness.login(Role::General).await;
    let res = harness.post("/api/v1/claims", &token, json!({"text": fixture.expected.claim})).await;
    let id = res.json()["analysis_id"].as_str().unwrap().to_string();
    let (_, view) = harness.poll_until_terminal(&token, &id, Duration::from_secs(5)).await;
    assert_eq!(view["score"], 75);
    assert_eq!(view["band"], "mostly_reliable");
    assert_eq!(view["share_recommended"], true);
    assert_eq!(view["sources"].as_array().unwrap().len(), 3);
    assert_eq!(view["summary"], json!({"source_count": 3, "rated_count": 2, "mean_credibility": 0.7}));
    assert_eq!(view["language"], "en");
    assert!(view["share_message"].as_str().unwrap().len() > 10);
    assert!(view["completed_at"].is_string());
    assert!(view.get("error_detail").is_none());
}

#[tokio::test]
async fn analysis_visibility() {
    let harness = Harness::new(scripted("no-search").agent());
    let (owner, _) = harness.login(Role::General).await;
    let (other, _) = harness.login(Role::General).await;
    let (expert, _) = harness.login(Role::Expert).await;
    let id = completed(&harness, &owner, "Water is wet.").await;
    let path = format!("/api/v1/analyses/{id}");

    assert_eq!(harness.get(&path, &other).await.status, StatusCode::NOT_FOUND);
    let res = harness.post(&format!("{path}/feedback"), &other, json!({"rating": 3})).await;
    assert_eq!(res.status, StatusCode::NOT_FOUND);
    assert_eq!(harness.get(&path, &expert).await.status, StatusCode::OK);

    let unknown = format!("/api/v1/analyses/{}", UserId::new());
    assert_eq!(harness.get(&unknown, &owner).await.status, StatusCode::NOT_FOUND);
    let res = harness.get("/api/v1/analyses/not-a-uuid", &owner).await;
    assert_eq!(res.status, StatusCode::BAD_REQUEST);
    assert_eq!(res.json()["error"]["code"], "invalid_id");
}

#[tokio::test]
async fn feedback_rules() {
    let harness = Harness::new(scripted("no-search").agent());
    let (token, user) = harness.login(Role::General).await;
    let id = completed(&harness, &token, "Water is wet.").await;
    let path = format!("/api/v1/analyses/{id}/feedback");

    let res = harness.post(&path, &token, json!({"rating": 4, "tags": ["sources"], "comment": "good"})).await;
    assert_eq!(res.status, StatusCode::CREATED);
    assert!(res.json()["feedback_id"].is_string());
    // Tags are matched case-insensitively against the vocabulary.
    assert_eq!(harness.post(&path, &token, json!({"rating": 2, "tags": ["Speed "]})).await.status, StatusCode::CREATED);

    let res = harness.post(&path, &token, json!({"rating": 4, "tags": ["vibes"]})).await;
    assert_eq!(res.status, StatusCode::BAD_REQUEST);
    assert_eq!(res.json()["error"]["code"], "unknown_tag");
    for rating in [json!(0), json!(6), json!(-1), json!("five")] {
        let res = harness.post(&path, &token, json!({"rating": rating})).await;
        assert_eq!(res.status, StatusCode::BAD_REQUEST, "{rating}");
    }

    let claim = Claim::new(user, "Unfinished.", Some("en"), 2000, Utc::now()).unwrap();
    harness.repo().save_claim(&claim).unwrap();
    let pending = Analysis::pending(claim.id, Utc::now());
    harness.repo().create_analysis(&pending).unwrap();
    let res = harness.post(&format!("/api/v1/analyses/{}/feedback", pending.id), &token, json!({"rating": 6})).await;
    assert_eq!(res.status, StatusCode::BAD_REQUEST, "rating is checked before state");
    let res = harness.post(&format!("/api/v1/analyses/{}/feedback", pending.id), &token, json!({"rating": 3})).await;
    assert_eq!(res.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn dashboard_aggregates() {
    let harness = decisive_harness();
    let (general, _) = harness.login(Role::General).await;
    let (expert, _) = harness.login(Role::Expert).await;

    let empty = harness.get("/api/v1/dashboard/clusters", &expert).await;
    assert_eq!(empty.status, StatusCode::OK);
    assert_eq!(empty.json()["clusters"], json!([]));

    for text in ["Solar panels cut bills", "Solar panels cut energy bills", "Measles vaccine works"] {
        let id = completed(&harness, &general, text).await;
        let res = harness.post(&format!("/api/v1/analyses/{id}/feedback"), &general, json!({"rating": 5})).await;
        assert_eq!(res.status, StatusCode::CREATED);
    }

    // Fresh parameters bypass the cached empty report.
    let res = harness.get("/api/v1/dashboard/clusters?k=2&seed=3", &expert).await;
    assert_eq!(res.status, StatusCode::OK);
    let report = res.json();
    assert_eq!(report["k"], 2);
    let sizes: Vec<u64> = report["clusters"].as_array().unwrap().iter().map(|c| c["size"].as_u64().unwrap()).collect();
    assert_eq!(sizes.iter().sum::<u64>(), 3);

    for bad in ["k=0", "k=-3", "k=abc", "seed=-1"] {
        let res = harness.get(&format!("/api/v1/dashboard/clusters?{bad}"), &expert).await;
        assert_eq!(res.status, StatusCode::BAD_REQUEST, "{bad}");
    }

    let stats = harness.get("/api/v1/dashboard/stats?days=7", &expert).await.json();
    assert_eq!(stats["total_claims"], 3);
    assert_eq!(stats["completed_analyses"], 3);
    assert_eq!(stats["mean_score"], 95.0);
    assert_eq!(stats["feedback_count"], 3);
    assert_eq!(stats["feedback_histogram"]["5"], 3);

    assert_eq!(harness.get("/api/v1/dashboard/stats", &general).await.status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn approve_expert_flow() {
    let harness = Harness::new(scripted("no-search").agent());
    let (admin, _) = harness.login(Role::Admin).await;
    let (expert, _) = harness.login(Role::Expert).await;
    let (candidate, candidate_id) = harness.login(Role::General).await;
    let path = format!("/api/v1/admin/users/{candidate_id}/approve-expert");

    assert_eq!(harness.get("/api/v1/dashboard/stats", &candidate).await.status, StatusCode::FORBIDDEN);
    assert_eq!(harness.call("post", &path, Some(&expert), None).await.status, StatusCode::FORBIDDEN);
    let res = harness.call("post", &path, Some(&admin), None).await;
    assert_eq!(res.status, StatusCode::OK);
    assert_eq!(res.json()["role"], "expert");
    // The role is read per request, so the old token now opens the dashboard.
    assert_eq!(harness.get("/api/v1/dashboard/stats", &candidate).await.status, StatusCode::OK);

    let unknown = format!("/api/v1/admin/users/{}/approve-expert", UserId::new());
    assert_eq!(harness.call("post", &unknown, Some(&admin), None).await.status, StatusCode::NOT_FOUND);
    let res = harness.call("post", "/api/v1/admin/users/123/approve-expert", Some(&admin), None).await;
    assert_eq!(res.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn events_stream_until_terminal() {
    let (harness, _) = stalled_harness(30);
    let (token, _) = harness.login(Role::General).await;
    let res = harness.post("/api/v1/claims", &token, json!({"text": "Events please."})).await;
    let id = res.json()["analysis_id"].as_str().unwrap().to_string();

    let res = harness.get(&format!("/api/v1/analyses/{id}/events"), &token).await;
    assert_eq!(res.status, StatusCode::OK);
    assert_eq!(res.headers[header::CONTENT_TYPE], "text/event-stream");
    let body = String::from_utf8(res.body.to_vec()).unwrap();
    let statuses: Vec<AnalysisStatus> = body
        .lines()
        .filter_map(|l| l.strip_prefix("data: "))
        .map(|data| serde_json::from_str::<serde_json::Value>(data).unwrap())
        .map(|v| serde_json::from_value(v["status"].clone()).unwrap())
        .collect();
    assert!(body.contains("event: status"));
    assert!(statuses.windows(2).all(|w| w[0].rank() < w[1].rank()), "{statuses:?}");
    assert_eq!(statuses.last(), Some(&AnalysisStatus::Complete));

    // A finished analysis yields a single event and the stream closes.
    let res = harness.get(&format!("/api/v1/analyses/{id}/events"), &token).await;
    let body = String::from_utf8(res.body.to_vec()).unwrap();
    assert_eq!(body.matches("event: status").count(), 1);
}

#[tokio::test]
async fn shutdown_fails_in_flight_and_later_work() {
    let (harness, _) = stalled_harness(10_000);
    let (token, _) = harness.login(Role::General).await;
    let res = harness.post("/api/v1/claims", &token, json!({"text": "Interrupted."})).await;
    let first = res.json()["analysis_id"].as_str().unwrap().to_string();
    tokio::time::sleep(Duration::from_millis(20)).await;
    assert_eq!(harness.state.runner().active_count(), 1);

    harness.state.runner().shutdown(Duration::from_millis(50)).await;
    assert_eq!(harness.state.runner().active_count(), 0);
    let view = harness.get(&format!("/api/v1/analyses/{first}"), &token).await.json();
    assert_eq!(view["status"], "failed");
    assert_eq!(view["error_detail"], "shutdown");

    let res = harness.post("/api/v1/claims", &token, json!({"text": "Too late."})).await;
    assert_eq!(res.status, StatusCode::ACCEPTED);
    let late = res.json()["analysis_id"].as_str().unwrap().to_string();
    let view = harness.get(&format!("/api/v1/analyses/{late}"), &token).await.json();
    assert_eq!(view["error_detail"], "shutdown");
}

#[tokio::test]
async fn shutdown_drains_work_that_finishes_in_time() {
    let (harness, _) = stalled_harness(20);
    let (token, _) = harness.login(Role::General).await;
    let res = harness.post("/api/v1/claims", &token, json!({"text": "Quick enough."})).await;
    let id = res.json()["analysis_id"].as_str().unwrap().to_string();
    harness.state.runner().shutdown(Duration::from_secs(5)).await;
    let view = harness.get(&format!("/api/v1/analyses/{id}"), &token).await.json();
    assert_eq!(view["status"], "complete");
    assert_eq!(view["score"], 70);
}

#[tokio::test]
async fn unfinished_analyses_resume() {
    let harness = Harness::new(scripted("no-search").agent());
    let (token, user) = harness.login(Role::General).await;
    let claim = Claim::new(user, "Left over from a crash.", Some("en"), 2000, Utc::now()).unwrap();
    harness.repo().save_claim(&claim).unwrap();
    let analysis = Analysis::pending(claim.id, Utc::now());
    harness.repo().create_analysis(&analysis).unwrap();

    assert_eq!(harness.state.runner().resume_unfinished().unwrap(), 1);
    let (_, view) = harness
        .poll_until_terminal(&token, &analysis.id.to_string(), Duration::from_secs(5))
        .await;
    assert_eq!(view["status"], "complete");
    assert_eq!(harness.state.runner().resume_unfinished().unwrap(), 0);
}

#[tokio::test]
async fn model_failure_marks_analysis_failed() {
    let agent = instant_agent(
        Arc::new(TranscriptMock::failing()),
        Arc::new(MockSearchProvider::new(SearchFixture::default())),
        CredibilityTable::new("empty"),
        AgentConfig::default(),
    );
    let harness = Harness::new(agent);
    let (token, _) = harness.login(Role::General).await;
    let res = harness.post("/api/v1/claims", &token, json!({"text": "Nobody home."})).await;
    let id = res.json()["analysis_id"].as_str().unwrap().to_string();
    let (seen, view) = harness.poll_until_terminal(&token, &id, Duration::from_secs(5)).await;
    assert_eq!(seen.last(), Some(&AnalysisStatus::Failed));
    assert!(view["error_detail"].as_str().unwrap().len() > 3);
    assert!(view.get("score").is_none());
    let res = harness.post(&format!("/api/v1/analyses/{id}/feedback"), &token, json!({"rating": 3})).await;
    assert_eq!(res.status, StatusCode::CONFLICT);
}
