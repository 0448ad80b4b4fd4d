//! `/api/v1` routes.
//!
//! [`ROUTES`] is the single description of the surface: the router is
//! checked against it in tests and the OpenAPI document is generated from it.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{HeaderValue, StatusCode, header};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use factcheck_core::analytics::{
    ClusterReport, DEFAULT_K, DEFAULT_SEED, DashboardStats, TimeWindow, TtlCache, CACHE_TTL, claims_in_window,
    cluster_claims, compute_stats,
};
use factcheck_core::persistence::{Repository, StorageError};
use factcheck_core::verdict::MessageCatalog;
use factcheck_core::{
    Analysis, AnalysisId, AnalysisStatus, Claim, Feedback, ModelError, Role, UserAccount, UserId,
};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{Value, json};
use tokio::sync::broadcast::error::RecvError;

use crate::auth::{AuthContext, AuthError, TokenSigner, bearer};
use crate::rate_limit::RateLimiter;
use crate::view::AnalysisStatusView;
use crate::worker::AnalysisRunner;

/// Who may call a route.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Access {
    Public,
    Authenticated,
    /// Expert or admin.
    Expert,
    Admin,
}

#[derive(Copy, Clone, Debug)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    pub summary: &'static str,
    pub access: Access,
    pub responses: &'static [u16],
}

pub const ROUTES: &[RouteSpec] = &[
    RouteSpec {
        method: "get",
        path: "/api/v1/health",
        summary: "Liveness probe",
        access: Access::Public,
        responses: &[200],
    },
    RouteSpec {
        method: "get",
        path: "/api/v1/openapi.json",
        summary: "This API description",
        access: Access::Public,
        responses: &[200],
    },
    RouteSpec {
        method: "post",
        path: "/api/v1/dev/login",
        summary: "Mint a token for a new general or admin account (non-production only)",
        access: Access::Public,
        responses: &[200, 400, 404],
    },
    RouteSpec {
        method: "post",
        path: "/api/v1/claims",
        summary: "Submit a claim; analysis runs in the background",
        access: Access::Authenticated,
        responses: &[202, 400, 401, 429],
    },
    RouteSpec {
        method: "get",
        path: "/api/v1/analyses/{id}",
        summary: "Poll an analysis",
        access: Access::Authenticated,
        responses: &[200, 400, 401, 404],
    },
    RouteSpec {
        method: "get",
        path: "/api/v1/analyses/{id}/events",
        summary: "Server-sent status events until the analysis ends",
        access: Access::Authenticated,
        responses: &[200, 400, 401, 404],
    },
    RouteSpec {
        method: "post",
        path: "/api/v1/analyses/{id}/feedback",
        summary: "Rate a completed analysis (1 to 5 stars) with optional tags and comment",
        access: Access::Authenticated,
        responses: &[201, 400, 401, 404, 409],
    },
    RouteSpec {
        method: "get",
        path: "/api/v1/feedback/tags",
        summary: "Feedback tag vocabulary",
        access: Access::Authenticated,
        responses: &[200, 401],
    },
    RouteSpec {
        method: "get",
        path: "/api/v1/dashboard/clusters",
        summary: "Claim clusters (query: k, seed, days)",
        access: Access::Expert,
        responses: &[200, 400, 401, 403],
    },
    RouteSpec {
        method: "get",
        path: "/api/v1/dashboard/stats",
        summary: "Aggregate statistics (query: days)",
        access: Access::Expert,
        responses: &[200, 400, 401, 403],
    },
    RouteSpec {
        method: "post",
        path: "/api/v1/admin/users/{id}/approve-expert",
        summary: "Grant the expert role",
        access: Access::Admin,
        responses: &[200, 400, 401, 403, 404],
    },
];

pub fn openapi_document() -> Value {
    let mut paths = serde_json::Map::new();
    for route in ROUTES {
        let params: Vec<Value> = route
            .path
            .split('/')
            .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
            .map(|name| json!({"name": name, "in": "path", "required": true, "schema": {"type": "string", "format": "uuid"}}))
            .collect();
        let responses: serde_json::Map<String, Value> = route
            .responses
            .iter()
            .map(|code| (code.to_string(), json!({"description": status_text(*code)})))
            .collect();
        let mut op = json!({
            "summary": route.summary,
            "responses": responses,
            "x-access": format!("{:?}", route.access).to_lowercase(),
        });
        if route.access != Access::Public {
            op["security"] = json!([{"bearer": []}]);
        }
        if !params.is_empty() {
            op["parameters"] = Value::Array(params);
        }
        let entry = paths.entry(route.path.to_string()).or_insert_with(|| json!({}));
        entry[route.method] = op;
    }
    json!({
        "openapi": "3.0.3",
        "info": {"title": "Fact-checking service", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
        "components": {"securitySchemes": {"bearer": {"type": "http", "scheme": "bearer"}}},
    })
}

fn status_text(code: u16) -> &'static str {
    StatusCode::from_u16(code).ok().and_then(|s| s.canonical_reason()).unwrap_or("")
}

#[derive(Clone, Debug)]
pub struct ServiceOptions {
    pub claim_max_len: usize,
    pub rate_limit_per_min: u32,
    pub dev_login: bool,
    pub token_secret: String,
    pub token_ttl: Duration,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            claim_max_len: factcheck_core::model::DEFAULT_MAX_CLAIM_LEN,
            rate_limit_per_min: 10,
            dev_login: true,
            token_secret: "insecure-development-secret".into(),
            token_ttl: Duration::from_secs(12 * 3600),
        }
    }
}

type ClusterKey = (usize, u64, Option<u32>);

struct Inner {
    repo: Arc<dyn Repository>,
    runner: Arc<AnalysisRunner>,
    signer: TokenSigner,
    limiter: RateLimiter,
    options: ServiceOptions,
    catalog: &'static MessageCatalog,
    clusters: TtlCache<ClusterKey, ClusterReport>,
    stats: TtlCache<Option<u32>, DashboardStats>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(repo: Arc<dyn Repository>, runner: Arc<AnalysisRunner>, options: ServiceOptions) -> Self {
        Self(Arc::new(Inner {
            signer: TokenSigner::new(&options.token_secret, options.token_ttl),
            limiter: RateLimiter::per_minute(options.rate_limit_per_min),
            repo,
            runner,
            options,
            catalog: MessageCatalog::builtin(),
            clusters: TtlCache::new(CACHE_TTL),
            stats: TtlCache::new(CACHE_TTL),
        }))
    }

    pub fn repo(&self) -> &Arc<dyn Repository> {
        &self.0.repo
    }

    pub fn runner(&self) -> &Arc<AnalysisRunner> {
        &self.0.runner
    }

    /// Issues a token for an existing account (tests and tooling).
    pub fn issue_token(&self, user: &UserAccount) -> String {
        self.0.signer.issue(user.id, user.role, Utc::now()).0
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/openapi.json", get(openapi))
        .route("/api/v1/dev/login", post(dev_login))
        .route("/api/v1/claims", post(submit_claim))
        .route("/api/v1/analyses/{id}", get(get_analysis))
        .route("/api/v1/analyses/{id}/events", get(analysis_events))
        .route("/api/v1/analyses/{id}/feedback", post(submit_feedback))
        .route("/api/v1/feedback/tags", get(feedback_tags))
        .route("/api/v1/dashboard/clusters", get(dashboard_clusters))
        .route("/api/v1/dashboard/stats", get(dashboard_stats))
        .route("/api/v1/admin/users/{id}/approve-expert", post(approve_expert))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    retry_after: Option<Duration>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            retry_after: None,
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "forbidden", "insufficient role")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({"error": {"code": self.code, "message": self.message}}));
        let mut response = (self.status, body).into_response();
        if let Some(wait) = self.retry_after {
            let secs = wait.as_secs().max(1).to_string();
            response
                .headers_mut()
                .insert(header::RETRY_AFTER, HeaderValue::from_str(&secs).expect("digits"));
        }
        if self.status == StatusCode::UNAUTHORIZED {
            response
                .headers_mut()
                .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        }
        response
    }
}

impl From<StorageError> for ApiError {
    fn from(err: StorageError) -> Self {
        let (status, code) = match &err {
            StorageError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
            StorageError::UnknownUser(_) => (StatusCode::UNAUTHORIZED, "unknown_user"),
            StorageError::IllegalTransition { .. } | StorageError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            StorageError::AnalysisNotComplete(_) => (StatusCode::CONFLICT, "analysis_not_complete"),
            StorageError::InvalidRating(_) => (StatusCode::BAD_REQUEST, "invalid_rating"),
            StorageError::UnknownTag(_) => (StatusCode::BAD_REQUEST, "unknown_tag"),
            StorageError::Invariant(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            StorageError::StorageUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable"),
        };
        if status.is_server_error() {
            tracing::error!(error = %err, "storage failure");
        }
        ApiError::new(status, code, err.to_string())
    }
}

impl From<ModelError> for ApiError {
    fn from(err: ModelError) -> Self {
        let code = match &err {
            ModelError::EmptyClaim => "empty_claim",
            ModelError::ClaimTooLong { .. } => "claim_too_long",
            ModelError::InvalidRating(_) => "invalid_rating",
            ModelError::UnknownTag(_) => "unknown_tag",
            ModelError::InvalidLanguage(_) => "invalid_language",
            ModelError::ExpertRequiresApproval => "expert_requires_approval",
            _ => "invalid",
        };
        ApiError::bad_request(code, err.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError::bad_request("invalid_body", rejection.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(rejection: QueryRejection) -> Self {
        ApiError::bad_request("invalid_query", rejection.body_text())
    }
}

impl From<AuthError> for ApiError {
    fn from(err: AuthError) -> Self {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", err.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

impl FromRequestParts<AppState> for AuthContext {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let header = parts.headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        let token = bearer(header)?;
        let claims = state.0.signer.verify(token, Utc::now())?;
        let user = state.0.repo.get_user(claims.sub).map_err(|err| match err {
            StorageError::NotFound { .. } => ApiError::from(AuthError::UnknownUser),
            other => ApiError::from(other),
        })?;
        Ok(AuthContext {
            user_id: user.id,
            role: user.role,
            token_expiry: chrono::DateTime::from_timestamp(claims.exp, 0).unwrap_or_default(),
        })
    }
}

fn require(ctx: &AuthContext, access: Access) -> ApiResult<()> {
    let allowed = match access {
        Access::Public | Access::Authenticated => true,
        Access::Expert => ctx.role.can_view_dashboard(),
        Access::Admin => ctx.role == Role::Admin,
    };
    if allowed { Ok(()) } else { Err(ApiError::forbidden()) }
}

fn parse_id<T: std::str::FromStr>(raw: &str) -> ApiResult<T> {
    raw.parse().map_err(|_| ApiError::bad_request("invalid_id", format!("{raw:?} is not a valid id")))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

async fn openapi() -> Json<Value> {
    Json(openapi_document())
}

#[derive(Deserialize)]
struct LoginRequest {
    #[serde(default)]
    display_name: Option<String>,
    #[serde(default)]
    role: Option<Role>,
}

#[derive(Serialize)]
struct LoginResponse {
    token: String,
    user_id: UserId,
    role: Role,
    expires_at: chrono::DateTime<Utc>,
}

async fn dev_login(State(state): State<AppState>, body: Result<Json<LoginRequest>, JsonRejection>) -> ApiResult<Json<LoginResponse>> {
    if !state.0.options.dev_login {
        return Err(ApiError::not_found("dev login is disabled"));
    }
    let Json(req) = body?;
    let now = Utc::now();
    let name = req.display_name.filter(|n| !n.trim().is_empty()).unwrap_or_else(|| "dev user".into());
    let user = UserAccount::new(name, req.role.unwrap_or(Role::General), now)?;
    state.0.repo.save_user(&user)?;
    let (token, expires_at) = state.0.signer.issue(user.id, user.role, now);
    Ok(Json(LoginResponse {
        token,
        user_id: user.id,
        role: user.role,
        expires_at,
    }))
}

#[derive(Deserialize)]
struct ClaimRequest {
    text: String,
    #[serde(default)]
    language: Option<String>,
}

async fn submit_claim(
    auth: AuthContext,
    State(state): State<AppState>,
    body: Result<Json<ClaimRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(req) = body?;
    let now = Utc::now();
    let claim = Claim::new(auth.user_id, &req.text, req.language.as_deref(), state.0.options.claim_max_len, now)?;
    state.0.limiter.check(auth.user_id, Instant::now()).map_err(|wait| ApiError {
        retry_after: Some(wait),
        ..ApiError::new(StatusCode::TOO_MANY_REQUESTS, "rate_limited", "too many claims, slow down")
    })?;
    state.0.repo.save_claim(&claim)?;
    let analysis = Analysis::pending(claim.id, now);
    state.0.repo.create_analysis(&analysis)?;
    state.0.runner.enqueue(analysis.id, claim.clone());
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"claim_id": claim.id, "analysis_id": analysis.id, "status": "pending"})),
    ))
}

/// Loads a view if the caller may see it: owners, experts and admins.
fn visible_view(state: &AppState, auth: &AuthContext, id: AnalysisId) -> ApiResult<AnalysisStatusView> {
    let record = state.0.repo.get_analysis_with_sources(id)?;
    let claim = state.0.repo.get_claim(record.analysis.claim_id)?;
    if claim.user_id != auth.user_id && !auth.role.can_view_dashboard() {
        return Err(ApiError::not_found(format!("analysis {id} not found")));
    }
    Ok(AnalysisStatusView::build(&record, &claim.language, state.0.catalog, true))
}

async fn get_analysis(auth: AuthContext, State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<AnalysisStatusView>> {
    let id: AnalysisId = parse_id(&id)?;
    Ok(Json(visible_view(&state, &auth, id)?))
}

fn status_event(view: &AnalysisStatusView) -> Event {
    Event::default()
        .event("status")
        .json_data(view)
        .expect("view serializes")
}

async fn analysis_events(
    auth: AuthContext,
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let id: AnalysisId = parse_id(&id)?;
    // Subscribe before the first read so no transition slips between them.
    let rx = state.0.runner.subscribe();
    let first = visible_view(&state, &auth, id)?;
    let stream = futures::stream::unfold(
        (Some(first), rx, state, auth, None::<AnalysisStatus>),
        move |(pending, mut rx, state, auth, last)| async move {
            if let Some(view) = pending {
                let status = view.status;
                return Some((Ok(status_event(&view)), (None, rx, state, auth, Some(status))));
            }
            if last.is_some_and(|s| s.is_terminal()) {
                return None;
            }
            loop {
                match rx.recv().await {
                    Ok(ev) if ev.analysis_id != id => continue,
                    Ok(_) | Err(RecvError::Lagged(_)) => {
                        let view = visible_view(&state, &auth, id).ok()?;
                        if Some(view.status) == last {
                            continue;
                        }
                        let status = view.status;
                        return Some((Ok(status_event(&view)), (None, rx, state, auth, Some(status))));
                    }
                    Err(RecvError::Closed) => return None,
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
struct FeedbackRequest {
    rating: i64,
    #[serde(default)]
    tags: Vec<String>,
    #[serde(default)]
    comment: Option<String>,
}

async fn submit_feedback(
    auth: AuthContext,
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id: AnalysisId = parse_id(&id)?;
    let Json(req) = body?;
    visible_view(&state, &auth, id)?;
    let tags: BTreeSet<String> = req.tags.iter().map(|t| t.trim().to_lowercase()).collect();
    let feedback = Feedback::new(id, auth.user_id, req.rating, tags, req.comment, state.0.repo.tag_vocabulary(), Utc::now())?;
    let feedback_id = state.0.repo.record_feedback(&feedback)?;
    Ok((StatusCode::CREATED, Json(json!({"feedback_id": feedback_id}))))
}

async fn feedback_tags(_auth: AuthContext, State(state): State<AppState>) -> Json<Value> {
    let tags: Vec<&str> = state.0.repo.tag_vocabulary().iter().collect();
    Json(json!({"tags": tags}))
}

#[derive(Deserialize)]
struct ClusterParams {
    #[serde(default)]
    k: Option<i64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    days: Option<u32>,
}

fn window(days: Option<u32>) -> TimeWindow {
    let now = Utc::now();
    match days {
        Some(d) => TimeWindow {
            from: now - chrono::Duration::days(i64::from(d)),
            to: now + chrono::Duration::seconds(1),
        },
        None => TimeWindow::all_until(now + chrono::Duration::seconds(1)),
    }
}

fn analytics_error(err: factcheck_core::analytics::AnalyticsError) -> ApiError {
    use factcheck_core::analytics::AnalyticsError;
    match err {
        AnalyticsError::Storage(e) => e.into(),
        AnalyticsError::InvalidK => ApiError::bad_request("invalid_k", "k must be at least 1"),
        AnalyticsError::EmptyCorpus => ApiError::bad_request("empty_corpus", "no claims to cluster"),
    }
}

async fn dashboard_clusters(
    auth: AuthContext,
    State(state): State<AppState>,
    params: Result<Query<ClusterParams>, QueryRejection>,
) -> ApiResult<Json<ClusterReport>> {
    require(&auth, Access::Expert)?;
    let Query(params) = params?;
    let k = match params.k {
        None => DEFAULT_K,
        Some(k) if k >= 1 => usize::try_from(k).unwrap_or(usize::MAX),
        Some(_) => return Err(ApiError::bad_request("invalid_k", "k must be at least 1")),
    };
    let seed = params.seed.unwrap_or(DEFAULT_SEED);
    let repo = Arc::clone(&state.0.repo);
    let report = state
        .0
        .clusters
        .get_or_try_refresh((k, seed, params.days), Instant::now(), || {
            let claims = claims_in_window(&*repo, window(params.days))?;
            cluster_claims(&claims, k, seed)
        })
        .map_err(analytics_error)?;
    Ok(Json(report))
}

#[derive(Deserialize)]
struct StatsParams {
    #[serde(default)]
    days: Option<u32>,
}

async fn dashboard_stats(
    auth: AuthContext,
    State(state): State<AppState>,
    params: Result<Query<StatsParams>, QueryRejection>,
) -> ApiResult<Json<DashboardStats>> {
    require(&auth, Access::Expert)?;
    let Query(params) = params?;
    let repo = Arc::clone(&state.0.repo);
    let stats = state
        .0
        .stats
        .get_or_try_refresh(params.days, Instant::now(), || compute_stats(&*repo, window(params.days)))
        .map_err(analytics_error)?;
    Ok(Json(stats))
}

async fn approve_expert(auth: AuthContext, State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    require(&auth, Access::Admin)?;
    let id: UserId = parse_id(&id)?;
    let user = state.0.repo.approve_expert(id)?;
    Ok(Json(json!({"user_id": user.id, "role": user.role})))
}
