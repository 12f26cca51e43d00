//! HTTP JSON API in front of a [`SessionService`].
//!
//! Every request carries `Authorization: Bearer <token>`. Rater tokens open the
//! session endpoints; the admin token opens `/admin/export`. The service only
//! ever sees the manifest, so nothing it returns can name a record or an arm.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use dqa_core::questionnaire::{Answers, QuestionnaireSchema, ValidationIssue};
use dqa_core::session::{export_csv, export_jsonl, Acknowledgement, Progress, SessionError, SessionService};
use dqa_core::signal_io::{render_params, RenderSpec, Strip, DEFAULT_MM_PER_MV, DEFAULT_MM_PER_S};

pub type AppState = Arc<SessionService>;

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<ValidationIssue>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.into(),
                issues: Vec::new(),
            },
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownStrip(_) => StatusCode::NOT_FOUND,
            SessionError::UnknownRater(_) => StatusCode::UNAUTHORIZED,
            SessionError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::FutureSubset { .. } => StatusCode::CONFLICT,
            SessionError::CorruptLog { .. } | SessionError::Io(_) | SessionError::Json(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let mut err = ApiError::new(status, e.to_string());
        if let SessionError::Invalid(issues) = e {
            err.body.issues = issues;
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn bearer(parts: &Parts) -> Option<&str> {
    parts
        .headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

/// The rater a request is authenticated as.
pub struct Rater(pub String);

impl FromRequestParts<AppState> for Rater {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        bearer(parts)
            .and_then(|t| state.authenticate(t))
            .map(|r| Rater(r.to_string()))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing or unknown rater token"))
    }
}

/// A request carrying the admin token.
pub struct Admin;

impl FromRequestParts<AppState> for Admin {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        match bearer(parts) {
            Some(t) if state.is_admin(t) => Ok(Admin),
            Some(t) if state.authenticate(t).is_some() => {
                Err(ApiError::new(StatusCode::FORBIDDEN, "admin token required"))
            }
            _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing or unknown admin token")),
        }
    }
}

/// Rater or admin; the schema is the same for everyone.
pub struct AnyUser;

impl FromRequestParts<AppState> for AnyUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        match bearer(parts) {
            Some(t) if state.is_admin(t) || state.authenticate(t).is_some() => Ok(AnyUser),
            _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "missing or unknown token")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextStrip {
    /// True once every presentation has an answer; the other fields are then null.
    pub done: bool,
    pub id: Option<String>,
    pub subset: Option<usize>,
    pub position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadView {
    pub lead: String,
    pub fs: f64,
    pub samples: Vec<f64>,
    pub render: RenderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripView {
    pub id: String,
    pub subset: usize,
    pub position: usize,
    pub leads: Vec<LeadView>,
}

#[derive(Debug, Deserialize)]
pub struct Scale {
    pub mm_per_mv: Option<f64>,
    pub mm_per_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    pub format: Option<String>,
}

async fn schema(_: AnyUser, State(svc): State<AppState>) -> Json<QuestionnaireSchema> {
    Json(svc.schema().clone())
}

async fn next_strip(Rater(rater): Rater, State(svc): State<AppState>) -> Json<NextStrip> {
    let next = svc.next_strip(&rater);
    Json(NextStrip {
        done: next.is_none(),
        id: next.map(|p| p.id.clone()),
        subset: next.map(|p| p.subset),
        position: next.map(|p| p.position),
    })
}

async fn strip(
    Rater(rater): Rater,
    State(svc): State<AppState>,
    Path(id): Path<String>,
    Query(scale): Query<Scale>,
) -> Result<Json<StripView>, ApiError> {
    let p = svc
        .presentation(&id)
        .ok_or_else(|| SessionError::UnknownStrip(id.clone()))?;
    let current = svc.progress(&rater).current_subset.unwrap_or(usize::MAX);
    if p.subset > current {
        return Err(SessionError::FutureSubset {
            subset: p.subset,
            current,
        }
        .into());
    }
    let mm_per_mv = scale.mm_per_mv.unwrap_or(DEFAULT_MM_PER_MV);
    let mm_per_s = scale.mm_per_s.unwrap_or(DEFAULT_MM_PER_S);
    let leads = p
        .strips
        .iter()
        .map(|s| {
            // render_params only needs the samples; the strip stays anonymous
            let strip = Strip {
                record_id: String::new(),
                lead: s.lead.clone(),
                t_start: 0.0,
                duration: s.samples.len() as f64 / s.fs,
                fs: s.fs,
                samples: s.samples.clone(),
            };
            let render = render_params(&strip, mm_per_mv, mm_per_s)
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
            Ok(LeadView {
                lead: strip.lead,
                fs: strip.fs,
                samples: strip.samples,
                render,
            })
        })
        .collect::<Result<_, ApiError>>()?;
    Ok(Json(StripView {
        id: p.id.clone(),
        subset: p.subset,
        position: p.position,
        leads,
    }))
}

async fn respond(
    Rater(rater): Rater,
    State(svc): State<AppState>,
    Path(id): Path<String>,
    Json(answers): Json<Answers>,
) -> Result<Json<Acknowledgement>, ApiError> {
    // the append syncs to disk before returning
    let ack = tokio::task::spawn_blocking(move || svc.record_response(&rater, &id, answers))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(ack))
}

async fn progress(Rater(rater): Rater, State(svc): State<AppState>) -> Json<Progress> {
    Json(svc.progress(&rater))
}

async fn export(_: Admin, State(svc): State<AppState>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let rows = svc.export();
    let (body, mime) = match q.format.as_deref().unwrap_or("jsonl") {
        "jsonl" => (export_jsonl(&rows)?, "application/x-ndjson"),
        "csv" => (export_csv(&rows)?, "text/csv"),
        other => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("unknown export format {other:?}; use jsonl or csv"),
            ))
        }
    };
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static(mime))], body).into_response())
}

pub fn router(service: AppState) -> Router {
    Router::new()
        .route("/study/schema", get(schema))
        .route("/session/next-strip", get(next_strip))
        .route("/session/progress", get(progress))
        .route("/strip/{id}", get(strip))
        .route("/strip/{id}/response", post(respond))
        .route("/admin/export", get(export))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(service, listener).await
}

pub async fn serve_on(service: AppState, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
