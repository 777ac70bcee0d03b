//! Route handlers. Every endpoint requires `Authorization: Bearer <token>`.

use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use qisp_core::config::{Role, UserAccount};
use qisp_core::engine::EngineError;
use qisp_core::fabric::{ChannelKind, FabricError, UserId};
use qisp_core::scheduler::{
    Decision, RejectReason, Reservation, ReservationDraft, ReservationId, ReservationStatus, Resource,
    SchedulerError, Window,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::jobs::{self, JobState, MeasurementSpec};
use crate::writer::{JobNotice, ServerEvent, WriterError};
use crate::AppState;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/reservations", post(create_reservation).get(list_reservations))
        .route("/api/reservations/{id}", axum::routing::delete(cancel_reservation))
        .route("/api/topology", get(topology))
        .route("/api/fabric", get(fabric))
        .route("/api/admin/routes", post(admin_route))
        .route("/api/status", get(status))
        .route("/api/status/stream", get(status_stream))
        .route("/api/measurements", post(create_measurement))
        .route("/api/measurements/{id}", get(get_measurement))
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: &'static str,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub conflicting: Vec<ReservationId>,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        ApiError {
            status,
            error,
            detail: detail.into(),
            reason: None,
            conflicting: Vec::new(),
        }
    }

    fn forbidden(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::FORBIDDEN, "forbidden", detail)
    }

    fn not_found(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status;
        let mut resp = (status, Json(self)).into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

impl From<WriterError> for ApiError {
    fn from(e: WriterError) -> Self {
        match e {
            WriterError::Stopped => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", e.to_string()),
            WriterError::Engine(e) => e.into(),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let detail = e.to_string();
        match e {
            EngineError::Scheduler(SchedulerError::MalformedRequest(_)) => {
                ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", detail)
            }
            EngineError::Scheduler(SchedulerError::UnknownReservation(_)) => ApiError::not_found(detail),
            EngineError::Scheduler(SchedulerError::AlreadyFinished(_)) => {
                ApiError::new(StatusCode::CONFLICT, "already_finished", detail)
            }
            EngineError::Scheduler(SchedulerError::FabricInconsistency { .. }) => {
                ApiError::new(StatusCode::CONFLICT, "fabric_inconsistency", detail)
            }
            EngineError::Fabric(FabricError::ChannelOccupied { .. }) => {
                ApiError::new(StatusCode::CONFLICT, "channel_occupied", detail)
            }
            EngineError::Fabric(FabricError::GroupViolation { .. }) => {
                ApiError::new(StatusCode::CONFLICT, "group_violation", detail)
            }
            EngineError::Fabric(_) => ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", detail),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", detail),
        }
    }
}

/// The authenticated caller.
pub struct Auth(pub UserAccount);

impl Auth {
    fn is_admin(&self) -> bool {
        self.0.role == Role::Admin
    }

    fn may_act_for(&self, user: UserId) -> bool {
        self.is_admin() || self.0.user == user
    }
}

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let unauthorized = |d: &str| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", d);
        let value = parts
            .headers
            .get(header::AUTHORIZATION)
            .ok_or_else(|| unauthorized("missing bearer token"))?
            .to_str()
            .map_err(|_| unauthorized("malformed authorization header"))?;
        let token = value
            .strip_prefix("Bearer ")
            .ok_or_else(|| unauthorized("expected a bearer token"))?
            .trim();
        state
            .0
            .config
            .account_for_token(token)
            .cloned()
            .map(Auth)
            .ok_or_else(|| unauthorized("unknown token"))
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes, status: StatusCode, error: &'static str) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(status, error, e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateReservation {
    /// Defaults to the caller.
    #[serde(default)]
    user: Option<UserId>,
    resources: Vec<Resource>,
    window: Window,
}

async fn create_reservation(State(state): State<AppState>, auth: Auth, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateReservation = parse_body(&body, StatusCode::BAD_REQUEST, "malformed_request")?;
    let user = req.user.unwrap_or(auth.0.user);
    if !auth.may_act_for(user) {
        return Err(ApiError::forbidden(format!("{} may not reserve for {user}", auth.0.user)));
    }
    let outcome = state
        .0
        .writer
        .submit(ReservationDraft {
            user,
            resources: req.resources,
            window: req.window,
        })
        .await?;
    match outcome.decision {
        Decision::Granted(r) => Ok((StatusCode::CREATED, Json(r)).into_response()),
        Decision::Rejected(r) => Err(ApiError {
            status: StatusCode::CONFLICT,
            error: "rejected",
            detail: r.detail,
            reason: Some(r.reason),
            conflicting: r.conflicting,
        }),
    }
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    user: Option<UserId>,
}

async fn list_reservations(
    State(state): State<AppState>,
    auth: Auth,
    Query(q): Query<ListQuery>,
) -> Result<Json<Vec<Reservation>>, ApiError> {
    let snap = state.0.snapshot.borrow().clone();
    let list = match q.user {
        Some(u) if auth.may_act_for(u) => snap.calendar.for_user(u).cloned().collect(),
        Some(u) => return Err(ApiError::forbidden(format!("{} may not list reservations of {u}", auth.0.user))),
        None if auth.is_admin() => snap.calendar.reservations().cloned().collect(),
        None => snap.calendar.for_user(auth.0.user).cloned().collect(),
    };
    Ok(Json(list))
}

fn parse_reservation_id(raw: &str) -> Option<ReservationId> {
    raw.strip_prefix('r').unwrap_or(raw).parse().ok().map(ReservationId)
}

async fn cancel_reservation(
    State(state): State<AppState>,
    auth: Auth,
    Path(raw): Path<String>,
) -> Result<Json<Reservation>, ApiError> {
    let id = parse_reservation_id(&raw).ok_or_else(|| ApiError::not_found(format!("no reservation {raw}")))?;
    let owner = state
        .0
        .snapshot
        .borrow()
        .calendar
        .get(id)
        .map(|r| r.user)
        .ok_or_else(|| ApiError::not_found(format!("no reservation {id}")))?;
    if !auth.may_act_for(owner) {
        return Err(ApiError::forbidden(format!("{id} belongs to {owner}")));
    }
    let (res, _) = state.0.writer.cancel(id).await?;
    Ok(Json(res))
}

async fn topology(State(state): State<AppState>, _auth: Auth) -> Response {
    Json(state.0.config.topology.to_doc()).into_response()
}

async fn fabric(State(state): State<AppState>, _auth: Auth) -> Response {
    Json(state.0.snapshot.borrow().fabric.snapshot()).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdminRoute {
    kind: ChannelKind,
    channel: u8,
    /// `null` releases the channel.
    user: Option<UserId>,
}

async fn admin_route(State(state): State<AppState>, auth: Auth, body: Bytes) -> Result<Response, ApiError> {
    if !auth.is_admin() {
        return Err(ApiError::forbidden("manual routing requires the admin role"));
    }
    let req: AdminRoute = parse_body(&body, StatusCode::BAD_REQUEST, "malformed_request")?;
    let snapshot = state.0.writer.override_route(req.kind, req.channel, req.user).await?;
    Ok(Json(snapshot).into_response())
}

async fn status(State(state): State<AppState>, _auth: Auth) -> Response {
    let frame = state.0.snapshot.borrow().frame.clone();
    Json(frame.as_ref()).into_response()
}

fn sse_event(event: &ServerEvent) -> Option<Event> {
    let (name, data) = match event {
        ServerEvent::Status(frame) => ("status", serde_json::to_string(frame.as_ref())),
        ServerEvent::Action(a) => ("action", serde_json::to_string(a)),
        ServerEvent::Job(j) => ("job", serde_json::to_string(j)),
    };
    data.ok().map(|d| Event::default().event(name).data(d))
}

/// A full frame first, then every status frame, scheduler action and job
/// completion as it happens.
async fn status_stream(
    State(state): State<AppState>,
    _auth: Auth,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.0.events.subscribe();
    let first = ServerEvent::Status(state.0.snapshot.borrow().frame.clone());
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => return Some((ev, rx)),
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::once(async move { first })
        .chain(live)
        .filter_map(|ev| async move { sse_event(&ev).map(Ok) });
    Sse::new(events).keep_alive(KeepAlive::default())
}

async fn create_measurement(State(state): State<AppState>, auth: Auth, body: Bytes) -> Result<Response, ApiError> {
    let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
    let spec: MeasurementSpec = parse_body(&body, unprocessable, "invalid_parameters")?;
    spec.validate()
        .map_err(|d| ApiError::new(unprocessable, "invalid_parameters", d))?;
    let owner = auth.0.user;
    let snap = state.0.snapshot.borrow().clone();
    let held: Vec<u8> = snap
        .calendar
        .for_user(owner)
        .filter(|r| r.status == ReservationStatus::Active)
        .flat_map(|r| r.resources.iter().filter(|x| x.kind == ChannelKind::Spd).map(|x| x.channel))
        .collect();
    let missing: Vec<u8> = spec.spd_channels().into_iter().filter(|c| !held.contains(c)).collect();
    if !missing.is_empty() {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "not_holding_resources",
            format!("{owner} holds no active reservation for SPD channel(s) {missing:?}"),
        ));
    }
    let scenario = spec
        .scenario(&state.0.config, &snap.fabric)
        .map_err(|d| ApiError::new(unprocessable, "invalid_parameters", d))?;

    let now = state.0.clock.now_ms();
    let job = state.0.jobs.create(owner, spec.clone(), now);
    let id = job.id.clone();
    let shared = state.0.clone();
    tokio::spawn(async move {
        let Ok(_permit) = shared.jobs.permits.clone().acquire_owned().await else {
            return;
        };
        shared.jobs.update(&id, |j| j.state = JobState::Running);
        let defaults = shared.config.analysis.clone();
        let outcome = tokio::task::spawn_blocking(move || jobs::run(&spec, &scenario, &defaults))
            .await
            .unwrap_or_else(|e| Err(format!("job panicked: {e}")));
        let finished = shared.clock.now_ms();
        let state = if outcome.is_ok() { JobState::Done } else { JobState::Failed };
        shared.jobs.update(&id, |j| {
            j.state = state;
            j.finished_ms = Some(finished);
            match outcome {
                Ok(r) => j.result = Some(r),
                Err(e) => j.error = Some(e),
            }
        });
        tracing::info!(target: "qisp::jobs", "measurement {id} for {owner}: {state:?}");
        let _ = shared.events.send(ServerEvent::Job(JobNotice { id, owner, state }));
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": job.id, "state": job.state }))).into_response())
}

async fn get_measurement(
    State(state): State<AppState>,
    auth: Auth,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let job = state
        .0
        .jobs
        .get(&id, state.0.clock.now_ms())
        .ok_or_else(|| ApiError::not_found(format!("no measurement {id}")))?;
    if !auth.may_act_for(job.owner) {
        return Err(ApiError::forbidden(format!("{id} belongs to {}", job.owner)));
    }
    Ok(Json(job).into_response())
}
