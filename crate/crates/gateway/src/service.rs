//! Live plant behind HTTP. Requests never touch the simulation: directives
//! are role-checked, queued in the twin's mailbox and applied at the next
//! tick boundary. Reads serve the snapshot published after each tick.

use std::convert::Infallible;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use hydrotwin::agents::AgentStatus;
use hydrotwin::bus::Message;
use hydrotwin::plant::telemetry::UnitTelemetry;
use hydrotwin::plant::{EventKind, Scenario};
use hydrotwin::twin::{permitted, Directive, LoggedDirective, Twin, TwinError};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use crate::{GatewayError, Role, Tokens};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantView {
    pub minute: u64,
    pub corps_q_sp: f64,
    pub load_target: Option<f64>,
    pub plant_h_net: f64,
    pub sum_q_act: f64,
    pub sum_q_sp: f64,
    pub sum_p: f64,
    /// Agentless plant power, MW.
    pub baseline_p: Option<f64>,
    pub benefit_mw: f64,
    pub energy_mwhr: f64,
    pub baseline_energy_mwhr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitView {
    /// 1-based.
    pub unit: usize,
    pub telemetry: UnitTelemetry,
    pub online: bool,
    pub ejecting: bool,
    pub agent_enabled: bool,
    pub agent: Option<AgentStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlarmView {
    pub unit: usize,
    pub kind: String,
}

/// Everything a reader sees of one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub plant: PlantView,
    pub units: Vec<UnitView>,
    pub alarms: Vec<AlarmView>,
    pub last_message_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageView {
    pub id: u64,
    pub minute: u64,
    pub text: String,
    pub message: Message,
}

/// Body of a directive submission; the role comes from the bearer token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectiveRequest {
    pub kind: EventKind,
    #[serde(default)]
    pub unit: Option<usize>,
    #[serde(default)]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// Position in the submission order.
    pub seq: u64,
    /// Minute of the tick the directive was queued for.
    pub minute: u64,
    pub role: Role,
    pub request: DirectiveRequest,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Forbidden(String),
    Invalid(String),
}

fn snapshot_of(twin: &Twin, benefit_mw: f64, baseline_p: Option<f64>) -> Snapshot {
    let plant = twin.plant();
    let row = plant.snapshot_row();
    let statuses = twin.statuses();
    let units: Vec<UnitView> = plant
        .units()
        .iter()
        .enumerate()
        .map(|(u, s)| UnitView {
            unit: u + 1,
            telemetry: s.telemetry(),
            online: s.online,
            ejecting: s.ejecting(),
            agent_enabled: twin.enabled()[u],
            agent: statuses.get(u).cloned(),
        })
        .collect();
    let mut alarms = Vec::new();
    for (u, s) in plant.units().iter().enumerate() {
        if s.stator_hi {
            alarms.push(AlarmView { unit: u + 1, kind: "stator_hi".into() });
        }
        if s.vibration_alarm {
            alarms.push(AlarmView { unit: u + 1, kind: "vibration".into() });
        }
    }
    Snapshot {
        plant: PlantView {
            minute: twin.minute(),
            corps_q_sp: twin.corps_q_sp(),
            load_target: twin.load_target(),
            plant_h_net: row.plant_h_net,
            sum_q_act: row.sum_q_act,
            sum_q_sp: row.sum_q_sp,
            sum_p: row.sum_p,
            baseline_p,
            benefit_mw,
            energy_mwhr: plant.energy_mwhr(),
            baseline_energy_mwhr: twin.shadow().map(|s| s.energy_mwhr()),
        },
        units,
        alarms,
        last_message_id: twin.bus().last_message_id(),
    }
}

struct Inner {
    twin: Twin,
    script: Option<Scenario>,
    ticks: u64,
    seq: u64,
}

/// A twin stepped by one writer, with published snapshots for readers.
pub struct LiveSim {
    inner: Mutex<Inner>,
    latest: watch::Sender<Arc<Snapshot>>,
    events: broadcast::Sender<Arc<Snapshot>>,
    messages: RwLock<Vec<MessageView>>,
    audit: RwLock<Vec<AuditRecord>>,
}

impl LiveSim {
    /// `script` events fire at their minutes counted from the first tick.
    pub fn new(twin: Twin, script: Option<Scenario>) -> Self {
        let first = Arc::new(snapshot_of(&twin, 0.0, None));
        let (latest, _) = watch::channel(first);
        let (events, _) = broadcast::channel(1024);
        Self {
            inner: Mutex::new(Inner { twin, script, ticks: 0, seq: 0 }),
            latest,
            events,
            messages: RwLock::new(Vec::new()),
            audit: RwLock::new(Vec::new()),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Advances one minute and publishes the result.
    pub fn tick_once(&self) -> Result<Arc<Snapshot>, GatewayError> {
        let mut g = self.lock();
        let Inner { twin, script, ticks, .. } = &mut *g;
        if let Some(sc) = script {
            for e in sc.events_at(*ticks) {
                twin.submit(Directive::scripted(e))?;
            }
        }
        let seen = twin.bus().last_message_id();
        let t = twin.tick()?;
        *ticks += 1;
        let minute = t.row.timestamp;
        let fresh: Vec<MessageView> = twin
            .bus()
            .poll_messages(seen)
            .iter()
            .map(|m| MessageView { id: m.id, minute, text: m.render(), message: m.clone() })
            .collect();
        let baseline = t.shadow_row.as_ref().map(|r| r.sum_p);
        let snap = Arc::new(snapshot_of(twin, t.benefit_mw, baseline));
        drop(g);
        self.messages.write().unwrap_or_else(|e| e.into_inner()).extend(fresh);
        self.latest.send_replace(snap.clone());
        let _ = self.events.send(snap.clone());
        Ok(snap)
    }

    /// Role-checks and queues a directive, recording the outcome either way.
    pub fn submit(&self, role: Role, req: DirectiveRequest) -> Result<u64, Rejection> {
        let mut g = self.lock();
        g.seq += 1;
        let seq = g.seq;
        let minute = g.twin.minute();
        let d = Directive::from_user(role.user(), req.kind, req.unit, req.value);
        let outcome = if !permitted(&role.user(), req.kind) {
            Err(Rejection::Forbidden(format!("{role} may not issue {:?}", req.kind)))
        } else {
            g.twin.submit(d).map_err(|e| match e {
                TwinError::Forbidden { .. } => Rejection::Forbidden(e.to_string()),
                other => Rejection::Invalid(other.to_string()),
            })
        };
        drop(g);
        let reason = match &outcome {
            Ok(()) => None,
            Err(Rejection::Forbidden(r) | Rejection::Invalid(r)) => Some(r.clone()),
        };
        let rec = AuditRecord { seq, minute, role, request: req, accepted: outcome.is_ok(), reason };
        self.audit.write().unwrap_or_else(|e| e.into_inner()).push(rec);
        outcome.map(|()| minute)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.latest.borrow().clone()
    }

    /// Per-tick snapshots from now on.
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<Snapshot>> {
        self.events.subscribe()
    }

    pub fn messages_since(&self, since: u64) -> Vec<MessageView> {
        let all = self.messages.read().unwrap_or_else(|e| e.into_inner());
        let start = all.partition_point(|m| m.id <= since);
        all[start..].to_vec()
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        self.audit.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn directive_log(&self) -> Vec<LoggedDirective> {
        self.lock().twin.directive_log().to_vec()
    }

    pub fn ticks(&self) -> u64 {
        self.lock().ticks
    }

    /// Everything applied so far, including scripted events, as a batch
    /// scenario covering the ticks run.
    pub fn replay_scenario(&self, id: &str) -> Scenario {
        let g = self.lock();
        g.twin.log_as_scenario(id, g.ticks)
    }
}

/// Ticks `sim` every `period` until the returned handle is aborted.
pub fn spawn_ticker(sim: Arc<LiveSim>, period: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut every = tokio::time::interval(period);
        every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            every.tick().await;
            let s = sim.clone();
            match tokio::task::spawn_blocking(move || s.tick_once()).await {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => {
                    tracing::error!("tick failed: {e}");
                    break;
                }
                Err(e) => {
                    tracing::error!("tick task: {e}");
                    break;
                }
            }
        }
    })
}

#[derive(Clone)]
pub struct AppState {
    pub sim: Arc<LiveSim>,
    pub tokens: Arc<Tokens>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

/// The caller's role, from `Authorization: Bearer <token>`.
pub struct Session(pub Role);

impl FromRequestParts<AppState> for Session {
    type Rejection = Response;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        match token.and_then(|t| state.tokens.role(t)) {
            Some(role) => Ok(Session(role)),
            None => Err(ApiError(StatusCode::UNAUTHORIZED, "missing or unknown bearer token".into()).into_response()),
        }
    }
}

async fn get_plant(State(s): State<AppState>, _: Session) -> Json<PlantView> {
    Json(s.sim.snapshot().plant.clone())
}

async fn get_units(State(s): State<AppState>, _: Session) -> Json<Vec<UnitView>> {
    Json(s.sim.snapshot().units.clone())
}

async fn get_unit(State(s): State<AppState>, _: Session, Path(id): Path<usize>) -> Result<Json<UnitView>, ApiError> {
    let snap = s.sim.snapshot();
    id.checked_sub(1)
        .and_then(|i| snap.units.get(i))
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no unit {id}")))
}

async fn get_agents(State(s): State<AppState>, _: Session) -> Json<Vec<Option<AgentStatus>>> {
    Json(s.sim.snapshot().units.iter().map(|u| u.agent.clone()).collect())
}

async fn get_alarms(State(s): State<AppState>, _: Session) -> Json<Vec<AlarmView>> {
    Json(s.sim.snapshot().alarms.clone())
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: u64,
}

async fn get_messages(State(s): State<AppState>, _: Session, Query(q): Query<Since>) -> Json<Vec<MessageView>> {
    Json(s.sim.messages_since(q.since))
}

async fn get_audit(State(s): State<AppState>, _: Session) -> Json<Vec<AuditRecord>> {
    Json(s.sim.audit())
}

async fn get_directives(State(s): State<AppState>, _: Session) -> Json<Vec<LoggedDirective>> {
    Json(s.sim.directive_log())
}

async fn get_replay(State(s): State<AppState>, _: Session) -> Response {
    let sc = s.sim.replay_scenario("replay");
    ([(header::CONTENT_TYPE, "application/toml")], sc.to_toml_string()).into_response()
}

async fn post_directive(State(s): State<AppState>, Session(role): Session, body: Bytes) -> Result<Response, ApiError> {
    let req: DirectiveRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed directive: {e}")))?;
    match s.sim.submit(role, req) {
        Ok(minute) => {
            Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "queued": true, "applies_at": minute })))
                .into_response())
        }
        Err(Rejection::Forbidden(r)) => Err(ApiError(StatusCode::FORBIDDEN, r)),
        Err(Rejection::Invalid(r)) => Err(ApiError(StatusCode::BAD_REQUEST, r)),
    }
}

fn ndjson_line(snap: &Snapshot) -> Bytes {
    let mut line = serde_json::to_vec(snap).expect("snapshot serializes");
    line.push(b'\n');
    Bytes::from(line)
}

/// One JSON line for the current tick, then one per tick as they happen.
/// A reader that falls behind skips the ticks it missed.
async fn stream(State(s): State<AppState>, _: Session) -> Response {
    let rx = s.sim.subscribe();
    let first = s.sim.snapshot();
    let after = first.plant.minute;
    let head = futures::stream::once(async move { Ok::<_, Infallible>(ndjson_line(&first)) });
    let tail = futures::stream::unfold(rx, move |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(snap) if snap.plant.minute > after => return Some((Ok(ndjson_line(&snap)), rx)),
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let body = Body::from_stream(futures::StreamExt::chain(head, tail));
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/plant", get(get_plant))
        .route("/api/units", get(get_units))
        .route("/api/units/{id}", get(get_unit))
        .route("/api/agents", get(get_agents))
        .route("/api/alarms", get(get_alarms))
        .route("/api/messages", get(get_messages))
        .route("/api/audit", get(get_audit))
        .route("/api/directives", get(get_directives).post(post_directive))
        .route("/api/replay", get(get_replay))
        .route("/api/stream", get(stream))
        .with_state(state)
}
