use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use hydrotwin::agents::default_rules;
use hydrotwin::plant::Scenario;
use hydrotwin::twin::{Twin, TwinConfig};
use hydrotwin_gateway::service::{router, AppState, AuditRecord, LiveSim, MessageView, PlantView, Snapshot, UnitView};
use hydrotwin_gateway::{Role, Tokens};
use serde::de::DeserializeOwned;
use serde_json::Value;
use tower::ServiceExt;

fn setup() -> (Arc<LiveSim>, Router) {
    let twin = Twin::new(TwinConfig::default(), default_rules(), None, 24_000.0, 1, 0).unwrap();
    let sim = Arc::new(LiveSim::new(twin, None));
    let tokens = Tokens::parse("op=operator,disp=dispatch,corps=corps").unwrap();
    let app = router(AppState { sim: sim.clone(), tokens: Arc::new(tokens) });
    (sim, app)
}

fn get(path: &str, token: Option<&str>) -> Request<Body> {
    let mut b = Request::get(path);
    if let Some(t) = token {
        b = b.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    b.body(Body::empty()).unwrap()
}

fn post(token: &str, body: &str) -> Request<Body> {
    Request::post("/api/directives")
        .header(header::AUTHORIZATION, format!("Bearer {token}"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json<T: DeserializeOwned>(app: &Router, path: &str) -> T {
    let (status, body) = call(app, get(path, Some("op"))).await;
    assert_eq!(status, StatusCode::OK, "{path}");
    serde_json::from_slice(&body).unwrap()
}

async fn tick(sim: &Arc<LiveSim>) -> Arc<Snapshot> {
    let s = sim.clone();
    tokio::task::spawn_blocking(move || s.tick_once().unwrap()).await.unwrap()
}

#[tokio::test]
async fn requests_without_a_known_token_are_unauthorized() {
    let (_, app) = setup();
    for path in ["/api/plant", "/api/units", "/api/stream", "/api/audit"] {
        assert_eq!(call(&app, get(path, None)).await.0, StatusCode::UNAUTHORIZED, "{path}");
        assert_eq!(call(&app, get(path, Some("nope"))).await.0, StatusCode::UNAUTHORIZED, "{path}");
    }
    assert_eq!(call(&app, post("nope", r#"{"kind":"set_plant_flow","value":1}"#)).await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn corps_flow_setpoint_applies_on_the_next_tick() {
    let (sim, app) = setup();
    tick(&sim).await;
    let (status, _) = call(&app, post("corps", r#"{"kind":"set_plant_flow","value":25000}"#)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let before: PlantView = json(&app, "/api/plant").await;
    assert_eq!(before.corps_q_sp, 24_000.0);
    tick(&sim).await;
    let after: PlantView = json(&app, "/api/plant").await;
    assert_eq!(after.corps_q_sp, 25_000.0);
    assert_eq!(after.minute, before.minute + 1);
}

#[tokio::test]
async fn wrong_role_is_forbidden_and_audited() {
    let (_, app) = setup();
    let (status, body) = call(&app, post("disp", r#"{"kind":"disable_agent","unit":1}"#)).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let err: Value = serde_json::from_slice(&body).unwrap();
    assert!(err["error"].as_str().unwrap().contains("dispatch"));

    call(&app, post("disp", r#"{"kind":"set_load_target","value":55}"#)).await;
    let audit: Vec<AuditRecord> = json(&app, "/api/audit").await;
    assert_eq!(audit.len(), 2);
    assert_eq!((audit[0].role, audit[0].accepted), (Role::Dispatch, false));
    assert!(audit[0].reason.is_some());
    assert_eq!((audit[1].seq, audit[1].accepted), (2, true));
}

#[tokio::test]
async fn malformed_or_invalid_directives_are_bad_requests() {
    let (_, app) = setup();
    for body in [
        "not json",
        r#"{"kind":"open_floodgates"}"#,
        r#"{"kind":"set_plant_flow","value":25000,"extra":1}"#,
        r#"{"kind":"set_plant_flow","value":-5}"#,
    ] {
        assert_eq!(call(&app, post("corps", body)).await.0, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(call(&app, post("op", r#"{"kind":"disable_agent","unit":9}"#)).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, post("op", r#"{"kind":"disable_agent"}"#)).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn disabled_agent_leaves_its_unit_unbiased() {
    let (sim, app) = setup();
    for _ in 0..5 {
        tick(&sim).await;
    }
    let (status, _) = call(&app, post("op", r#"{"kind":"disable_agent","unit":2}"#)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    tick(&sim).await;
    let u: UnitView = json(&app, "/api/units/2").await;
    assert!(!u.agent_enabled);
    let bias = u.agent.unwrap().bias;
    assert_eq!((bias.q_bias, bias.bp_bias), (0.0, 0.0));
    let units: Vec<UnitView> = json(&app, "/api/units").await;
    assert!(units[0].agent_enabled && units[2].agent_enabled);
    assert_eq!(call(&app, get("/api/units/4", Some("op"))).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn messages_can_be_read_incrementally() {
    let (sim, app) = setup();
    call(&app, post("corps", r#"{"kind":"set_plant_flow","value":26000}"#)).await;
    tick(&sim).await;
    let all: Vec<MessageView> = json(&app, "/api/messages?since=0").await;
    assert!(all.iter().any(|m| m.text.contains("26000")), "{all:?}");
    let last = all.last().unwrap().id;
    let none: Vec<MessageView> = json(&app, &format!("/api/messages?since={last}")).await;
    assert!(none.is_empty());
}

#[tokio::test]
async fn directive_log_replays_as_a_scenario() {
    let (sim, app) = setup();
    tick(&sim).await;
    call(&app, post("disp", r#"{"kind":"set_load_target","value":58}"#)).await;
    tick(&sim).await;
    let log: Vec<Value> = json(&app, "/api/directives").await;
    assert_eq!(log.len(), 1);
    let (status, body) = call(&app, get("/api/replay", Some("corps"))).await;
    assert_eq!(status, StatusCode::OK);
    let sc = Scenario::from_toml_str(std::str::from_utf8(&body).unwrap(), 3).unwrap();
    assert_eq!(sc.duration_minutes, 2);
    assert_eq!((sc.events[0].at_minute, sc.events[0].value), (1, 58.0));
}

#[tokio::test]
async fn stream_sends_one_json_line_per_tick() {
    let (sim, app) = setup();
    tick(&sim).await;
    let resp = app.clone().oneshot(get("/api/stream", Some("disp"))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()[header::CONTENT_TYPE], "application/x-ndjson");
    let mut body = resp.into_body();
    let mut minutes = Vec::new();
    let mut buf = Vec::new();
    while minutes.len() < 3 {
        if minutes.len() + 1 > usize::try_from(sim.ticks()).unwrap() {
            tick(&sim).await;
        }
        let frame = body.frame().await.unwrap().unwrap();
        buf.extend_from_slice(frame.data_ref().unwrap());
        while let Some(nl) = buf.iter().position(|&b| b == b'\n') {
            let line: Vec<u8> = buf.drain(..=nl).collect();
            let snap: Snapshot = serde_json::from_slice(&line).unwrap();
            minutes.push(snap.plant.minute);
        }
    }
    assert_eq!(minutes, vec![1, 2, 3]);
}
