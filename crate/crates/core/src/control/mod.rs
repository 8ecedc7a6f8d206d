//! HTTP control service. Each run lives on its own simulation thread;
//! commands are checked on submission and applied between rounds, and
//! snapshots are published as immutable values.
//!
//! Routes, all under `/v1`:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/runs` | scenario JSON → `{"run_id"}` |
//! | GET | `/runs` | run ids |
//! | GET | `/runs/{id}/snapshot` | latest [`RunSnapshot`] |
//! | GET | `/runs/{id}/stream` | server-sent snapshots, latest first |
//! | POST | `/runs/{id}/command` | [`Command`] → 202, or 400 with a reason |
//! | GET | `/runs/{id}/stats` | network counters and per-edge ledger |

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Serialize;
use serde_json::json;
use tokio::sync::{broadcast, watch};
use tokio_stream::wrappers::BroadcastStream;

use crate::error::{Error, Result};
use crate::run::{Command, CommandCheck, NetReport, Run, RunSnapshot, RunStatus};
use crate::scenario::Scenario;

/// Snapshots buffered per stream subscriber before it starts losing them.
const STREAM_BUFFER: usize = 1024;

/// Snapshot plus the network ledger at the same instant.
#[derive(Clone, Debug, Serialize)]
pub struct Published {
    pub snapshot: RunSnapshot,
    pub net: NetReport,
}

struct RunHandle {
    check: CommandCheck,
    commands: Mutex<mpsc::Sender<Command>>,
    latest: watch::Receiver<Arc<Published>>,
    events: broadcast::Sender<Arc<Published>>,
}

#[derive(Clone, Default)]
pub struct AppState {
    runs: Arc<Mutex<BTreeMap<String, Arc<RunHandle>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prepares the run on the calling thread, then hands it to a new
    /// simulation thread. Returns the run id.
    pub fn start(&self, scenario: Scenario) -> Result<String> {
        let run = Run::new(scenario)?;
        let id = format!("run-{}", self.next_id.fetch_add(1, Ordering::SeqCst) + 1);
        let check = run.command_check();
        let first = Arc::new(publish(&run, &id, 0));
        let (latest_tx, latest) = watch::channel(first);
        let (events, _) = broadcast::channel(STREAM_BUFFER);
        let (cmd_tx, cmd_rx) = mpsc::channel();
        let handle =
            Arc::new(RunHandle { check, commands: Mutex::new(cmd_tx), latest, events: events.clone() });
        let thread_id = id.clone();
        std::thread::Builder::new()
            .name(format!("sim-{id}"))
            .spawn(move || simulate(run, thread_id, cmd_rx, latest_tx, events))?;
        self.runs.lock().expect("run table").insert(id.clone(), handle);
        Ok(id)
    }

    fn get(&self, id: &str) -> Option<Arc<RunHandle>> {
        self.runs.lock().expect("run table").get(id).cloned()
    }

    /// Latest published snapshot of a run.
    pub fn snapshot(&self, id: &str) -> Option<RunSnapshot> {
        self.get(id).map(|h| h.latest.borrow().snapshot.clone())
    }

    /// Checks and queues a command.
    pub fn command(&self, id: &str, cmd: Command) -> Result<()> {
        let h = self.get(id).ok_or_else(|| Error::NotFound(format!("run {id}")))?;
        h.check.check(&cmd)?;
        let sender = h.commands.lock().expect("command sender");
        sender.send(cmd).map_err(|_| Error::NotFound(format!("run {id} has stopped")))
    }
}

fn publish(run: &Run, id: &str, seq: u64) -> Published {
    Published { snapshot: run.snapshot(id, seq), net: NetReport::of(run.network()) }
}

/// Simulation loop: drain commands, run a round, publish when due. Blocks
/// while the run is paused or done.
fn simulate(
    mut run: Run,
    id: String,
    commands: mpsc::Receiver<Command>,
    latest: watch::Sender<Arc<Published>>,
    events: broadcast::Sender<Arc<Published>>,
) {
    let every = run.scenario().control.snapshot_every.max(1);
    let delay = Duration::from_millis(run.scenario().control.round_delay_ms);
    let mut seq = 0;
    loop {
        let mut received = 0;
        if run.status() == RunStatus::Running {
            while let Ok(cmd) = commands.try_recv() {
                received += queue(&mut run, cmd);
            }
        } else {
            match commands.recv() {
                Ok(cmd) => received += queue(&mut run, cmd),
                Err(_) => return,
            }
            while let Ok(cmd) = commands.try_recv() {
                received += queue(&mut run, cmd);
            }
        }
        let before = (run.status(), run.params(), run.message().map(str::to_owned));
        let ran = run.step();
        let changed = received > 0 || before != (run.status(), run.params(), run.message().map(str::to_owned));
        let due = ran && run.round().is_multiple_of(every);
        if changed || due || matches!(run.status(), RunStatus::Finished | RunStatus::Failed) && ran {
            seq += 1;
            let p = Arc::new(publish(&run, &id, seq));
            latest.send_replace(p.clone());
            let _ = events.send(p);
        }
        if ran && !delay.is_zero() {
            std::thread::sleep(delay);
        }
    }
}

fn queue(run: &mut Run, cmd: Command) -> usize {
    // the handler already ran the same check
    let _ = run.submit(cmd);
    1
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/runs", post(create_run).get(list_runs))
        .route("/v1/runs/{id}/snapshot", get(get_snapshot))
        .route("/v1/runs/{id}/stream", get(stream))
        .route("/v1/runs/{id}/command", post(post_command))
        .route("/v1/runs/{id}/stats", get(get_stats))
        .with_state(state)
}

/// Serves on `addr` until the process ends.
pub async fn serve(addr: SocketAddr) -> Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?).await
}

/// Serves on an already bound listener, e.g. one on port 0.
pub async fn serve_on(listener: tokio::net::TcpListener) -> Result<()> {
    axum::serve(listener, router(AppState::new())).await?;
    Ok(())
}

fn error(status: StatusCode, e: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": e.to_string() }))).into_response()
}

fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> Response {
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("scenario is not JSON: {e}")),
    };
    let started = tokio::task::spawn_blocking(move || {
        let scenario = Scenario::from_value(value, &[])?;
        state.start(scenario)
    })
    .await;
    match started {
        Ok(Ok(id)) => (StatusCode::CREATED, Json(json!({ "run_id": id }))).into_response(),
        Ok(Err(e)) => error(status_of(&e), e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn list_runs(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.runs.lock().expect("run table").keys().cloned().collect())
}

async fn get_snapshot(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        Some(h) => Json(h.latest.borrow().snapshot.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no run {id}")),
    }
}

async fn get_stats(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.get(&id) {
        Some(h) => {
            let p = h.latest.borrow().clone();
            Json(json!({ "run_id": id, "seq": p.snapshot.seq, "round": p.snapshot.round, "network": p.net }))
                .into_response()
        }
        None => error(StatusCode::NOT_FOUND, format!("no run {id}")),
    }
}

async fn post_command(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    if state.get(&id).is_none() {
        return error(StatusCode::NOT_FOUND, format!("no run {id}"));
    }
    let cmd: Command = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed command: {e}")),
    };
    let name = cmd.name();
    match state.command(&id, cmd) {
        Ok(()) => (StatusCode::ACCEPTED, Json(json!({ "accepted": name }))).into_response(),
        Err(e) => error(status_of(&e), e),
    }
}

fn event(p: &Published) -> Event {
    Event::default()
        .event("snapshot")
        .id(p.snapshot.seq.to_string())
        .json_data(&p.snapshot)
        .expect("snapshot serializes")
}

async fn stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> std::result::Result<Sse<impl Stream<Item = std::result::Result<Event, Infallible>>>, Response> {
    let h = state.get(&id).ok_or_else(|| error(StatusCode::NOT_FOUND, format!("no run {id}")))?;
    // subscribe before reading the latest so nothing published in between is lost
    let rx = h.events.subscribe();
    let first = h.latest.borrow().clone();
    let after = first.snapshot.seq;
    let rest = BroadcastStream::new(rx).filter_map(move |r| async move {
        match r {
            Ok(p) if p.snapshot.seq > after => Some(Ok(event(&p))),
            _ => None,
        }
    });
    Ok(Sse::new(stream::once(async move { Ok(event(&first)) }).chain(rest)).keep_alive(KeepAlive::default()))
}
