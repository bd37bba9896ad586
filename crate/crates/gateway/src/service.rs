//! The live session. One thread owns the [`System`] and ticks it; HTTP
//! handlers send it commands and read the last published snapshot.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hearth_core::system::{ConfigError, ConfigPaths, EventRecord, InputError, SessionState, System};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot};

use crate::GatewayError;

enum Command {
    Utterance(String, oneshot::Sender<Result<Ack, InputError>>),
    Tap(oneshot::Sender<Ack>),
    Load(PathBuf, oneshot::Sender<Result<Ack, ConfigError>>),
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub tick: u64,
}

/// Handle to the tick thread. Dropping it stops the thread.
pub struct Session {
    commands: Sender<Command>,
    state: Arc<RwLock<SessionState>>,
    events: broadcast::Sender<Arc<str>>,
    thread: Option<JoinHandle<()>>,
}

struct Looper {
    system: System,
    paths: ConfigPaths,
    state: Arc<RwLock<SessionState>>,
    events: broadcast::Sender<Arc<str>>,
}

impl Looper {
    fn publish(&mut self, records: Vec<EventRecord>) {
        *self.state.write().expect("state lock") = self.system.state();
        for r in records {
            let line = serde_json::to_string(&r).expect("records serialize");
            // no subscribers is fine
            let _ = self.events.send(line.into());
        }
    }

    fn apply(&mut self, cmd: Command) -> bool {
        match cmd {
            Command::Utterance(text, reply) => {
                let result = self.system.handle_utterance(&text).map(|_| self.ack());
                let _ = reply.send(result);
            }
            Command::Tap(reply) => {
                self.system.handle_tap();
                let _ = reply.send(self.ack());
            }
            Command::Load(path, reply) => {
                let mut paths = self.paths.clone();
                paths.scenario = path;
                let result = System::load(&paths).map(|system| {
                    self.system = system;
                    self.paths = paths;
                    let r = EventRecord {
                        tick: self.system.now(),
                        kind: "session".into(),
                        path: self.system.executive().path(),
                        detail: serde_json::json!({ "scenario": self.system.state().scenario }),
                    };
                    self.system.take_pending();
                    self.publish(vec![r]);
                    self.ack()
                });
                let _ = reply.send(result);
            }
            Command::Stop => return false,
        }
        true
    }

    fn ack(&self) -> Ack {
        Ack {
            accepted: true,
            tick: self.system.now(),
        }
    }

    fn run(mut self, commands: Receiver<Command>, period: Duration) {
        let mut due = Instant::now() + period;
        loop {
            match commands.recv_timeout(due.saturating_duration_since(Instant::now())) {
                Ok(cmd) => {
                    if !self.apply(cmd) {
                        return;
                    }
                    let pending = self.system.take_pending();
                    if !pending.is_empty() {
                        self.publish(pending);
                    }
                    continue;
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
            let records = self.system.tick();
            self.publish(records);
            due += period;
        }
    }
}

impl Session {
    /// Loads the configuration and starts ticking every `period`.
    pub fn start(paths: ConfigPaths, period: Duration) -> Result<Self, ConfigError> {
        let mut system = System::load(&paths)?;
        let startup = system.take_pending();
        let state = Arc::new(RwLock::new(system.state()));
        let (events, _) = broadcast::channel(1024);
        let (tx, rx) = mpsc::channel();
        let mut looper = Looper {
            system,
            paths,
            state: state.clone(),
            events: events.clone(),
        };
        looper.publish(startup);
        let thread = std::thread::Builder::new()
            .name("tick".into())
            .spawn(move || looper.run(rx, period))
            .expect("spawn tick thread");
        Ok(Session {
            commands: tx,
            state,
            events,
            thread: Some(thread),
        })
    }

    pub fn state(&self) -> SessionState {
        self.state.read().expect("state lock").clone()
    }

    /// Live records from now on, one JSON object per item.
    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.events.subscribe()
    }

    pub async fn utterance(&self, text: String) -> Result<Ack, InputError> {
        let (tx, rx) = oneshot::channel();
        self.send(Command::Utterance(text, tx));
        rx.await.expect("tick thread alive")
    }

    pub async fn tap(&self) -> Ack {
        let (tx, rx) = oneshot::channel();
        self.send(Command::Tap(tx));
        rx.await.expect("tick thread alive")
    }

    pub async fn load(&self, scenario: PathBuf) -> Result<Ack, ConfigError> {
        let (tx, rx) = oneshot::channel();
        self.send(Command::Load(scenario, tx));
        rx.await.expect("tick thread alive")
    }

    fn send(&self, cmd: Command) {
        self.commands.send(cmd).expect("tick thread alive");
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.commands.send(Command::Stop);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Deserialize)]
struct UtteranceBody {
    text: String,
}

#[derive(Deserialize)]
struct LoadBody {
    path: PathBuf,
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    detail: String,
}

fn error(status: StatusCode, error: &'static str, detail: impl ToString) -> Response {
    (
        status,
        Json(ErrorBody {
            error,
            detail: detail.to_string(),
        }),
    )
        .into_response()
}

async fn utterance(State(s): State<Arc<Session>>, Json(body): Json<UtteranceBody>) -> Response {
    match s.utterance(body.text).await {
        Ok(ack) => Json(ack).into_response(),
        Err(e @ InputError::NotAcceptingInput) => error(StatusCode::CONFLICT, "not_accepting_input", e),
    }
}

async fn tap(State(s): State<Arc<Session>>) -> Json<Ack> {
    Json(s.tap().await)
}

async fn state(State(s): State<Arc<Session>>) -> Json<SessionState> {
    Json(s.state())
}

async fn load(State(s): State<Arc<Session>>, Json(body): Json<LoadBody>) -> Response {
    match s.load(body.path).await {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, "config_error", e),
    }
}

async fn events(State(s): State<Arc<Session>>) -> Response {
    let rx = s.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(line) => return Some((Ok::<_, Infallible>(format!("{line}\n")), rx)),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    (
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response()
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/api/utterance", post(utterance))
        .route("/api/event/tap", post(tap))
        .route("/api/state", get(state))
        .route("/api/events", get(events))
        .route("/api/scenario/load", post(load))
        .with_state(session)
}

/// Binds `127.0.0.1:port`; port 0 picks a free one.
pub async fn bind(port: u16) -> Result<TcpListener, GatewayError> {
    TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port)))
        .await
        .map_err(|e| GatewayError::PortUnavailable(port, e))
}

pub async fn serve(listener: TcpListener, session: Arc<Session>) -> std::io::Result<()> {
    axum::serve(listener, router(session)).await
}
