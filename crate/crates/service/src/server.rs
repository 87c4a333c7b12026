//! HTTP and WebSocket front end. One engine behind a mutex owns all state;
//! a ticker advances its clock and pushes coalesced scene frames to every
//! connection.

use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use log::{info, warn};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};
use tower_http::services::ServeDir;

use crate::engine::Engine;
use crate::protocol::{parse_client, ServerMessage};

const PLACEHOLDER_INDEX: &str = include_str!("index.html");
const BROADCAST_CAPACITY: usize = 256;

#[derive(Clone)]
struct AppState {
    engine: Arc<Mutex<Engine>>,
    epoch: Instant,
    events: broadcast::Sender<Arc<ServerMessage>>,
    stop: watch::Receiver<bool>,
}

impl AppState {
    fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1000.0
    }

    fn publish(&self, messages: Vec<ServerMessage>) {
        for m in messages {
            // no subscribers is fine
            let _ = self.events.send(Arc::new(m));
        }
    }
}

pub struct ServeOptions {
    /// Directory of UI assets served at `/`; a placeholder page otherwise.
    pub ui_dir: Option<PathBuf>,
}

fn router(state: AppState, options: &ServeOptions) -> Router {
    let app = Router::new().route("/ws", get(ws_upgrade));
    let app = match &options.ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    };
    app.with_state(state)
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut events = state.events.subscribe();
    let mut stop = state.stop.clone();
    let mut last_frame = 0u64;

    let initial = {
        let now = state.now_ms();
        state.engine.lock().expect("engine lock").current_frames(now)
    };
    for frame in initial {
        last_frame = frame.frame_id;
        let text = ServerMessage::Scene { frame }.to_json();
        if sink.send(Message::Text(text.into())).await.is_err() {
            return;
        }
    }

    loop {
        tokio::select! {
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reaction = match parse_client(&text) {
                    Ok(msg) => {
                        let now = state.now_ms();
                        state.engine.lock().expect("engine lock").handle(msg, now)
                    }
                    Err(err) => crate::engine::Reaction { reply: vec![err], broadcast: Vec::new() },
                };
                state.publish(reaction.broadcast);
                for m in reaction.reply {
                    if sink.send(Message::Text(m.to_json().into())).await.is_err() {
                        return;
                    }
                }
            }
            event = events.recv() => {
                let msg = match event {
                    Ok(m) => m,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        warn!("connection lagged, {n} message(s) dropped");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                };
                if let ServerMessage::Scene { frame } = msg.as_ref() {
                    if frame.frame_id <= last_frame {
                        continue;
                    }
                    last_frame = frame.frame_id;
                }
                if sink.send(Message::Text(msg.to_json().into())).await.is_err() {
                    return;
                }
            }
            _ = stop.changed() => break,
        }
    }
    let _ = sink.send(Message::Close(None)).await;
}

async fn ticker(state: AppState, period: Duration) {
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut stop = state.stop.clone();
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = stop.changed() => return,
        }
        let now = state.now_ms();
        let (messages, frames) = {
            let mut engine = state.engine.lock().expect("engine lock");
            let messages = engine.tick(now);
            (messages, engine.frames_if_dirty(now))
        };
        state.publish(messages);
        state.publish(frames.into_iter().map(|frame| ServerMessage::Scene { frame }).collect());
    }
}

/// Serves until `shutdown` resolves, then closes connections and persists
/// any open take. Returns the engine for inspection.
pub async fn serve_with_shutdown(
    listener: TcpListener,
    engine: Engine,
    options: ServeOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<Arc<Mutex<Engine>>> {
    let period = Duration::from_secs_f64(1.0 / engine.config().frame_rate_hz);
    let (stop_tx, stop_rx) = watch::channel(false);
    let (events, _) = broadcast::channel(BROADCAST_CAPACITY);
    let state = AppState {
        engine: Arc::new(Mutex::new(engine)),
        epoch: Instant::now(),
        events,
        stop: stop_rx,
    };
    let ticking = tokio::spawn(ticker(state.clone(), period));
    let app = router(state.clone(), &options);
    if let Ok(addr) = listener.local_addr() {
        info!("listening on {addr}");
    }
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stop_tx.send(true);
        })
        .await?;
    let _ = ticking.await;

    let now = state.now_ms();
    let reaction = state.engine.lock().expect("engine lock").shutdown(now);
    for m in reaction.reply.iter().chain(&reaction.broadcast) {
        if let ServerMessage::TakeSummary { take_id, .. } = m {
            info!("saved open take {take_id} on shutdown");
        }
        if let ServerMessage::Error { detail, .. } = m {
            warn!("shutdown: {detail}");
        }
    }
    Ok(state.engine)
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
}
