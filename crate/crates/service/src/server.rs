//! WebSocket session server.
//!
//! One thread owns the session's core and runs every request as a core
//! command, so requests, plugin work and event delivery are serialized.
//! Each connection has a reader task, a writer task and a bounded outbound
//! queue; a client whose queue overflows is disconnected.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::sync::{mpsc, oneshot, Notify};
use tower_http::services::ServeDir;
use vault_core::core::{CommandSender, Core, Notice};
use vault_core::ids::InstanceId;

use crate::api::{dispatch, hierarchy_json, ApiError, ApiResult, Continuation, Outcome, Reply, Session};
use crate::protocol::{encode_frames, WireMessage, DEFAULT_CHUNK_BYTES, FLAG_DIM_MAJOR, MIN_CHUNK_BYTES};

pub const DEFAULT_PORT: u16 = 9743;
/// Outbound messages (text or binary frames) buffered per client.
pub const QUEUE_BOUND: usize = 1024;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServiceConfig {
    pub bind_address: IpAddr,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
    pub max_chunk_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind_address: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            static_dir: None,
            max_chunk_bytes: DEFAULT_CHUNK_BYTES,
        }
    }
}

impl ServiceConfig {
    /// Defaults, with the port taken from `VAULT_PORT` when set.
    pub fn from_env() -> Result<Self, String> {
        let mut config = Self::default();
        if let Ok(text) = std::env::var("VAULT_PORT") {
            config.port = text.parse().map_err(|_| format!("VAULT_PORT is not a port: `{text}`"))?;
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_chunk_bytes < MIN_CHUNK_BYTES {
            return Err(format!(
                "maxChunkBytes must be at least {MIN_CHUNK_BYTES}, got {}",
                self.max_chunk_bytes
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Out {
    Text(String),
    Binary(Vec<u8>),
}

struct Client {
    tx: mpsc::Sender<Out>,
    kick: Arc<Notify>,
}

#[derive(Default)]
struct Hub {
    clients: Mutex<HashMap<u64, Client>>,
}

impl Hub {
    fn register(&self, id: u64, client: Client) {
        self.clients.lock().unwrap().insert(id, client);
    }

    fn remove(&self, id: u64) {
        self.clients.lock().unwrap().remove(&id);
    }

    fn len(&self) -> usize {
        self.clients.lock().unwrap().len()
    }

    /// Queues messages for one client in order; an overflowing client is
    /// dropped from the hub and told to close.
    fn send_all(&self, id: u64, outs: Vec<Out>) {
        let mut clients = self.clients.lock().unwrap();
        let Some(client) = clients.get(&id) else { return };
        for out in outs {
            if client.tx.try_send(out).is_err() {
                client.kick.notify_one();
                clients.remove(&id);
                return;
            }
        }
    }

    fn broadcast(&self, msg: &WireMessage) {
        let text = serde_json::to_string(msg).expect("wire messages serialize");
        let mut clients = self.clients.lock().unwrap();
        clients.retain(|_, c| match c.tx.try_send(Out::Text(text.clone())) {
            Ok(()) => true,
            Err(_) => {
                c.kick.notify_one();
                false
            }
        });
    }
}

struct Waiter {
    client: u64,
    request_id: Option<u64>,
    deadline: Instant,
    then: Continuation,
}

/// State shared between the core thread and connection tasks.
struct Shared {
    hub: Hub,
    commands: CommandSender,
    waiters: Mutex<HashMap<InstanceId, Vec<Waiter>>>,
    next_client: AtomicU64,
    next_channel: AtomicU64,
    max_chunk_bytes: usize,
    hierarchy_pending: AtomicBool,
}

impl Shared {
    fn text(msg: &WireMessage) -> Out {
        Out::Text(serde_json::to_string(msg).expect("wire messages serialize"))
    }

    fn respond(&self, client: u64, request_id: Option<u64>, result: ApiResult<Reply>) {
        let outs = match result {
            Err(e) => vec![Self::text(&WireMessage::error(request_id, &e.0))],
            Ok(Reply { payload, data: None }) => vec![Self::text(&WireMessage::response(request_id, payload))],
            Ok(Reply {
                mut payload,
                data: Some(bulk),
            }) => {
                let channel = self.next_channel.fetch_add(1, Ordering::Relaxed) + 1;
                let flags = if bulk.dim_major { FLAG_DIM_MAJOR } else { 0 };
                let frames = encode_frames(channel, &bulk.values, self.max_chunk_bytes, flags);
                if let Some(obj) = payload.as_object_mut() {
                    obj.insert("channel".into(), json!(channel));
                    obj.insert("chunks".into(), json!(frames.len()));
                }
                let mut outs = vec![Self::text(&WireMessage::response(request_id, payload))];
                outs.extend(frames.into_iter().map(Out::Binary));
                outs
            }
        };
        self.hub.send_all(client, outs);
    }

    /// Runs on the core thread.
    fn handle(&self, core: &mut Core, client: u64, msg: WireMessage) {
        let request_id = msg.request_id;
        match dispatch(core, &msg.kind, &msg.payload) {
            Ok(Outcome::Done(reply)) => self.respond(client, request_id, Ok(reply)),
            Err(e) => self.respond(client, request_id, Err(e)),
            Ok(Outcome::Await {
                instance,
                timeout,
                then,
            }) => {
                let waiter = Waiter {
                    client,
                    request_id,
                    deadline: Instant::now() + timeout,
                    then,
                };
                self.waiters.lock().unwrap().entry(instance).or_default().push(waiter);
                self.settle(core, instance);
            }
        }
    }

    /// Answers the waiters of `instance` if it is idle or gone.
    fn settle(&self, core: &mut Core, instance: InstanceId) {
        let state = core.plugins().instance(instance).map(|i| i.state).ok();
        if state.is_some_and(|s| s.is_busy()) {
            return;
        }
        let Some(waiters) = self.waiters.lock().unwrap().remove(&instance) else {
            return;
        };
        for w in waiters {
            let result = match state {
                Some(_) => (w.then)(core),
                None => Err(ApiError(format!("instance {instance} was destroyed"))),
            };
            self.respond(w.client, w.request_id, result);
        }
    }

    fn expire(&self) {
        let now = Instant::now();
        let mut expired = Vec::new();
        {
            let mut waiters = self.waiters.lock().unwrap();
            for (instance, list) in waiters.iter_mut() {
                let (late, keep): (Vec<_>, Vec<_>) = list.drain(..).partition(|w| w.deadline <= now);
                *list = keep;
                expired.extend(late.into_iter().map(|w| (*instance, w)));
            }
            waiters.retain(|_, l| !l.is_empty());
        }
        for (instance, w) in expired {
            let err = ApiError(format!("instance {instance} still running at the deadline"));
            self.respond(w.client, w.request_id, Err(err));
        }
    }

    fn hierarchy_changed(self: &Arc<Self>) {
        if self.hierarchy_pending.swap(true, Ordering::SeqCst) {
            return;
        }
        let shared = self.clone();
        self.commands.send(move |core| {
            shared.hierarchy_pending.store(false, Ordering::SeqCst);
            shared.hub.broadcast(&WireMessage::push("hierarchy", hierarchy_json(core)));
        });
    }
}

/// A running server.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    shutdown: Option<oneshot::Sender<()>>,
    server: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
    core_thread: Option<JoinHandle<Session>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ws_url(&self) -> String {
        format!("ws://{}/ws", self.addr)
    }

    /// Number of connected clients.
    pub fn client_count(&self) -> usize {
        self.shared.hub.len()
    }

    /// Waits until the HTTP server exits (it only does on error or
    /// shutdown).
    pub async fn wait(&mut self) -> std::io::Result<()> {
        match self.server.take() {
            Some(task) => task.await.map_err(std::io::Error::other)?,
            None => Ok(()),
        }
    }

    /// Stops accepting, closes the core thread and hands the session back.
    pub async fn shutdown(mut self) -> Option<Session> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.server.take() {
            let _ = task.await;
        }
        self.stop.store(true, Ordering::SeqCst);
        let thread = self.core_thread.take()?;
        tokio::task::spawn_blocking(move || thread.join().ok()).await.ok().flatten()
    }
}

/// Binds the listener and starts serving `session`. Port 0 picks a free
/// port; see [`ServerHandle::local_addr`].
pub async fn start(config: ServiceConfig, mut session: Session) -> std::io::Result<ServerHandle> {
    config
        .validate()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let listener = tokio::net::TcpListener::bind((config.bind_address, config.port)).await?;
    let addr = listener.local_addr()?;

    let shared = Arc::new(Shared {
        hub: Hub::default(),
        commands: session.core().command_sender(),
        waiters: Mutex::default(),
        next_client: AtomicU64::new(0),
        next_channel: AtomicU64::new(0),
        max_chunk_bytes: config.max_chunk_bytes,
        hierarchy_pending: AtomicBool::new(false),
    });

    let fan_out = shared.clone();
    session.on_push(move |msg| {
        fan_out.hub.broadcast(msg);
        if msg.kind == "event"
            && matches!(
                msg.payload.get("kind").and_then(Value::as_str),
                Some("Added" | "Removed" | "Renamed")
            )
        {
            fan_out.hierarchy_changed();
        }
    });
    let waits = shared.clone();
    session.core_mut().add_listener(move |notice| {
        let instance = match notice {
            Notice::State { instance, state } if !state.is_busy() => *instance,
            Notice::InstanceDestroyed(instance) => *instance,
            _ => return,
        };
        if waits.waiters.lock().unwrap().contains_key(&instance) {
            let w = waits.clone();
            w.commands.clone().send(move |core| w.settle(core, instance));
        }
    });

    let stop = Arc::new(AtomicBool::new(false));
    let core_thread = {
        let (stop, shared) = (stop.clone(), shared.clone());
        std::thread::Builder::new().name("vault-core".into()).spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                session.core_mut().run_until(Duration::from_millis(50), |_| stop.load(Ordering::SeqCst));
                shared.expire();
            }
            session
        })?
    };

    let mut app = Router::new().route("/ws", get(upgrade)).with_state(shared.clone());
    if let Some(dir) = &config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let (tx, rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });

    Ok(ServerHandle {
        addr,
        shared,
        stop,
        shutdown: Some(tx),
        server: Some(server),
        core_thread: Some(core_thread),
    })
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn connection(socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_client.fetch_add(1, Ordering::Relaxed) + 1;
    let (tx, mut rx) = mpsc::channel::<Out>(QUEUE_BOUND);
    let kick = Arc::new(Notify::new());

    // Registration happens on the core thread so that the hierarchy
    // snapshot precedes every event the client can see.
    let registrar = shared.clone();
    let client = Client {
        tx,
        kick: kick.clone(),
    };
    let registered = shared.commands.send(move |core| {
        let hello = WireMessage::push("hierarchy", hierarchy_json(core));
        let _ = client.tx.try_send(Shared::text(&hello));
        registrar.hub.register(id, client);
    });
    if !registered {
        return;
    }

    let (mut sink, mut stream) = socket.split();
    let writer = tokio::spawn(async move {
        loop {
            tokio::select! {
                out = rx.recv() => {
                    let sent = match out {
                        Some(Out::Text(t)) => sink.send(Message::Text(t.into())).await,
                        Some(Out::Binary(b)) => sink.send(Message::Binary(b.into())).await,
                        None => break,
                    };
                    if sent.is_err() {
                        break;
                    }
                }
                _ = kick.notified() => break,
            }
        }
        let _ = sink.close().await;
    });

    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => match serde_json::from_str::<WireMessage>(text.as_str()) {
                Ok(request) => {
                    let s = shared.clone();
                    shared.commands.send(move |core| s.handle(core, id, request));
                }
                Err(e) => {
                    let s = shared.clone();
                    let err = ApiError(format!("malformed message: {e}"));
                    shared
                        .commands
                        .send(move |_| s.respond(id, None, Err(err)));
                }
            },
            Message::Close(_) => break,
            _ => {}
        }
        if writer.is_finished() {
            break;
        }
    }
    shared.hub.remove(id);
    writer.abort();
}
