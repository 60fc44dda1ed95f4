//! The WebSocket service: request/response pairing under concurrency, large
//! fetches split into binary frames, and events fanned out to every client.
//! Frames are decoded here from the raw bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use rand::Rng;
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use vault_core::payload::{PointPayload, RawPayload};
use vault_service::server::{self, ServerHandle};
use vault_service::{ServiceConfig, Session, WireMessage};

use crate::oracle::rng;
use crate::{ensure, err, Outcome};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const BIG_ITEMS: usize = 392_960;
const CHUNK_BYTES: usize = 1 << 20;
const CLIENTS: u64 = 4;
const REQUESTS: u64 = 100;
const PATIENCE: Duration = Duration::from_secs(20);

enum Frame {
    Text(WireMessage),
    Binary(Vec<u8>),
}

async fn next(ws: &mut Ws) -> Result<Frame, String> {
    loop {
        let msg = tokio::time::timeout(PATIENCE, ws.next())
            .await
            .map_err(|_| "timed out waiting for the server")?
            .ok_or("connection closed")?
            .map_err(err)?;
        match msg {
            Message::Text(t) => return Ok(Frame::Text(serde_json::from_str(t.as_str()).map_err(err)?)),
            Message::Binary(b) => return Ok(Frame::Binary(b.to_vec())),
            _ => {}
        }
    }
}

async fn send(ws: &mut Ws, msg: WireMessage) -> Result<(), String> {
    ws.send(Message::Text(serde_json::to_string(&msg).map_err(err)?.into())).await.map_err(err)
}

async fn connect(handle: &ServerHandle) -> Result<Ws, String> {
    let (mut ws, _) = connect_async(handle.ws_url()).await.map_err(err)?;
    match next(&mut ws).await? {
        Frame::Text(m) if m.kind == "hierarchy" => Ok(ws),
        _ => Err("first message is not the hierarchy".into()),
    }
}

fn request_for(id: u64) -> (WireMessage, &'static str) {
    match id % 5 {
        0 => (WireMessage::request("selection.set", id, json!({"dataset": "small", "indices": [id % 30]})), "response"),
        1 => (WireMessage::request("selection.get", id, json!({"dataset": "small"})), "response"),
        2 => (WireMessage::request("hierarchy.list", id, Value::Null), "response"),
        3 => (WireMessage::request("session.info", id, Value::Null), "response"),
        _ => (WireMessage::request("no.such.request", id, Value::Null), "error"),
    }
}

/// Sends a client's share of the requests without waiting, then collects
/// replies until every one has arrived, rejecting duplicates and strays.
async fn client_burst(handle: &ServerHandle, client: u64) -> Result<usize, String> {
    let ws = connect(handle).await?;
    let (mut tx, mut rx) = ws.split();
    let ids: Vec<u64> = (0..REQUESTS).filter(|id| id % CLIENTS == client).collect();
    let mine: BTreeSet<u64> = ids.iter().copied().collect();
    let writer = tokio::spawn(async move {
        for id in ids {
            let text = serde_json::to_string(&request_for(id).0).unwrap();
            tx.send(Message::Text(text.into())).await.unwrap();
        }
        tx
    });
    let mut replies: BTreeMap<u64, String> = BTreeMap::new();
    while replies.len() < mine.len() {
        let msg = tokio::time::timeout(PATIENCE, rx.next()).await.map_err(|_| "reply timeout")?.ok_or("closed")?.map_err(err)?;
        let Message::Text(t) = msg else { continue };
        let m: WireMessage = serde_json::from_str(t.as_str()).map_err(err)?;
        let Some(id) = m.request_id else { continue };
        ensure(mine.contains(&id), || format!("client {client} got the reply to {id}"))?;
        ensure(replies.insert(id, m.kind).is_none(), || format!("second reply to {id}"))?;
    }
    for (id, kind) in &replies {
        let want = request_for(*id).1;
        ensure(kind == want, || format!("request {id} answered with {kind}"))?;
    }
    let tx = writer.await.map_err(err)?;
    let mut ws = tx.reunite(rx).map_err(err)?;
    // a final round trip shows nothing else was pending for this client
    send(&mut ws, WireMessage::request("session.info", 10_000 + client, Value::Null)).await?;
    loop {
        if let Frame::Text(m) = next(&mut ws).await? {
            if let Some(id) = m.request_id {
                ensure(id == 10_000 + client, || format!("late reply to {id}"))?;
                break;
            }
        }
    }
    Ok(replies.len())
}

async fn big_fetch(handle: &ServerHandle, source: &[f32]) -> Result<usize, String> {
    let mut ws = connect(handle).await?;
    send(&mut ws, WireMessage::request("data.fetch", 1, json!({"dataset": "big"}))).await?;
    let head = loop {
        if let Frame::Text(m) = next(&mut ws).await? {
            if m.request_id == Some(1) {
                break m;
            }
        }
    };
    ensure(head.kind == "response", || format!("fetch failed: {}", head.payload))?;
    let per_chunk = CHUNK_BYTES / 4;
    let expected = source.len().div_ceil(per_chunk);
    let chunks = head.payload["chunks"].as_u64().ok_or("no chunk count")? as usize;
    ensure(chunks == expected && chunks == 3, || format!("{chunks} chunks announced, {expected} expected"))?;
    let channel = head.payload["channel"].as_u64().ok_or("no channel")?;

    let mut parts: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
    while parts.len() < chunks {
        let Frame::Binary(b) = next(&mut ws).await? else { continue };
        ensure(b.len() >= 16 && (b.len() - 16) % 4 == 0, || format!("frame of {} bytes", b.len()))?;
        ensure(b.len() - 16 <= CHUNK_BYTES, || "frame above the chunk limit".into())?;
        let ch = u64::from_le_bytes(b[0..8].try_into().unwrap());
        let index = u32::from_le_bytes(b[8..12].try_into().unwrap());
        let flags = u32::from_le_bytes(b[12..16].try_into().unwrap());
        ensure(ch == channel, || format!("frame for channel {ch}"))?;
        ensure((flags & 1 == 1) == (index as usize == chunks - 1), || format!("last-chunk flag on chunk {index}"))?;
        ensure(parts.insert(index, b[16..].to_vec()).is_none(), || format!("chunk {index} twice"))?;
    }
    let bytes: Vec<u8> = parts.into_values().flatten().collect();
    let values: Vec<u32> = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    ensure(values.iter().copied().eq(source.iter().map(|v| v.to_bits())), || "reassembled values differ".into())?;
    Ok(chunks)
}

/// Counts selection events until the reply to `id` arrives.
async fn events_until(ws: &mut Ws, id: u64) -> Result<usize, String> {
    let mut events = 0;
    loop {
        if let Frame::Text(m) = next(ws).await? {
            if m.kind == "event" && m.payload["kind"] == "SelectionChanged" {
                events += 1;
            }
            if m.request_id == Some(id) {
                return Ok(events);
            }
        }
    }
}

async fn fan_out(handle: &ServerHandle) -> Result<(), String> {
    let mut clients = Vec::new();
    for _ in 0..3 {
        clients.push(connect(handle).await?);
    }
    send(&mut clients[0], WireMessage::request("selection.set", 1, json!({"dataset": "small", "indices": [3, 4, 5, 29]}))).await?;
    let mut seen = vec![events_until(&mut clients[0], 1).await?];
    // the core has handled the selection, so its event is queued ahead of
    // anything the other clients ask now
    for ws in clients.iter_mut().skip(1) {
        send(ws, WireMessage::request("session.info", 2, Value::Null)).await?;
        seen.push(events_until(ws, 2).await?);
    }
    for ws in clients.iter_mut() {
        send(ws, WireMessage::request("session.info", 3, Value::Null)).await?;
        ensure(events_until(ws, 3).await? == 0, || "a selection event was repeated".into())?;
    }
    ensure(seen == [1, 1, 1], || format!("selection events per client: {seen:?}"))
}

pub fn protocol() -> Outcome {
    let mut rng = rng(0x3fe);
    let source: Vec<f32> = (0..BIG_ITEMS * 2).map(|_| rng.random_range(-1e4..1e4)).collect();
    let mut session = Session::new();
    {
        let data = session.core_mut().data_mut();
        let big = PointPayload::with_default_names(source.clone(), BIG_ITEMS, 2).map_err(err)?;
        data.add_dataset(RawPayload::Points(big), "big", None).map_err(err)?;
        let small = PointPayload::with_default_names((0..60).map(|v| v as f32).collect(), 30, 2).map_err(err)?;
        data.add_dataset(RawPayload::Points(small), "small", None).map_err(err)?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().map_err(err)?;
    runtime.block_on(async move {
        let config = ServiceConfig {
            port: 0,
            max_chunk_bytes: CHUNK_BYTES,
            ..ServiceConfig::default()
        };
        let handle = server::start(config, session).await.map_err(err)?;
        let bursts = futures::future::join_all((0..CLIENTS).map(|c| client_burst(&handle, c))).await;
        let answered: usize = bursts.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().sum();
        ensure(answered as u64 == REQUESTS, || format!("{answered} replies"))?;
        let chunks = big_fetch(&handle, &source).await?;
        fan_out(&handle).await?;
        handle.shutdown().await.ok_or("server did not shut down cleanly")?;
        Ok(format!(
            "{REQUESTS} concurrent requests over {CLIENTS} clients paired, {BIG_ITEMS}x2 fetched in {chunks} frames, events reached 3 clients"
        ))
    })
}
