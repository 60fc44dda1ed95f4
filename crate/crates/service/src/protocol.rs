//! Wire format between the session service and its clients.
//!
//! Text frames carry JSON [`WireMessage`]s. Bulk point data travels in
//! binary frames: a 16-byte little-endian header (`channelId: u64`,
//! `chunkIndex: u32`, `flags: u32`) followed by f32 values, also little
//! endian. A `data.fetch` response announces the channel, the number of
//! chunks and the matrix shape; the frames may then be reassembled in any
//! order.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const HEADER_LEN: usize = 16;
pub const DEFAULT_CHUNK_BYTES: usize = 1 << 20;
pub const MIN_CHUNK_BYTES: usize = 64 << 10;
/// Set on the last chunk of a channel.
pub const FLAG_LAST: u32 = 1;
/// Set when values are ordered dimension by dimension.
pub const FLAG_DIM_MAJOR: u32 = 2;

/// Push messages (no `requestId`) use the types `hierarchy`, `event`,
/// `progress`, `state`, `action`, `layout`, `instance` and `warning`.
/// Replies use `response` or `error` and echo the request's id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
    #[serde(default)]
    pub payload: Value,
}

impl WireMessage {
    pub fn push(kind: &str, payload: Value) -> Self {
        Self {
            kind: kind.to_string(),
            request_id: None,
            payload,
        }
    }

    pub fn request(kind: &str, request_id: u64, payload: Value) -> Self {
        Self {
            kind: kind.to_string(),
            request_id: Some(request_id),
            payload,
        }
    }

    pub fn response(request_id: Option<u64>, payload: Value) -> Self {
        Self {
            kind: "response".into(),
            request_id,
            payload,
        }
    }

    pub fn error(request_id: Option<u64>, message: &str) -> Self {
        Self {
            kind: "error".into(),
            request_id,
            payload: serde_json::json!({ "message": message }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub channel_id: u64,
    pub chunk_index: u32,
    pub flags: u32,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..8].copy_from_slice(&self.channel_id.to_le_bytes());
        out[8..12].copy_from_slice(&self.chunk_index.to_le_bytes());
        out[12..].copy_from_slice(&self.flags.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < HEADER_LEN {
            return None;
        }
        Some(Self {
            channel_id: u64::from_le_bytes(bytes[..8].try_into().ok()?),
            chunk_index: u32::from_le_bytes(bytes[8..12].try_into().ok()?),
            flags: u32::from_le_bytes(bytes[12..16].try_into().ok()?),
        })
    }
}

/// Values per chunk for a chunk size in bytes (the header is not counted).
pub fn values_per_chunk(max_chunk_bytes: usize) -> usize {
    (max_chunk_bytes / 4).max(1)
}

/// Number of frames needed for `values` f32s; an empty matrix still takes
/// one (empty) frame.
pub fn chunk_count(values: usize, max_chunk_bytes: usize) -> usize {
    values.div_ceil(values_per_chunk(max_chunk_bytes)).max(1)
}

/// Splits `values` into binary frames for `channel_id`.
pub fn encode_frames(channel_id: u64, values: &[f32], max_chunk_bytes: usize, flags: u32) -> Vec<Vec<u8>> {
    let per = values_per_chunk(max_chunk_bytes);
    let count = chunk_count(values.len(), max_chunk_bytes);
    (0..count)
        .map(|i| {
            let chunk = &values[(i * per).min(values.len())..((i + 1) * per).min(values.len())];
            let header = FrameHeader {
                channel_id,
                chunk_index: i as u32,
                flags: flags | if i + 1 == count { FLAG_LAST } else { 0 },
            };
            let mut frame = Vec::with_capacity(HEADER_LEN + 4 * chunk.len());
            frame.extend_from_slice(&header.encode());
            for v in chunk {
                frame.extend_from_slice(&v.to_le_bytes());
            }
            frame
        })
        .collect()
}

/// Collects the frames of one channel, in any order.
#[derive(Debug)]
pub struct Reassembler {
    channel_id: u64,
    chunks: Vec<Option<Vec<f32>>>,
}

impl Reassembler {
    pub fn new(channel_id: u64, chunk_count: usize) -> Self {
        Self {
            channel_id,
            chunks: vec![None; chunk_count],
        }
    }

    /// Accepts a frame; returns `false` for frames of other channels, bad
    /// indices or malformed bodies.
    pub fn accept(&mut self, frame: &[u8]) -> bool {
        let Some(h) = FrameHeader::decode(frame) else {
            return false;
        };
        let body = &frame[HEADER_LEN..];
        if h.channel_id != self.channel_id || body.len() % 4 != 0 {
            return false;
        }
        let Some(slot) = self.chunks.get_mut(h.chunk_index as usize) else {
            return false;
        };
        *slot = Some(
            body.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
        true
    }

    pub fn is_complete(&self) -> bool {
        self.chunks.iter().all(Option::is_some)
    }

    pub fn finish(self) -> Option<Vec<f32>> {
        self.chunks
            .into_iter()
            .try_fold(Vec::new(), |mut acc, c| {
                acc.extend(c?);
                Some(acc)
            })
    }
}
