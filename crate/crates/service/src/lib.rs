//! Session service for vault: a JSON/binary wire protocol over WebSocket,
//! the server that speaks it, and the in-process [`Session`] the `vault`
//! command line drives.

pub mod api;
pub mod protocol;
pub mod server;

pub use api::{ApiError, Reply, Session};
pub use protocol::WireMessage;
pub use server::{ServerHandle, ServiceConfig};
