//! Core library for the Open Network Handle System: handle grammar, key and
//! signature handling, record sets and zones, the handle server, the
//! verifying resolver client and the wire protocol.

pub mod crypto;
pub mod handle;
pub mod name;
pub mod record;
pub mod zone;
pub mod resolution;
pub mod server;
pub mod client;
pub mod net;
