//! Telemetry and teleoperation over WebSocket for a running pipeline.

pub mod server;
pub mod sync;
pub mod wire;

pub use server::{serve, ServerConfig, ServerError, ServerHandle, SimClock};
pub use sync::GridSync;
pub use wire::{decode_grid_patch, encode_grid_patch, ClientMessage, ServerMessage, WireError, WirePatch, SCHEMA_VERSION};
