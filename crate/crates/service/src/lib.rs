//! Live and replay feedback pipeline: the engine that owns practice state,
//! the WebSocket scene server, and file replay.

pub mod config;
pub mod engine;
pub mod protocol;
pub mod replay;
pub mod server;

pub use config::{Encoder, PipelineConfig};
pub use engine::Engine;
pub use protocol::{ClientMessage, ServerMessage};
