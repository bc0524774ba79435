//! Live streaming of training geometry to a viewer over TCP.
//!
//! Frames are a 4-byte big-endian length and a JSON payload
//! `{type, step, seq, body}`. The training thread hands whole step groups to
//! a [`Session`]; a background thread writes them to at most one viewer and
//! collects prune commands, which the trainer drains at step boundaries.

pub mod client;
mod error;
pub mod frame;
pub mod message;
mod queue;
mod session;

pub use error::{Result, StreamError};
pub use frame::{Frame, FrameDecoder, FrameType};
pub use message::*;
pub use queue::DropOldest;
pub use session::{serve, Published, Session, SessionConfig, SessionStats, StepContent, DEFAULT_QUEUE_STEPS};
