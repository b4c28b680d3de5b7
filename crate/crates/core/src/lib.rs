//! Two-stage hand tracking: a palm detector that runs only when needed, a
//! landmark model on oriented crops, and a tracker that carries crops from
//! frame to frame. Models are pluggable; the simulator supplies oracle
//! implementations with known ground truth.

pub mod backend;
pub mod config;
pub mod crop;
pub mod detector;
pub mod error;
pub mod gesture;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod simulator;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
