//! Orchestration of the segmentation pipeline: configuration profiles,
//! the on-disk artifact layout, one function per stage, and a read-only
//! HTTP API for the viewer.

pub mod config;
pub mod error;
pub mod layout;
pub mod render;
pub mod server;
pub mod stages;

pub use config::{PipelineConfig, Profile};
pub use error::{PipelineError, Result};
pub use layout::Layout;
