//! Reference-based video grading as a library, an HTTP service and a
//! command-line tool.

pub mod config;
pub mod error;
pub mod service;
pub mod store;

pub use config::Config;
pub use error::{Error, Result};
pub use service::{router, serve_on, AppState};
pub use store::{SessionRecord, Status, Store};
