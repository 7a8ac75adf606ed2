//! HTTP session service and batch command line for conversational triage.

pub mod api;
pub mod cli;
pub mod error;
pub mod output;

pub use error::ApiError;
