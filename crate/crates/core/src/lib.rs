//! Conversational triage toolkit.

pub mod backend;
pub mod domain;
pub mod engine;
pub mod eval;
pub mod history;
pub mod ingest;
pub mod par;
pub mod synthesis;
pub mod testkit;
