//! Stream ingestion, synthetic scenes, evaluation and the session runner.

pub mod cli;
pub mod eval;
pub mod records;
pub mod scene;
pub mod session;
pub mod status;
pub mod stream;
