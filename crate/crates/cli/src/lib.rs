//! Command-line runner, trace export and the live operator service.

pub mod export;
pub mod protocol;
pub mod run;
pub mod service;
