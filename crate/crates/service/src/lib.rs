//! HTTP service, persistence and command-line plumbing around `evote-core`.

pub mod config;
pub mod gateway;
pub mod http;
pub mod journal;
pub mod service;
pub mod simulate;
