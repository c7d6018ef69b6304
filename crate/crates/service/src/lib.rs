//! HTTP reward service and offline CLI over the reward engine.
//!
//! [`engine::Engine::score_request`] is the single scoring path; the HTTP
//! handler and the `score` subcommand both serialize its result with
//! [`engine::RewardResponse::to_json`], so identical inputs give identical
//! bytes.

pub mod cli;
pub mod config;
pub mod engine;
pub mod http;
