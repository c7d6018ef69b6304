#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use axum::Router;
use tabrl_service::config::EngineConfig;
use tabrl_service::engine::Engine;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures().join(name)
}

/// The fixture config with no environment overrides.
pub fn config() -> EngineConfig {
    EngineConfig::load(Some(&fixture("engine.toml")), std::iter::empty()).unwrap()
}

pub fn engine() -> Arc<Engine> {
    Arc::new(Engine::from_config(&config()).unwrap())
}

pub fn app() -> Router {
    let cfg = config();
    let json = serde_json::to_string(&cfg.redacted()).unwrap();
    tabrl_service::http::router(engine(), json, cfg.service.max_body_bytes)
}

/// Run the `tabrl` binary with the fixture config and a clean environment.
pub fn tabrl(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tabrl"));
    for (k, _) in std::env::vars() {
        if k.starts_with("TABRL_") || k.starts_with("JUDGE_") {
            cmd.env_remove(k);
        }
    }
    cmd.arg("--config").arg(fixture("engine.toml")).args(args).output().unwrap()
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}
