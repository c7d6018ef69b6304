//! Verifiable-reward engine for table question answering with code.
//!
//! A rollout's response is reduced to a Python code block, executed in a
//! sandbox, and its printed answer judged against the gold answer. The
//! reward combines the execution outcome, the overlap of tables the code read
//! with the gold tables, and the CodeBLEU similarity of failed rollouts to
//! the correct rollouts of the same group.

pub mod codesim;
pub mod dataset;
pub mod evalharness;
pub mod extraction;
pub mod judge;
pub mod rewards;
pub mod rlmath;
pub mod sandbox;
pub mod simloop;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Math(String),
    #[error("eval error: {0}")]
    Eval(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
