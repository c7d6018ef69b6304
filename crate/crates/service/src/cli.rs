//! Command-line entry points. Exit codes: 0 success, 1 partial failure
//! (errors are embedded in the output), 2 usage or input error.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use tabrl_core::dataset::{Dataset, TableRegistry};
use tabrl_core::evalharness::{emit_reports, parse_predictions, score_run, verdicts_jsonl, ReportFormat};
use tabrl_core::simloop::{run_sim, stats_csv, OutcomeDistribution, ScriptedPolicy};

use crate::config::EngineConfig;
use crate::engine::{Engine, ErrorBody, RewardRequest};

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "tabrl", version, about = "Verifiable-reward engine for table question answering")]
pub struct Cli {
    /// Engine config file (TOML); defaults to $TABRL_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP reward service.
    Serve {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Score rollout groups from a JSONL file of reward requests.
    Score {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rollouts: PathBuf,
        /// Output JSONL; `-` for stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction runs into accuracy reports.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Model name for lines without a "model" field; defaults to the
        /// predictions file stem.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        timestamp: Option<String>,
        /// Per-record verdict log (JSONL).
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Load a dataset, check every table file, and print a summary.
    ValidateDataset {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Simulate the group sampling and filtering loop with a scripted policy.
    Sim {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON policy file; overrides --p-correct.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        p_correct: f64,
        #[arg(long, default_value_t = 4)]
        group_size: usize,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stats CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match EngineConfig::from_env(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    match cli.command {
        Command::Serve { dataset, bind } => serve(cfg, dataset, bind),
        Command::Score { dataset, rollouts, out } => score(cfg, &dataset, &rollouts, &out),
        Command::Eval {
            dataset,
            predictions,
            report,
            format,
            model,
            timestamp,
            verdicts,
        } => eval(
            cfg,
            &dataset,
            &predictions,
            &report,
            format,
            model,
            timestamp,
            verdicts.as_deref(),
        ),
        Command::ValidateDataset { dataset } => validate_dataset(&dataset),
        Command::Sim {
            dataset,
            policy,
            p_correct,
            group_size,
            epochs,
            seed,
            out,
        } => sim(cfg, &dataset, policy.as_deref(), p_correct, group_size, epochs, seed, out.as_deref()),
    }
}

fn usage(e: impl std::fmt::Display) -> u8 {
    eprintln!("error: {e}");
    EXIT_USAGE
}

fn read_input(path: &Path, what: &str) -> Result<String, u8> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{what} {}: {e}", path.display())))
}

fn write_output(path: &Path, text: &str) -> Result<(), u8> {
    let res = if path == Path::new("-") {
        std::io::stdout().lock().write_all(text.as_bytes())
    } else {
        std::fs::write(path, text)
    };
    res.map_err(|e| usage(format!("writing {}: {e}", path.display())))
}

fn engine(mut cfg: EngineConfig, dataset: Option<&Path>) -> Result<Engine, u8> {
    if let Some(d) = dataset {
        cfg.dataset = Some(d.to_path_buf());
    }
    Engine::from_config(&cfg).map_err(usage)
}

fn serve(mut cfg: EngineConfig, dataset: Option<PathBuf>, bind: Option<String>) -> u8 {
    if let Some(b) = bind {
        cfg.service.bind = b;
    }
    let engine = match engine(cfg.clone(), dataset.as_deref()) {
        Ok(e) => e,
        Err(code) => return code,
    };
    let addr: SocketAddr = cfg.service.bind.parse().expect("validated by Engine::from_config");
    tracing::info!(records = engine.dataset().len(), "dataset loaded");
    let config_json = serde_json::to_string(&cfg.redacted()).expect("config serializes");
    let app = crate::http::router(Arc::new(engine), config_json, cfg.service.max_body_bytes);
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return usage(format!("runtime: {e}")),
    };
    match rt.block_on(crate::http::serve(addr, app)) {
        Ok(()) => EXIT_OK,
        Err(e) => usage(format!("serving on {addr}: {e}")),
    }
}

/// One output line per input line, in order: a response or an error body.
pub fn score_lines(engine: &Engine, input: &str) -> (String, bool) {
    let mut out = String::new();
    let mut all_ok = true;
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let result = serde_json::from_str::<RewardRequest>(line)
            .map_err(|e| ErrorBody {
                group_id: None,
                error: format!("line {}: invalid request: {e}", i + 1),
            })
            .and_then(|req| {
                engine.score_request(&req).map_err(|e| ErrorBody {
                    group_id: Some(req.group_id.clone()),
                    error: e.to_string(),
                })
            });
        match result {
            Ok(resp) => out.push_str(&resp.to_json()),
            Err(body) => {
                all_ok = false;
                out.push_str(&serde_json::to_string(&body).expect("error body serializes"));
            }
        }
        out.push('\n');
    }
    (out, all_ok)
}

fn score(cfg: EngineConfig, dataset: &Path, rollouts: &Path, out: &Path) -> u8 {
    let input = match read_input(rollouts, "rollouts") {
        Ok(t) => t,
        Err(code) => return code,
    };
    let engine = match engine(cfg, Some(dataset)) {
        Ok(e) => e,
        Err(code) => return code,
    };
    let (text, all_ok) = score_lines(&engine, &input);
    if let Err(code) = write_output(out, &text) {
        return code;
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}

#[allow(clippy::too_many_arguments)]
fn eval(
    cfg: EngineConfig,
    dataset: &Path,
    predictions: &Path,
    report: &Path,
    format: ReportFormat,
    model: Option<String>,
    timestamp: Option<String>,
    verdicts: Option<&Path>,
) -> u8 {
    let input = match read_input(predictions, "predictions") {
        Ok(t) => t,
        Err(code) => return code,
    };
    let engine = match engine(cfg, Some(dataset)) {
        Ok(e) => e,
        Err(code) => return code,
    };
    let model = model.unwrap_or_else(|| {
        predictions
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let timestamp = timestamp.unwrap_or_else(|| {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        secs.to_string()
    });
    let runs = match parse_predictions(&input, &model, &timestamp) {
        Ok(r) => r,
        Err(e) => return usage(format!("predictions {}: {e}", predictions.display())),
    };
    if runs.is_empty() {
        eprintln!("error: no entries");
        return EXIT_PARTIAL;
    }
    let mut reports = Vec::new();
    let mut code = EXIT_OK;
    for run in &runs {
        match score_run(run, engine.dataset(), engine.scoring(), engine.executor(), engine.judge()) {
            Ok(r) => {
                for e in &r.errors {
                    eprintln!("warning: {}: {}: {}", r.model_name, e.record_id, e.error);
                    code = EXIT_PARTIAL;
                }
                reports.push(r);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", run.model_name);
                code = EXIT_PARTIAL;
            }
        }
    }
    if let Err(c) = write_output(report, &emit_reports(&reports, format)) {
        return c;
    }
    if let Some(path) = verdicts {
        let log: String = reports.iter().map(verdicts_jsonl).collect();
        if let Err(c) = write_output(path, &log) {
            return c;
        }
    }
    code
}

fn validate_dataset(path: &Path) -> u8 {
    if !path.exists() {
        return usage(format!("dataset {}: not found", path.display()));
    }
    let dataset = match Dataset::load(path) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("invalid: {e}");
            return EXIT_PARTIAL;
        }
    };
    match TableRegistry::build(&dataset.records) {
        Ok(reg) => {
            let files: usize = reg.tables.values().map(Vec::len).sum();
            let rows: usize = reg.tables.values().flatten().map(|s| s.rows).sum();
            println!("ok: {} records, {files} table files, {rows} data rows", dataset.len());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("invalid: {e}");
            EXIT_PARTIAL
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sim(
    cfg: EngineConfig,
    dataset: &Path,
    policy: Option<&Path>,
    p_correct: f64,
    group_size: usize,
    epochs: usize,
    seed: u64,
    out: Option<&Path>,
) -> u8 {
    let policy = match policy {
        Some(p) => match read_input(p, "policy").and_then(|t| serde_json::from_str(&t).map_err(|e| usage(format!("policy {}: {e}", p.display())))) {
            Ok(p) => p,
            Err(code) => return code,
        },
        None => ScriptedPolicy::new(OutcomeDistribution::with_correct(p_correct), seed),
    };
    let dataset = match Dataset::load(dataset) {
        Ok(d) => d,
        Err(e) => return usage(e),
    };
    let scoring = match cfg.validate().and_then(|_| cfg.scoring()) {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let stats = match run_sim(&policy, &dataset.records, group_size, epochs, &scoring) {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let csv = stats_csv(&stats).expect("stats serialize");
    match write_output(out.unwrap_or(Path::new("-")), &csv) {
        Ok(()) => EXIT_OK,
        Err(code) => code,
    }
}
