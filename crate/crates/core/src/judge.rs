//! Binary answer correctness via a cheap-to-expensive cascade: normalized
//! string equality, numeric tolerance, then an optional external LLM judge.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};
use std::thread;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::{ParsedAnswer, Semaphore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub relative_tolerance: f64,
    /// Disabling this skips the numeric stage entirely.
    pub numeric_stage: bool,
    pub use_llm_judge: bool,
    pub llm_endpoint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_token: Option<String>,
    pub cache_enabled: bool,
    pub max_inflight: usize,
    pub retries: u32,
    /// Initial backoff in milliseconds, doubled per retry.
    pub backoff_ms: u64,
    pub request_timeout_s: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            relative_tolerance: 0.005,
            numeric_stage: true,
            use_llm_judge: false,
            llm_endpoint: String::new(),
            llm_token: None,
            cache_enabled: true,
            max_inflight: 8,
            retries: 3,
            backoff_ms: 200,
            request_timeout_s: 60.0,
        }
    }
}

impl JudgeConfig {
    pub fn validate(&self) -> Result<(), crate::Error> {
        if self.relative_tolerance.is_nan() || self.relative_tolerance < 0.0 {
            return Err(crate::Error::Config(format!(
                "judge relative_tolerance must be >= 0, got {}",
                self.relative_tolerance
            )));
        }
        if self.use_llm_judge && self.llm_endpoint.is_empty() {
            return Err(crate::Error::Config(
                "judge use_llm_judge requires llm_endpoint (or JUDGE_URL)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeStage {
    Exact,
    Numeric,
    Llm,
}

impl JudgeStage {
    pub fn as_str(self) -> &'static str {
        match self {
            JudgeStage::Exact => "exact",
            JudgeStage::Numeric => "numeric",
            JudgeStage::Llm => "llm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub stage: JudgeStage,
    pub rationale: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JudgeError {
    #[error("llm judge unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("llm judge returned an unusable reply: {0}")]
    BadReply(String),
    #[error("llm judge enabled but no client configured")]
    NoClient,
}

static NUMERIC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?$").unwrap());

/// Trim, case-fold, collapse whitespace, drop one trailing period, and for
/// pure numerics drop thousands separators and trailing fractional zeros.
pub fn normalize(answer: &str) -> String {
    let folded = answer.trim().to_lowercase();
    let mut s = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    if s.ends_with('.') {
        s.pop();
        let trimmed = s.trim_end().len();
        s.truncate(trimmed);
    }
    if NUMERIC.is_match(&s) {
        s.retain(|c| c != ',');
        if let Some(rest) = s.strip_prefix('+') {
            s = rest.to_string();
        }
        if s.contains('.') {
            let t = s.trim_end_matches('0').trim_end_matches('.').len();
            s.truncate(t);
        }
        if s == "-0" {
            s = "0".into();
        }
    }
    s
}

/// A normalized answer read as one finite number.
pub fn parse_number(normalized: &str) -> Option<f64> {
    if !NUMERIC.is_match(normalized) {
        return None;
    }
    normalized
        .replace(',', "")
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
}

/// Symmetric tolerance test: absolute when either side is zero, otherwise
/// relative to the larger magnitude.
pub fn within_tolerance(a: f64, b: f64, tol: f64) -> bool {
    let diff = (a - b).abs();
    if a == 0.0 || b == 0.0 {
        diff <= tol
    } else {
        diff / a.abs().max(b.abs()) <= tol
    }
}

/// The exact and numeric stages. Returns the verdict reached by the last
/// stage attempted.
pub fn judge_local(candidate: &str, gold: &str, cfg: &JudgeConfig) -> Verdict {
    let c = normalize(candidate);
    let g = normalize(gold);
    if c == g {
        return Verdict {
            correct: true,
            stage: JudgeStage::Exact,
            rationale: String::new(),
        };
    }
    if cfg.numeric_stage {
        if let (Some(a), Some(b)) = (parse_number(&c), parse_number(&g)) {
            return Verdict {
                correct: within_tolerance(a, b, cfg.relative_tolerance),
                stage: JudgeStage::Numeric,
                rationale: String::new(),
            };
        }
    }
    Verdict {
        correct: false,
        stage: JudgeStage::Exact,
        rationale: String::new(),
    }
}

/// One request to an external binary judge.
pub trait LlmClient: Send + Sync {
    /// `Ok(Some(b))` on a well-formed verdict, `Ok(None)` on an unparseable
    /// reply, `Err` on transport failure.
    fn ask(&self, question: &str, gold: &str, candidate: &str) -> Result<Option<bool>, String>;
}

#[derive(Serialize)]
struct JudgeRequestBody<'a> {
    question: &'a str,
    gold: &'a str,
    candidate: &'a str,
}

#[derive(Deserialize)]
struct JudgeReplyBody {
    verdict: String,
}

/// `POST {"question","gold","candidate"}` → `{"verdict":"CORRECT"|"INCORRECT"}`.
pub struct HttpLlmClient {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            token,
            agent,
        }
    }
}

impl LlmClient for HttpLlmClient {
    fn ask(&self, question: &str, gold: &str, candidate: &str) -> Result<Option<bool>, String> {
        let body = JudgeRequestBody {
            question,
            gold,
            candidate,
        };
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(format!("http status {status}"));
        }
        if status >= 400 {
            return Ok(None);
        }
        let reply: JudgeReplyBody = match resp.body_mut().read_json() {
            Ok(r) => r,
            Err(_) => return Ok(None),
        };
        Ok(match reply.verdict.as_str() {
            "CORRECT" => Some(true),
            "INCORRECT" => Some(false),
            _ => None,
        })
    }
}

type CacheKey = (String, String, String);

/// The full cascade with bounded in-flight LLM requests, exponential backoff,
/// and a read-through verdict cache keyed by (question, gold, candidate).
pub struct Judge {
    cfg: JudgeConfig,
    client: Option<Arc<dyn LlmClient>>,
    inflight: Semaphore,
    cache: Mutex<HashMap<CacheKey, Verdict>>,
}

impl Judge {
    /// Local stages only unless `cfg.use_llm_judge`, in which case an HTTP
    /// client is built from `cfg.llm_endpoint`.
    pub fn new(cfg: JudgeConfig) -> Self {
        let client: Option<Arc<dyn LlmClient>> = cfg.use_llm_judge.then(|| {
            Arc::new(HttpLlmClient::new(
                cfg.llm_endpoint.clone(),
                cfg.llm_token.clone(),
                Duration::from_secs_f64(cfg.request_timeout_s.max(0.001)),
            )) as Arc<dyn LlmClient>
        });
        Self::with_client(cfg, client)
    }

    pub fn with_client(cfg: JudgeConfig, client: Option<Arc<dyn LlmClient>>) -> Self {
        let inflight = Semaphore::new(cfg.max_inflight);
        Self {
            cfg,
            client,
            inflight,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.cfg
    }

    pub fn judge(
        &self,
        candidate: &ParsedAnswer,
        gold: &str,
        question: &str,
    ) -> Result<Verdict, JudgeError> {
        let local = judge_local(&candidate.text, gold, &self.cfg);
        if local.correct || !self.cfg.use_llm_judge {
            return Ok(local);
        }
        let client = self.client.as_ref().ok_or(JudgeError::NoClient)?;
        let key = (
            question.to_string(),
            gold.to_string(),
            candidate.text.clone(),
        );
        if self.cfg.cache_enabled {
            if let Some(v) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
                return Ok(v.clone());
            }
        }
        let correct = self.ask_with_retry(client.as_ref(), question, gold, &candidate.text)?;
        let verdict = Verdict {
            correct,
            stage: JudgeStage::Llm,
            rationale: if correct { "CORRECT" } else { "INCORRECT" }.to_string(),
        };
        if self.cfg.cache_enabled {
            self.cache
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .entry(key)
                .or_insert_with(|| verdict.clone());
        }
        Ok(verdict)
    }

    fn ask_with_retry(
        &self,
        client: &dyn LlmClient,
        question: &str,
        gold: &str,
        candidate: &str,
    ) -> Result<bool, JudgeError> {
        let _permit = self.inflight.acquire();
        let mut backoff = Duration::from_millis(self.cfg.backoff_ms);
        let mut transport_failures = 0u32;
        let mut bad_replies = 0u32;
        loop {
            match client.ask(question, gold, candidate) {
                Ok(Some(v)) => return Ok(v),
                Ok(None) => {
                    bad_replies += 1;
                    if bad_replies > 1 {
                        return Err(JudgeError::BadReply(
                            "expected CORRECT or INCORRECT".into(),
                        ));
                    }
                }
                Err(e) => {
                    transport_failures += 1;
                    if transport_failures > self.cfg.retries {
                        return Err(JudgeError::Unreachable {
                            attempts: transport_failures,
                            last: e,
                        });
                    }
                    thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn ans(s: &str) -> ParsedAnswer {
        ParsedAnswer::from_text(s).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("  1,234.0 "), "1234");
        assert_eq!(normalize("Beijing."), "beijing");
        assert_eq!(normalize("3.1400"), "3.14");
    }

    #[test]
    fn normalize_table() {
        let table = [
            ("42", "42"),
            ("42.0", "42"),
            ("42.", "42"),
            ("+42", "42"),
            ("-0.0", "0"),
            ("-3.50", "-3.5"),
            ("1,000,000", "1000000"),
            ("1,000,000.50", "1000000.5"),
            ("1,23", "1,23"),
            ("12,3456", "12,3456"),
            ("0.000", "0"),
            ("100", "100"),
            ("100.", "100"),
            ("007", "007"),
            ("3.1400", "3.14"),
            ("  1,234.0 ", "1234"),
            ("Beijing.", "beijing"),
            ("BEIJING", "beijing"),
            ("New   York\tCity", "new york city"),
            ("a.b.", "a.b"),
            ("end..", "end."),
            ("", ""),
            ("   ", ""),
            (".", ""),
            ("12%", "12%"),
            ("1e5", "1e5"),
            ("v1.0", "v1.0"),
            ("2023-01-01", "2023-01-01"),
            ("北京。", "北京。"),
            ("Yes .", "yes"),
        ];
        assert_eq!(table.len(), 30);
        for (input, want) in table {
            assert_eq!(normalize(input), want, "input {input:?}");
        }
    }

    #[test]
    fn cascade_examples() {
        let cfg = JudgeConfig::default();
        let j = Judge::new(cfg.clone());
        let v = j.judge(&ans("42.0"), "42", "q").unwrap();
        assert!(v.correct);
        assert_eq!(v.stage, JudgeStage::Exact);

        let v = j.judge(&ans("0.502"), "0.5", "q").unwrap();
        assert!(v.correct);
        assert_eq!(v.stage, JudgeStage::Numeric);

        let v = j.judge(&ans("about fifty"), "50", "q").unwrap();
        assert!(!v.correct);
        assert_eq!(v.stage, JudgeStage::Exact);

        let v = j.judge(&ans("0.51"), "0.5", "q").unwrap();
        assert!(!v.correct);
        assert_eq!(v.stage, JudgeStage::Numeric);
    }

    #[test]
    fn zero_gold_uses_absolute_tolerance() {
        let cfg = JudgeConfig::default();
        assert!(judge_local("0.004", "0", &cfg).correct);
        assert!(!judge_local("0.006", "0", &cfg).correct);
    }

    #[test]
    fn numeric_stage_can_be_disabled() {
        let cfg = JudgeConfig {
            numeric_stage: false,
            ..Default::default()
        };
        assert!(!judge_local("0.502", "0.5", &cfg).correct);
    }

    struct Scripted {
        replies: Mutex<Vec<Result<Option<bool>, String>>>,
        calls: AtomicUsize,
    }

    impl LlmClient for Scripted {
        fn ask(&self, _: &str, _: &str, _: &str) -> Result<Option<bool>, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                Ok(Some(true))
            } else {
                r.remove(0)
            }
        }
    }

    fn llm_cfg() -> JudgeConfig {
        JudgeConfig {
            use_llm_judge: true,
            llm_endpoint: "http://unused".into(),
            backoff_ms: 1,
            ..Default::default()
        }
    }

    fn scripted(replies: Vec<Result<Option<bool>, String>>) -> Arc<Scripted> {
        Arc::new(Scripted {
            replies: Mutex::new(replies),
            calls: AtomicUsize::new(0),
        })
    }

    #[test]
    fn llm_stage_and_cache() {
        let client = scripted(vec![Ok(Some(true))]);
        let j = Judge::with_client(llm_cfg(), Some(client.clone()));
        let v1 = j.judge(&ans("fifty"), "50", "how many?").unwrap();
        assert!(v1.correct);
        assert_eq!(v1.stage, JudgeStage::Llm);
        let v2 = j.judge(&ans("fifty"), "50", "how many?").unwrap();
        assert_eq!(v1, v2);
        assert_eq!(client.calls.load(Ordering::SeqCst), 1);
        assert_eq!(j.cache_len(), 1);
    }

    #[test]
    fn llm_not_called_when_exact_passes() {
        let client = scripted(vec![]);
        let j = Judge::with_client(llm_cfg(), Some(client.clone()));
        assert!(j.judge(&ans("50"), "50", "q").unwrap().correct);
        assert_eq!(client.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn bad_reply_retried_once_then_error() {
        let client = scripted(vec![Ok(None), Ok(Some(false))]);
        let j = Judge::with_client(llm_cfg(), Some(client.clone()));
        assert!(!j.judge(&ans("x"), "y", "q").unwrap().correct);

        let client = scripted(vec![Ok(None), Ok(None)]);
        let j = Judge::with_client(llm_cfg(), Some(client.clone()));
        assert!(matches!(
            j.judge(&ans("x"), "y", "q"),
            Err(JudgeError::BadReply(_))
        ));
    }

    #[test]
    fn transport_failures_exhaust_retries() {
        let client = scripted(vec![Err("down".into()); 10]);
        let j = Judge::with_client(llm_cfg(), Some(client.clone()));
        let err = j.judge(&ans("x"), "y", "q").unwrap_err();
        assert_eq!(
            err,
            JudgeError::Unreachable {
                attempts: 4,
                last: "down".into()
            }
        );
        assert_eq!(client.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn transient_failure_recovers() {
        let client = scripted(vec![Err("blip".into()), Ok(Some(false))]);
        let j = Judge::with_client(llm_cfg(), Some(client));
        let v = j.judge(&ans("x"), "y", "q").unwrap();
        assert!(!v.correct);
        assert_eq!(v.stage, JudgeStage::Llm);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn num_str() -> impl Strategy<Value = String> {
            (-1_000_000i64..1_000_000, 0u32..4).prop_map(|(m, scale)| {
                let v = m as f64 / 10f64.powi(scale as i32);
                format!("{v}")
            })
        }

        proptest! {
            #[test]
            fn numeric_symmetry(a in num_str(), b in num_str(), tol in 0.0f64..0.1) {
                let cfg = JudgeConfig { relative_tolerance: tol, ..Default::default() };
                prop_assert_eq!(judge_local(&a, &b, &cfg).correct, judge_local(&b, &a, &cfg).correct);
            }

            #[test]
            fn reflexive(x in "\\PC{1,40}") {
                prop_assume!(!x.trim().is_empty());
                prop_assert!(judge_local(&x, &x, &JudgeConfig::default()).correct);
            }

            #[test]
            fn monotone_tolerance(a in num_str(), b in num_str(), t in 0.0f64..0.1, extra in 0.0f64..0.1) {
                let lo = JudgeConfig { relative_tolerance: t, ..Default::default() };
                let hi = JudgeConfig { relative_tolerance: t + extra, ..Default::default() };
                if judge_local(&a, &b, &lo).correct {
                    prop_assert!(judge_local(&a, &b, &hi).correct);
                }
            }
        }
    }
}
