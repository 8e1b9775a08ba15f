use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::levels::ConfidenceLevel;
use super::parse::{levels_to_proposal, parse_response};
use super::prompt::{build_prompt, PromptContext};
use crate::consensus::{ConsistencySet, DecisionVector, DualPrice};
use crate::coordinator::Agent;
use crate::{Error, Result};

/// Environment variable the bearer token is read from.
pub const API_KEY_ENV: &str = "SOLID_LLM_API_KEY";

const CORRECTIVE_INSTRUCTION: &str = "Your previous response could not be parsed. You must end your response with a single line assigning every ticker exactly one of the seven confidence levels, in the format `TICKER1: Level, TICKER2: Level, ...`, with no other text on that line.";

/// Endpoint settings for a chat-completion service.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    2
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        LlmEndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            temperature: 0.0,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
        }
    }
}

/// One chat-completion round trip. Implementations own their transport-level
/// retry policy; parse-level retries belong to [`LlmAgent`].
pub trait ChatTransport {
    fn complete(&self, system: &str, user: &str) -> Result<String>;
}

/// Blocking HTTP client for the `POST {base_url}/chat/completions` wire
/// format, bearer token from `SOLID_LLM_API_KEY`.
pub struct HttpChatClient {
    config: LlmEndpointConfig,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: LlmEndpointConfig) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpChatClient { config, client })
    }

    fn request_once(&self, system: &str, user: &str) -> Result<String> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut request = self.client.post(&url).json(&body);
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.trim().is_empty() {
                request = request.bearer_auth(key.trim());
            }
        }
        let response = request
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("status {status}: {text}")));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Transport(format!("bad JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Transport("response missing choices[0].message.content".into()))
    }
}

impl ChatTransport for HttpChatClient {
    fn complete(&self, system: &str, user: &str) -> Result<String> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.request_once(system, user) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("chat completion attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(Error::AgentUnavailable {
            attempts,
            reason: last,
        })
    }
}

/// One audit record per request/response exchange.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub period: String,
    pub iteration: u64,
    pub prompt_hash: String,
    pub response: String,
    pub parsed_levels: Option<BTreeMap<String, String>>,
}

/// Static market inputs for one decision period.
#[derive(Debug, Clone)]
pub struct MarketContext {
    pub tickers: Vec<String>,
    pub news: BTreeMap<String, String>,
    pub recent_prices: String,
    pub sparse_mode: bool,
}

/// The LLM decision agent: builds the prompt from the current prices and
/// public plan, runs the chat round trip, parses confidence levels, and maps
/// them to a proposal. A parse failure triggers exactly one corrective
/// re-prompt before the agent reports itself unavailable.
pub struct LlmAgent<T: ChatTransport> {
    id: String,
    period: String,
    market: MarketContext,
    transport: T,
    iteration: AtomicU64,
    transcript: Mutex<Vec<TranscriptRecord>>,
}

impl<T: ChatTransport> LlmAgent<T> {
    pub fn new(
        id: impl Into<String>,
        period: impl Into<String>,
        market: MarketContext,
        transport: T,
    ) -> Self {
        LlmAgent {
            id: id.into(),
            period: period.into(),
            market,
            transport,
            iteration: AtomicU64::new(0),
            transcript: Mutex::new(Vec::new()),
        }
    }

    pub fn transcript(&self) -> Vec<TranscriptRecord> {
        self.transcript.lock().unwrap().clone()
    }

    /// Write the transcript as newline-delimited JSON.
    pub fn write_transcript<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for record in self.transcript.lock().unwrap().iter() {
            serde_json::to_writer(&mut w, record)
                .map_err(|e| Error::Data(format!("transcript serialization: {e}")))?;
            writeln!(w)?;
        }
        Ok(())
    }

    fn record(
        &self,
        iteration: u64,
        system: &str,
        user: &str,
        response: &str,
        levels: Option<&BTreeMap<String, ConfidenceLevel>>,
    ) {
        let mut hasher = Sha256::new();
        hasher.update(system.as_bytes());
        hasher.update(b"\n");
        hasher.update(user.as_bytes());
        let prompt_hash = format!("{:x}", hasher.finalize());
        self.transcript.lock().unwrap().push(TranscriptRecord {
            period: self.period.clone(),
            iteration,
            prompt_hash,
            response: response.to_string(),
            parsed_levels: levels.map(|m| {
                m.iter().map(|(t, l)| (t.clone(), l.label())).collect()
            }),
        });
    }

    fn exchange(
        &self,
        iteration: u64,
        system: &str,
        user: &str,
    ) -> Result<(String, Result<BTreeMap<String, ConfidenceLevel>>)> {
        let response = self.transport.complete(system, user)?;
        let parsed = parse_response(&response, &self.market.tickers);
        self.record(iteration, system, user, &response, parsed.as_ref().ok());
        Ok((response, parsed))
    }

    /// Prompt, call, parse, map. Used both directly and through [`Agent`].
    pub fn propose_levels(
        &self,
        public_plan: &DecisionVector,
        price: &DualPrice,
    ) -> Result<BTreeMap<String, ConfidenceLevel>> {
        let ctx = PromptContext {
            tickers: self.market.tickers.clone(),
            news: self.market.news.clone(),
            recent_prices: self.market.recent_prices.clone(),
            decision_price: price.clone(),
            public_plan: public_plan.clone(),
            sparse_mode: self.market.sparse_mode,
        };
        let (system, user) = build_prompt(&ctx)?;
        let iteration = self.iteration.fetch_add(1, Ordering::SeqCst);

        let (_, parsed) = self.exchange(iteration, &system, &user)?;
        match parsed {
            Ok(levels) => Ok(levels),
            Err(e) if e.is_parse_error() => {
                let corrective = format!("{user}\n\n{CORRECTIVE_INSTRUCTION}");
                let (_, retried) = self.exchange(iteration, &system, &corrective)?;
                retried.map_err(|e| Error::AgentUnavailable {
                    attempts: 2,
                    reason: format!("parse failed after corrective retry: {e}"),
                })
            }
            Err(e) => Err(e),
        }
    }
}

impl<T: ChatTransport> Agent for LlmAgent<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(
        &self,
        public_prev: &DecisionVector,
        price_prev: &DualPrice,
        _rho: f64,
        _set: &ConsistencySet,
    ) -> Result<DecisionVector> {
        let levels = self.propose_levels(public_prev, price_prev)?;
        levels_to_proposal(&self.market.tickers, &levels, self.market.sparse_mode)
    }
}
