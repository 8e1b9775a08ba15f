//! The LLM decision agent: prompt construction carrying dual prices and the
//! public plan, the chat-completion round trip, response parsing into
//! confidence levels, and the mapping to a numeric proposal. Deterministic
//! mock agents live in [`mock`] for offline runs and regression tests.

mod client;
mod levels;
mod parse;
mod prompt;

pub mod mock;

pub use client::{
    ChatTransport, HttpChatClient, LlmAgent, LlmEndpointConfig, MarketContext, TranscriptRecord,
    API_KEY_ENV,
};
pub use levels::ConfidenceLevel;
pub use parse::{levels_to_proposal, parse_response, render_levels_line};
pub use prompt::{build_prompt, PromptContext, NO_NEWS_PLACEHOLDER};

use std::collections::BTreeMap;
use std::path::Path;

/// Read one news file per ticker from `dir/<period>/<ticker>.txt`.
/// Missing files fall back to the "no news" placeholder.
pub fn load_news(dir: &Path, period: &str, tickers: &[String]) -> BTreeMap<String, String> {
    let mut news = BTreeMap::new();
    for ticker in tickers {
        let path = dir.join(period).join(format!("{ticker}.txt"));
        let text = std::fs::read_to_string(&path)
            .ok()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| NO_NEWS_PLACEHOLDER.to_string());
        news.insert(ticker.clone(), text);
    }
    news
}
