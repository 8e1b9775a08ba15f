//! Per-period LLM-side agents for the three run modes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use solid_core::backtest::{LlmProvider, PeriodInfo};
use solid_core::coordinator::Agent;
use solid_core::llm::mock::ScriptedLevelsAgent;
use solid_core::llm::{
    load_news, ConfidenceLevel, HttpChatClient, LlmAgent, LlmEndpointConfig, MarketContext,
};
use solid_core::{Error, Result};

use crate::config::{LlmSection, RunConfig};

/// Seeded random confidence levels, a deterministic function of
/// `(seed, period index, ticker position)`.
pub struct MockProvider {
    seed: u64,
}

impl LlmProvider for MockProvider {
    fn agent_for_period(&self, period: &PeriodInfo, sparse: bool) -> Result<Box<dyn Agent>> {
        let stream = self
            .seed
            .wrapping_add((period.index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let levels: BTreeMap<String, ConfidenceLevel> = period
            .tickers
            .iter()
            .map(|t| (t.clone(), ConfidenceLevel::ALL[rng.random_range(0..7usize)]))
            .collect();
        Ok(Box::new(ScriptedLevelsAgent::new(
            "llm-mock",
            period.tickers.clone(),
            vec![levels],
            sparse,
        )?))
    }
}

/// Levels taken verbatim from the config schedule; periods past the end of
/// the schedule reuse the last entry.
pub struct ScriptedProvider {
    schedule: Vec<BTreeMap<String, ConfidenceLevel>>,
}

impl ScriptedProvider {
    fn parse(levels: &[BTreeMap<String, String>]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter(
                "scripted llm mode needs at least one levels entry".into(),
            ));
        }
        let schedule = levels
            .iter()
            .map(|entry| {
                entry
                    .iter()
                    .map(|(t, l)| Ok((t.clone(), ConfidenceLevel::parse_token(l)?)))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(ScriptedProvider { schedule })
    }
}

impl LlmProvider for ScriptedProvider {
    fn agent_for_period(&self, period: &PeriodInfo, sparse: bool) -> Result<Box<dyn Agent>> {
        let entry = &self.schedule[period.index.min(self.schedule.len() - 1)];
        Ok(Box::new(ScriptedLevelsAgent::new(
            "llm-scripted",
            period.tickers.clone(),
            vec![entry.clone()],
            sparse,
        )?))
    }
}

/// Live chat-completion endpoint with per-period news from `news_dir`.
pub struct EndpointProvider {
    endpoint: LlmEndpointConfig,
    news_dir: Option<PathBuf>,
}

impl LlmProvider for EndpointProvider {
    fn agent_for_period(&self, period: &PeriodInfo, sparse: bool) -> Result<Box<dyn Agent>> {
        let news = match &self.news_dir {
            Some(dir) => load_news(dir, &period.label, &period.tickers),
            None => load_news(std::path::Path::new(""), &period.label, &period.tickers),
        };
        let market = MarketContext {
            tickers: period.tickers.clone(),
            news,
            recent_prices: period.recent_prices.clone(),
            sparse_mode: sparse,
        };
        let transport = HttpChatClient::new(self.endpoint.clone())?;
        Ok(Box::new(LlmAgent::new(
            "llm-endpoint",
            period.label.clone(),
            market,
            transport,
        )))
    }
}

pub fn build_provider(config: &RunConfig, seed: u64) -> Result<Box<dyn LlmProvider>> {
    match &config.llm {
        LlmSection::Mock => Ok(Box::new(MockProvider { seed })),
        LlmSection::Scripted { levels } => Ok(Box::new(ScriptedProvider::parse(levels)?)),
        LlmSection::Endpoint { endpoint } => Ok(Box::new(EndpointProvider {
            endpoint: endpoint.clone(),
            news_dir: config.news_dir.clone(),
        })),
    }
}
