use std::collections::BTreeMap;

use regex::Regex;
use std::sync::OnceLock;

use super::levels::ConfidenceLevel;
use crate::consensus::DecisionVector;
use crate::{Error, Result};

fn chunk_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z0-9._\-]+)\s*:\s*([A-Za-z][A-Za-z ]*?)\s*$").unwrap())
}

/// Render a level map as the canonical final recommendation line,
/// `T1: L1, T2: L2, ...` in the given ticker order.
pub fn render_levels_line(
    tickers: &[String],
    levels: &BTreeMap<String, ConfidenceLevel>,
) -> String {
    tickers
        .iter()
        .filter_map(|t| levels.get(t).map(|l| format!("{t}: {}", l.label())))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Extract the per-ticker confidence levels from a model response.
///
/// Scans from the end of the text for the last line whose comma-separated
/// chunks all have the `key: phrase` shape and that mentions at least one
/// known ticker. Ticker matching is case-insensitive; every ticker must be
/// assigned exactly once.
pub fn parse_response(
    text: &str,
    tickers: &[String],
) -> Result<BTreeMap<String, ConfidenceLevel>> {
    if tickers.is_empty() {
        return Err(Error::InvalidParameter("no tickers".into()));
    }
    let canonical: BTreeMap<String, &String> = tickers
        .iter()
        .map(|t| (t.to_uppercase(), t))
        .collect();

    for line in text.lines().rev() {
        if line.trim().is_empty() {
            continue;
        }
        let chunks: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<(String, String)>> = chunks
            .iter()
            .map(|chunk| {
                chunk_pattern().captures(chunk).map(|c| {
                    (c.get(1).unwrap().as_str().to_string(), c.get(2).unwrap().as_str().to_string())
                })
            })
            .collect();
        let Some(pairs) = parsed else { continue };
        if !pairs
            .iter()
            .any(|(key, _)| canonical.contains_key(&key.to_uppercase()))
        {
            continue;
        }

        let mut levels = BTreeMap::new();
        for (key, value) in &pairs {
            let Some(ticker) = canonical.get(&key.to_uppercase()) else {
                continue;
            };
            let level = ConfidenceLevel::parse_token(value)?;
            if levels.insert((*ticker).clone(), level).is_some() {
                return Err(Error::Data(format!("ticker {ticker} assigned twice")));
            }
        }
        let missing: Vec<String> = tickers
            .iter()
            .filter(|t| !levels.contains_key(*t))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingTickers(missing));
        }
        return Ok(levels);
    }
    Err(Error::NoRecommendationLine)
}

/// Map levels to scores and normalize onto the simplex. In sparse mode,
/// scores at or below 0.1 (Low, Very Low) are zeroed before normalizing.
/// A zero total falls back to the uniform vector.
pub fn levels_to_proposal(
    tickers: &[String],
    levels: &BTreeMap<String, ConfidenceLevel>,
    sparse_mode: bool,
) -> Result<DecisionVector> {
    let mut values = Vec::with_capacity(tickers.len());
    for ticker in tickers {
        let level = levels
            .get(ticker)
            .ok_or_else(|| Error::MissingTickers(vec![ticker.clone()]))?;
        let mut v = level.value();
        if sparse_mode && v <= 0.1 + 1e-12 {
            v = 0.0;
        }
        values.push(v);
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        let n = tickers.len() as f64;
        return DecisionVector::new(vec![1.0 / n; tickers.len()]);
    }
    DecisionVector::new(values.into_iter().map(|v| v / total).collect())
}
