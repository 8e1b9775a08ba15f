use serde::{Deserialize, Serialize};

use crate::Error;

/// The seven ordered semantic confidence levels an LLM response may assign
/// to a ticker, mapped to numeric scores 0.0 through 0.6 in 0.1 steps.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum ConfidenceLevel {
    VeryLow,
    Low,
    SomewhatLow,
    Neutral,
    SomewhatHigh,
    High,
    VeryHigh,
}

impl ConfidenceLevel {
    pub const ALL: [ConfidenceLevel; 7] = [
        ConfidenceLevel::VeryLow,
        ConfidenceLevel::Low,
        ConfidenceLevel::SomewhatLow,
        ConfidenceLevel::Neutral,
        ConfidenceLevel::SomewhatHigh,
        ConfidenceLevel::High,
        ConfidenceLevel::VeryHigh,
    ];

    pub fn value(self) -> f64 {
        match self {
            ConfidenceLevel::VeryLow => 0.0,
            ConfidenceLevel::Low => 0.1,
            ConfidenceLevel::SomewhatLow => 0.2,
            ConfidenceLevel::Neutral => 0.3,
            ConfidenceLevel::SomewhatHigh => 0.4,
            ConfidenceLevel::High => 0.5,
            ConfidenceLevel::VeryHigh => 0.6,
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            ConfidenceLevel::VeryLow => "Very Low",
            ConfidenceLevel::Low => "Low",
            ConfidenceLevel::SomewhatLow => "Somewhat Low",
            ConfidenceLevel::Neutral => "Neutral",
            ConfidenceLevel::SomewhatHigh => "Somewhat High",
            ConfidenceLevel::High => "High",
            ConfidenceLevel::VeryHigh => "Very High",
        }
    }

    /// Canonical rendering used in the final recommendation line:
    /// `"Neutral"` stays bare, everything else carries the `Confidence`
    /// suffix.
    pub fn label(self) -> String {
        match self {
            ConfidenceLevel::Neutral => "Neutral".to_string(),
            other => format!("{} Confidence", other.phrase()),
        }
    }

    /// Parse one level token. Case-insensitive; a trailing `Confidence` is
    /// optional.
    pub fn parse_token(token: &str) -> Result<Self, Error> {
        let lowered = token.trim().to_lowercase();
        let stripped = lowered
            .strip_suffix("confidence")
            .unwrap_or(&lowered)
            .trim();
        let normalized = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
        for level in Self::ALL {
            if normalized == level.phrase().to_lowercase() {
                return Ok(level);
            }
        }
        Err(Error::UnknownLevel(token.trim().to_string()))
    }
}
