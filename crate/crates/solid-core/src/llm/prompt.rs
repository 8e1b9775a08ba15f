use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::levels::ConfidenceLevel;
use crate::consensus::{DecisionVector, DualPrice};
use crate::{Error, Result};

/// Placeholder rendered for tickers with no news file.
pub const NO_NEWS_PLACEHOLDER: &str = "No significant news available for this period.";

const SPARSITY_DIRECTIVE: &str = "Aim for sparsity in the final allocation: set zero weights for stocks in which you have low confidence.";

/// Everything needed to build one prompt exchange for the LLM agent.
#[derive(Debug, Clone)]
pub struct PromptContext {
    pub tickers: Vec<String>,
    pub news: BTreeMap<String, String>,
    pub recent_prices: String,
    pub decision_price: DualPrice,
    pub public_plan: DecisionVector,
    pub sparse_mode: bool,
}

impl PromptContext {
    fn validate(&self) -> Result<()> {
        if self.tickers.is_empty() {
            return Err(Error::InvalidParameter("no tickers".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tickers {
            if !seen.insert(t) {
                return Err(Error::InvalidParameter(format!("duplicate ticker {t}")));
            }
        }
        let n = self.tickers.len();
        if self.decision_price.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.decision_price.len(),
            });
        }
        if self.public_plan.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.public_plan.len(),
            });
        }
        Ok(())
    }
}

/// Build the (system, user) message pair for one exchange.
pub fn build_prompt(ctx: &PromptContext) -> Result<(String, String)> {
    ctx.validate()?;

    let system = "You are collaborating with an optimization model to develop an optimal portfolio strategy. \
The optimization model is an expert in numerical calculations and historical trend analysis, ensuring precision in minimizing risk and achieving target returns. \
Your role is to bring contextual understanding, strategic insights, and adaptability to the process.\n\n\
While you are encouraged to bring your unique perspective, remember:\n\n\
1. The optimization model has consistently outperformed by a significant margin (10-20%). Where substantial differences arise, carefully review the optimizer's proposal and adjust your recommendations unless you have a strong, data-backed reason to maintain your position.\n\
2. In this collaboration, flexibility and compromise are critical. Adapt your strategy when the optimizer provides strong evidence; rigid decision-making has been shown to lead to suboptimal results.\n\
3. Your goal is to work synergistically with the optimizer to maximize overall portfolio performance. This requires understanding and integrating the optimizer's proposals to improve alignment.\n\
4. If you disagree, explicitly identify the key aspects of the optimizer's proposal that you are willing to accept or adjust. Never reject the optimizer's strategy outright; focus on making incremental refinements."
        .to_string();

    let mut user = String::new();
    user.push_str("Please read the following information carefully.\n\n---\n**Stock News**\n\n");
    for ticker in &ctx.tickers {
        let news = ctx
            .news
            .get(ticker)
            .map(String::as_str)
            .filter(|s| !s.trim().is_empty())
            .unwrap_or(NO_NEWS_PLACEHOLDER);
        writeln!(user, "news for {ticker}:\n{news}\n").unwrap();
    }

    user.push_str("---\n**Recent Stock Prices**\n\n");
    user.push_str(&ctx.recent_prices);
    user.push_str("\n\n");

    user.push_str(
        "You are a trader responsible for making portfolio allocation decisions. \
Use all relevant information provided (such as news and stock data) to decide how much to invest in each stock.\n\n\
Think about:\n\n1. Any news articles and how they might affect each stock.\n\n\
2. Previous decisions you have made regarding portfolio weights.\n\n",
    );

    user.push_str("The optimizer's proposed portfolio weights thus far are:\n");
    for (ticker, weight) in ctx.tickers.iter().zip(ctx.public_plan.as_slice()) {
        writeln!(user, "  {ticker}: {weight:.4}").unwrap();
    }

    user.push_str("\nAlso, here is the decision-price of your plan thus far:\n");
    for (ticker, price) in ctx.tickers.iter().zip(ctx.decision_price.as_slice()) {
        writeln!(user, "  {ticker}: {price:+.4}").unwrap();
    }
    user.push_str(
        "A higher decision-price means you should adjust your plan to be higher. \
And a negative decision-price means you should adjust your plan to be smaller.\n\n",
    );

    user.push_str(
        "### Task\n\
1. Carefully evaluate the optimizer's proposed portfolio weights and explain your reasoning for agreement or disagreement. \
When in doubt, lean towards collaboration by adjusting your recommendations closer to the optimizer's.\n\
2. Finalize your recommendation in the following format: [Ticker: Confidence Level]:\n",
    );
    for level in ConfidenceLevel::ALL {
        writeln!(user, "   - {}", level.label()).unwrap();
    }
    user.push_str(
        "\n3. Conclude by summarizing how your proposal aligns with the optimizer's and why it contributes to achieving the collective goals.\n",
    );
    if ctx.sparse_mode {
        user.push('\n');
        user.push_str(SPARSITY_DIRECTIVE);
        user.push('\n');
    }
    user.push_str(
        "\nEven if you are unsure, you **must** provide the best decision you can based on the available information.\n\n\
Take a deep breath and work on this problem step-by-step.\n\n\
### Response Format\n\
After your explanation, please write your final recommendation in a single line, in the format below:\n\n",
    );
    let format_line: Vec<String> = ctx
        .tickers
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{t}: X{}", i + 1))
        .collect();
    user.push_str(&format_line.join(", "));
    user.push_str(
        "\n\nReplace each X with the confidence level for that stock. \
Explicitly end your response in that format, with these stocks and confidence levels clearly written out to be parsed by a regex function.\n\n\
Remember, collaboration, adaptability, and performance are key to success.\n",
    );

    Ok((system, user))
}
