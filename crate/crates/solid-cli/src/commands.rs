//! The three subcommand bodies.

use std::fs::File;
use std::io::Write;

use serde_json::json;

use solid_core::backtest::{
    compute_metrics, model_for_period, run_backtest, PeriodInfo, PriceSeries,
};
use solid_core::consensus::DualPrice;
use solid_core::coordinator::{run_consensus, CoordinatorConfig};
use solid_core::llm::API_KEY_ENV;
use solid_core::markowitz::{estimate_moments, MarkowitzAgent};
use solid_core::{Error, Result};

use crate::config::{LlmSection, RunConfig};
use crate::providers::build_provider;

fn coordinator_config(config: &RunConfig, dim: usize) -> Result<CoordinatorConfig> {
    Ok(CoordinatorConfig {
        rho: config.coordinator.rho,
        max_iterations: config.coordinator.max_iterations,
        eps_abs: config.coordinator.eps_abs,
        eps_rel: config.coordinator.eps_rel,
        set: config.coordinator.set.with_dim(dim)?,
        ordering: config.coordinator.ordering,
    })
}

/// One consensus negotiation between the Markowitz agent (full-history
/// moments) and the configured LLM-side agent, at the latest boundary.
pub fn cmd_consensus(config: &RunConfig, seed: u64) -> Result<()> {
    let series = PriceSeries::load_csv(&config.prices_csv)?;
    let (boundary_dates, returns) = series.monthly_returns()?;
    let bt = config.backtest_config();
    if returns.nrows() < bt.min_history {
        return Err(Error::Data(format!(
            "only {} monthly returns, need at least min_history = {}",
            returns.nrows(),
            bt.min_history
        )));
    }
    let boundary = returns.nrows();
    let model = model_for_period(&returns, boundary, &bt)?;
    let n = series.tickers().len();

    let month_ends = series.month_end_indices();
    let info = PeriodInfo {
        index: boundary - bt.min_history,
        label: boundary_dates[boundary - 1].format("%Y-%m").to_string(),
        tickers: series.tickers().to_vec(),
        recent_prices: series.price_snapshot(*month_ends.last().unwrap()),
    };
    let provider = build_provider(config, seed)?;
    let llm = provider.agent_for_period(&info, config.sparse)?;
    let opt = MarkowitzAgent::new("markowitz", model);

    let coordinator = coordinator_config(config, n)?;
    let x0 = coordinator.set.initial_point();
    let lambda0 = [DualPrice::zeros(n), DualPrice::zeros(n)];
    let result = run_consensus(&[&opt, llm.as_ref()], &coordinator, &x0, &lambda0)?;

    std::fs::create_dir_all(&config.output_dir)?;
    result.write_trace(File::create(config.output_dir.join("consensus_trace.ndjson"))?)?;
    let mut out = File::create(config.output_dir.join("consensus.json"))?;
    let doc = json!({
        "period": info.label,
        "tickers": series.tickers(),
        "converged": result.converged,
        "iterations": result.iterations_used,
        "public": result.public,
        "prices": result.prices,
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc).unwrap())?;

    let weights = series
        .tickers()
        .iter()
        .zip(result.public.as_slice())
        .map(|(t, w)| format!("{t} {w:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    println!(
        "period {}: {} after {} iteration(s); weights: {}",
        info.label,
        if result.converged { "converged" } else { "max iterations" },
        result.iterations_used,
        weights
    );
    println!("wrote {}", config.output_dir.join("consensus.json").display());
    Ok(())
}

/// Full monthly-rebalancing backtest over the configured strategies.
pub fn cmd_backtest(config: &RunConfig, seed: u64) -> Result<()> {
    let series = PriceSeries::load_csv(&config.prices_csv)?;
    let strategies = config.parsed_strategies()?;
    let bt = config.backtest_config();
    let provider = build_provider(config, seed)?;
    let report = run_backtest(&series, &strategies, Some(provider.as_ref()), &bt)?;
    let summary = compute_metrics(&report);

    std::fs::create_dir_all(&config.output_dir)?;
    report.write_values_csv(File::create(config.output_dir.join("values.csv"))?)?;
    report.write_risks_csv(File::create(config.output_dir.join("risks.csv"))?)?;
    report.write_weights_csv(File::create(config.output_dir.join("weights.csv"))?)?;
    let mut out = File::create(config.output_dir.join("summary.json"))?;
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).unwrap())?;

    let mut traces = File::create(config.output_dir.join("traces.ndjson"))?;
    for strategy in &report.strategies {
        for (i, trace) in strategy.traces.iter().enumerate() {
            if let Some(records) = trace {
                for record in records {
                    let line = json!({
                        "strategy": strategy.name,
                        "period": report.period_labels[i],
                        "record": record,
                    });
                    writeln!(traces, "{line}")?;
                }
            }
        }
    }

    println!(
        "{} periods, {} -> {} tickers {:?}",
        report.period_labels.len(),
        report.period_labels.first().unwrap(),
        report.period_labels.last().unwrap(),
        report.tickers
    );
    for s in &summary.strategies {
        let risk = s
            .mean_risk
            .map(|r| format!("{r:.6}"))
            .unwrap_or_else(|| "n/a".into());
        println!(
            "{:<12} final {:>10.2}  total {:>8.4}  annualized {:>8.4}  mean risk {}  failed {}",
            s.name, s.final_value, s.total_return, s.annualized_return, risk, s.failed_periods
        );
    }
    println!("wrote reports to {}", config.output_dir.display());
    Ok(())
}

/// Static checks of the config and data. Returns `false` when any check
/// failed; warnings alone do not fail validation.
pub fn cmd_validate(config: &RunConfig) -> Result<bool> {
    let mut ok = true;
    let fail = |msg: String, ok: &mut bool| {
        println!("error: {msg}");
        *ok = false;
    };

    match config.parsed_strategies() {
        Ok(specs) => println!(
            "ok: {} strategies ({})",
            specs.len(),
            specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
        ),
        Err(e) => fail(format!("strategies: {e}"), &mut ok),
    }

    if config.model.min_history < 2 {
        fail(
            format!("min_history must be >= 2, got {}", config.model.min_history),
            &mut ok,
        );
    }
    if config.coordinator.rho <= 0.0 {
        fail(format!("rho must be > 0, got {}", config.coordinator.rho), &mut ok);
    }

    let series = match PriceSeries::load_csv(&config.prices_csv) {
        Ok(s) => s,
        Err(e) => {
            fail(format!("price data: {e}"), &mut ok);
            return Ok(ok);
        }
    };
    println!(
        "ok: {} rows, {} tickers, {} month boundaries in {}",
        series.dates().len(),
        series.tickers().len(),
        series.month_end_indices().len(),
        config.prices_csv.display()
    );

    if let Err(e) = config.coordinator.set.with_dim(series.tickers().len()) {
        fail(format!("consistency set: {e}"), &mut ok);
    }

    let (boundary_dates, returns) = match series.monthly_returns() {
        Ok(r) => r,
        Err(e) => {
            fail(format!("monthly returns: {e}"), &mut ok);
            return Ok(ok);
        }
    };
    if returns.nrows() <= config.model.min_history {
        fail(
            format!(
                "only {} monthly returns, need more than min_history = {}",
                returns.nrows(),
                config.model.min_history
            ),
            &mut ok,
        );
        return Ok(ok);
    }
    let investable = returns.nrows() - config.model.min_history;
    println!("ok: {investable} investable periods");

    // target return must be attainable against the full-sample means
    let (mu, _) = estimate_moments(&returns, 0.0)?;
    if let Some(p) = config.model.target_return {
        if p < mu.min() || p > mu.max() {
            fail(
                format!(
                    "target_return {p:.6} outside the attainable range [{:.6}, {:.6}]",
                    mu.min(),
                    mu.max()
                ),
                &mut ok,
            );
        } else {
            println!("ok: target_return {p:.6} within [{:.6}, {:.6}]", mu.min(), mu.max());
        }
    }

    if let Some(dir) = &config.news_dir {
        let mut missing = 0usize;
        let mut total = 0usize;
        for date in boundary_dates.iter().skip(config.model.min_history) {
            let label = date.format("%Y-%m").to_string();
            for ticker in series.tickers() {
                total += 1;
                if !dir.join(&label).join(format!("{ticker}.txt")).exists() {
                    missing += 1;
                }
            }
        }
        if missing > 0 {
            println!(
                "warning: {missing}/{total} (period, ticker) news files missing under {}; \
                 the no-news placeholder will be used",
                dir.display()
            );
        } else {
            println!("ok: news coverage complete ({total} files)");
        }
    }

    if let LlmSection::Endpoint { endpoint } = &config.llm {
        println!("ok: endpoint mode against {} ({})", endpoint.base_url, endpoint.model);
        if std::env::var(API_KEY_ENV).map(|v| v.trim().is_empty()).unwrap_or(true) {
            println!("warning: {API_KEY_ENV} is not set; requests will be unauthenticated");
        }
    }

    Ok(ok)
}
