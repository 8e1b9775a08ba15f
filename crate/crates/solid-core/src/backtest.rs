//! Month-by-month rebalancing harness: price ingestion, the strategy
//! families (OPT, LLM, LLM+OPT, AVG and their sparse variants), and the
//! value/risk bookkeeping.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsistencySetKind, DecisionVector, DualPrice, IterationRecord};
use crate::coordinator::{run_consensus, Agent, CoordinatorConfig, UpdateOrdering};
use crate::markowitz::{default_ridge, estimate_moments, MarkowitzAgent, MarkowitzModel};
use crate::{Error, Result};

/// Daily adjusted closing prices for a ticker universe, dates strictly
/// increasing, no missing cells.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    prices: DMatrix<f64>,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, tickers: Vec<String>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.nrows() != dates.len() || prices.ncols() != tickers.len() {
            return Err(Error::Data(format!(
                "price matrix {}x{} does not match {} dates x {} tickers",
                prices.nrows(),
                prices.ncols(),
                dates.len(),
                tickers.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Data(format!(
                    "dates not strictly increasing at {}",
                    pair[1]
                )));
            }
        }
        for j in 0..tickers.len() {
            for i in 0..dates.len() {
                let p = prices[(i, j)];
                if !p.is_finite() || p <= 0.0 {
                    return Err(Error::Data(format!(
                        "non-positive price {p} for {} on {}",
                        tickers[j], dates[i]
                    )));
                }
            }
        }
        Ok(PriceSeries {
            dates,
            tickers,
            prices,
        })
    }

    /// Load from CSV with header `date,ticker,adj_close`. Rows may arrive in
    /// any order; the (date, ticker) grid must be complete. Tickers come out
    /// sorted lexicographically.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Data(e.to_string()))?
            .clone();
        let expected = ["date", "ticker", "adj_close"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Data(format!(
                "bad header {:?}, expected {expected:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut cells: BTreeMap<(NaiveDate, String), f64> = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Data(e.to_string()))?;
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|e| Error::Data(format!("bad date {:?}: {e}", &record[0])))?;
            let ticker = record[1].to_string();
            let price: f64 = record[2]
                .parse()
                .map_err(|e| Error::Data(format!("bad price {:?}: {e}", &record[2])))?;
            if cells.insert((date, ticker.clone()), price).is_some() {
                return Err(Error::Data(format!("duplicate row for ({date}, {ticker})")));
            }
        }
        let mut dates: Vec<NaiveDate> = cells.keys().map(|(d, _)| *d).collect();
        dates.dedup();
        let mut tickers: Vec<String> = cells
            .keys()
            .map(|(_, t)| t.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        tickers.sort();
        if dates.is_empty() {
            return Err(Error::Data("empty price file".into()));
        }
        let mut missing = Vec::new();
        let mut prices = DMatrix::<f64>::zeros(dates.len(), tickers.len());
        for (i, date) in dates.iter().enumerate() {
            for (j, ticker) in tickers.iter().enumerate() {
                match cells.get(&(*date, ticker.clone())) {
                    Some(&p) => prices[(i, j)] = p,
                    None => missing.push(format!("({date}, {ticker})")),
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "missing price cells: {}",
                missing.join(", ")
            )));
        }
        PriceSeries::new(dates, tickers, prices)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    /// Row indices of the last trading day within each calendar month.
    pub fn month_end_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for i in 0..self.dates.len() {
            let is_last = match self.dates.get(i + 1) {
                None => true,
                Some(next) => {
                    (next.year(), next.month()) != (self.dates[i].year(), self.dates[i].month())
                }
            };
            if is_last {
                out.push(i);
            }
        }
        out
    }

    /// Simple returns `p_t/p_{t−1} − 1` across month-end boundaries.
    /// Row `t` covers the month ending at boundary `t + 1`.
    pub fn monthly_returns(&self) -> Result<(Vec<NaiveDate>, DMatrix<f64>)> {
        let ends = self.month_end_indices();
        if ends.len() < 2 {
            return Err(Error::Data(format!(
                "need at least 2 month boundaries, got {}",
                ends.len()
            )));
        }
        let n = self.tickers.len();
        let mut returns = DMatrix::<f64>::zeros(ends.len() - 1, n);
        let mut boundary_dates = Vec::with_capacity(ends.len() - 1);
        for t in 1..ends.len() {
            for j in 0..n {
                returns[(t - 1, j)] =
                    self.prices[(ends[t], j)] / self.prices[(ends[t - 1], j)] - 1.0;
            }
            boundary_dates.push(self.dates[ends[t]]);
        }
        Ok((boundary_dates, returns))
    }

    /// Text block of the latest prices at a boundary, for LLM prompts.
    pub fn price_snapshot(&self, row: usize) -> String {
        self.tickers
            .iter()
            .enumerate()
            .map(|(j, t)| format!("{t}: {:.2}", self.prices[(row, j)]))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Opt,
    Llm,
    LlmOpt,
    Avg,
}

/// One strategy column of the backtest. Sparse applies only to LLM-bearing
/// strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub sparse: bool,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind, sparse: bool) -> Result<Self> {
        if sparse && kind == StrategyKind::Opt {
            return Err(Error::InvalidParameter(
                "OPT has no sparse variant".into(),
            ));
        }
        Ok(StrategySpec { kind, sparse })
    }

    pub fn uses_llm(&self) -> bool {
        !matches!(self.kind, StrategyKind::Opt)
    }

    pub fn parse(name: &str) -> Result<Self> {
        let spec = match name {
            "OPT" => StrategySpec {
                kind: StrategyKind::Opt,
                sparse: false,
            },
            "LLM" => StrategySpec {
                kind: StrategyKind::Llm,
                sparse: false,
            },
            "LLM+OPT" => StrategySpec {
                kind: StrategyKind::LlmOpt,
                sparse: false,
            },
            "AVG" => StrategySpec {
                kind: StrategyKind::Avg,
                sparse: false,
            },
            "LLM_sparse" => StrategySpec {
                kind: StrategyKind::Llm,
                sparse: true,
            },
            "LLM_sparse+OPT" => StrategySpec {
                kind: StrategyKind::LlmOpt,
                sparse: true,
            },
            "AVG_sparse" => StrategySpec {
                kind: StrategyKind::Avg,
                sparse: true,
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown strategy {other:?}"
                )))
            }
        };
        Ok(spec)
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match (self.kind, self.sparse) {
            (StrategyKind::Opt, _) => "OPT",
            (StrategyKind::Llm, false) => "LLM",
            (StrategyKind::Llm, true) => "LLM_sparse",
            (StrategyKind::LlmOpt, false) => "LLM+OPT",
            (StrategyKind::LlmOpt, true) => "LLM_sparse+OPT",
            (StrategyKind::Avg, false) => "AVG",
            (StrategyKind::Avg, true) => "AVG_sparse",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub initial_capital: f64,
    /// Ridge added to the sample covariance; `None` means `1e−6·trace/n`.
    pub ridge: Option<f64>,
    /// Target return; `None` means `mean(μ)` per period.
    pub target_return: Option<f64>,
    /// Minimum number of monthly return rows before the first rebalance.
    pub min_history: usize,
    pub rho: f64,
    pub max_iterations: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub set: ConsistencySetKind,
    pub ordering: UpdateOrdering,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            initial_capital: 10_000.0,
            ridge: None,
            target_return: None,
            min_history: 2,
            rho: 1.0,
            max_iterations: 100,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            set: ConsistencySetKind::Simplex,
            ordering: UpdateOrdering::PricesFirst,
        }
    }
}

impl BacktestConfig {
    pub fn coordinator_config(&self, dim: usize) -> Result<CoordinatorConfig> {
        Ok(CoordinatorConfig {
            rho: self.rho,
            max_iterations: self.max_iterations,
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            set: self.set.with_dim(dim)?,
            ordering: self.ordering,
        })
    }
}

/// Inputs describing one rebalance period, handed to [`LlmProvider`]s.
#[derive(Debug, Clone)]
pub struct PeriodInfo {
    /// Index into the investable periods of the run, starting at 0.
    pub index: usize,
    /// Calendar label of the invested month, e.g. `2024-03`.
    pub label: String,
    pub tickers: Vec<String>,
    /// Price snapshot at the rebalance date.
    pub recent_prices: String,
}

/// Supplies the LLM-side agent for each period. The returned agent is used
/// both for the pure-LLM strategy (one proposal at zero prices) and inside
/// the consensus loop.
pub trait LlmProvider {
    fn agent_for_period(&self, period: &PeriodInfo, sparse: bool) -> Result<Box<dyn Agent>>;
}

/// Build the estimation-window model for an investable period: moments from
/// all monthly returns strictly up to the rebalance boundary.
pub fn model_for_period(
    returns: &DMatrix<f64>,
    boundary: usize,
    config: &BacktestConfig,
) -> Result<MarkowitzModel> {
    let window = returns.rows(0, boundary).into_owned();
    let (mu, sample) = estimate_moments(&window, 0.0)?;
    let ridge = config.ridge.unwrap_or_else(|| default_ridge(&sample));
    let sigma = &sample + DMatrix::identity(sample.nrows(), sample.ncols()) * ridge;
    let target = config.target_return.unwrap_or_else(|| mu.mean());
    MarkowitzModel::new(sigma, mu, target)
}

/// Per-strategy results over the investable periods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyResult {
    pub name: String,
    /// Weights per period; `None` marks a failed cell.
    pub weights: Vec<Option<DecisionVector>>,
    /// Portfolio value after each period, `values[0]` = initial capital.
    pub values: Vec<f64>,
    /// `w'Σ̂w` against the estimation-window covariance.
    pub risks: Vec<Option<f64>>,
    pub failed_periods: Vec<usize>,
    /// Periods where an AVG weight went negative (optimizer shorting).
    pub infeasible_avg_periods: Vec<usize>,
    /// Consensus traces, populated for LLM+OPT strategies.
    pub traces: Vec<Option<Vec<IterationRecord>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub tickers: Vec<String>,
    /// Calendar labels of the invested months.
    pub period_labels: Vec<String>,
    /// Return-row window `[start, end)` used for estimation in each period.
    pub estimation_windows: Vec<(usize, usize)>,
    pub initial_capital: f64,
    pub strategies: Vec<StrategyResult>,
}

/// Summary produced by [`compute_metrics`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub final_value: f64,
    pub total_return: f64,
    /// 12-period compounding.
    pub annualized_return: f64,
    pub mean_risk: Option<f64>,
    pub failed_periods: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub initial_capital: f64,
    pub periods: usize,
    pub strategies: Vec<StrategySummary>,
}

struct PeriodComputation<'a> {
    model: MarkowitzModel,
    info: PeriodInfo,
    opt: Option<Result<DecisionVector>>,
    llm: BTreeMap<bool, Result<DecisionVector>>,
    llm_opt: BTreeMap<bool, Result<(DecisionVector, Vec<IterationRecord>)>>,
    provider: Option<&'a dyn LlmProvider>,
    config: &'a BacktestConfig,
}

impl<'a> PeriodComputation<'a> {
    fn opt_weights(&mut self) -> Result<DecisionVector> {
        if self.opt.is_none() {
            self.opt = Some(self.model.solve());
        }
        clone_result(self.opt.as_ref().unwrap())
    }

    fn llm_weights(&mut self, sparse: bool) -> Result<DecisionVector> {
        if !self.llm.contains_key(&sparse) {
            let result = (|| {
                let provider = self.provider.ok_or_else(|| {
                    Error::InvalidParameter("LLM strategy requested without an LLM provider".into())
                })?;
                let agent = provider.agent_for_period(&self.info, sparse)?;
                let n = self.info.tickers.len();
                let set = self.config.set.with_dim(n)?;
                agent
                    .propose(&set.initial_point(), &DualPrice::zeros(n), self.config.rho, &set)
                    .map_err(|e| Error::for_agent(agent.id(), e))
            })();
            self.llm.insert(sparse, result);
        }
        clone_result(&self.llm[&sparse])
    }

    fn consensus_weights(&mut self, sparse: bool) -> Result<(DecisionVector, Vec<IterationRecord>)> {
        if !self.llm_opt.contains_key(&sparse) {
            let opt_start = self.opt_weights();
            let result = (|| {
                let provider = self.provider.ok_or_else(|| {
                    Error::InvalidParameter("LLM strategy requested without an LLM provider".into())
                })?;
                let llm_agent = provider.agent_for_period(&self.info, sparse)?;
                let opt_agent = MarkowitzAgent::new("opt", self.model.clone());
                let n = self.info.tickers.len();
                let coordinator = self.config.coordinator_config(n)?;
                // warm start at the optimizer's standalone plan: when the
                // LLM side already agrees with it, the loop is at its fixed
                // point immediately
                let x0 = match &opt_start {
                    Ok(w) => coordinator.set.project(w)?,
                    Err(_) => coordinator.set.initial_point(),
                };
                let result = run_consensus(
                    &[&opt_agent, llm_agent.as_ref()],
                    &coordinator,
                    &x0,
                    &[DualPrice::zeros(n), DualPrice::zeros(n)],
                )?;
                Ok((result.public, result.trace))
            })();
            self.llm_opt.insert(sparse, result);
        }
        match &self.llm_opt[&sparse] {
            Ok((w, trace)) => Ok((w.clone(), trace.clone())),
            Err(e) => Err(Error::Data(e.to_string())),
        }
    }
}

fn clone_result(r: &Result<DecisionVector>) -> Result<DecisionVector> {
    match r {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::Data(e.to_string())),
    }
}

/// Run the monthly-rebalancing backtest.
///
/// For each investable period: moments are estimated from returns strictly
/// before the rebalance boundary, each strategy's weights are computed, the
/// realized monthly return compounds the portfolio value, and risk is
/// recorded against the estimation-window covariance. Agent failures mark
/// the (strategy, period) cell failed and the value holds flat.
pub fn run_backtest(
    series: &PriceSeries,
    strategies: &[StrategySpec],
    provider: Option<&dyn LlmProvider>,
    config: &BacktestConfig,
) -> Result<BacktestReport> {
    if strategies.is_empty() {
        return Err(Error::InvalidParameter("no strategies".into()));
    }
    if config.min_history < 2 {
        return Err(Error::InvalidParameter(
            "min_history must be >= 2 for covariance estimation".into(),
        ));
    }
    if strategies.iter().any(StrategySpec::uses_llm) && provider.is_none() {
        return Err(Error::InvalidParameter(
            "LLM-bearing strategies require an LLM provider".into(),
        ));
    }
    let (boundary_dates, returns) = series.monthly_returns()?;
    let total_rows = returns.nrows();
    if total_rows <= config.min_history {
        return Err(Error::Data(format!(
            "only {total_rows} monthly returns, need more than min_history = {}",
            config.min_history
        )));
    }
    let month_ends = series.month_end_indices();

    let investable: Vec<usize> = (config.min_history..total_rows).collect();
    let period_labels: Vec<String> = investable
        .iter()
        .map(|&t| boundary_dates[t].format("%Y-%m").to_string())
        .collect();
    let estimation_windows: Vec<(usize, usize)> = investable.iter().map(|&t| (0, t)).collect();

    let mut results: Vec<StrategyResult> = strategies
        .iter()
        .map(|s| StrategyResult {
            name: s.to_string(),
            weights: Vec::new(),
            values: vec![config.initial_capital],
            risks: Vec::new(),
            failed_periods: Vec::new(),
            infeasible_avg_periods: Vec::new(),
            traces: Vec::new(),
        })
        .collect();

    for (period_index, &t) in investable.iter().enumerate() {
        let model = model_for_period(&returns, t, config)?;
        let info = PeriodInfo {
            index: period_index,
            label: period_labels[period_index].clone(),
            tickers: series.tickers().to_vec(),
            recent_prices: series.price_snapshot(month_ends[t]),
        };
        let mut computation = PeriodComputation {
            model,
            info,
            opt: None,
            llm: BTreeMap::new(),
            llm_opt: BTreeMap::new(),
            provider,
            config,
        };

        let realized = returns.row(t).transpose();
        for (spec, result) in strategies.iter().zip(&mut results) {
            let mut trace = None;
            let weights = match spec.kind {
                StrategyKind::Opt => computation.opt_weights(),
                StrategyKind::Llm => computation.llm_weights(spec.sparse),
                StrategyKind::LlmOpt => computation.consensus_weights(spec.sparse).map(|(w, tr)| {
                    trace = Some(tr);
                    w
                }),
                StrategyKind::Avg => {
                    computation.opt_weights().and_then(|opt| {
                        computation.llm_weights(spec.sparse).map(|llm| {
                            DecisionVector::new(
                                opt.as_slice()
                                    .iter()
                                    .zip(llm.as_slice())
                                    .map(|(&a, &b)| 0.5 * (a + b))
                                    .collect(),
                            )
                            .expect("average of finite weights is finite")
                        })
                    })
                }
            };
            match weights {
                Ok(w) => {
                    if spec.kind == StrategyKind::Avg
                        && w.as_slice().iter().any(|&x| x < 0.0)
                    {
                        result.infeasible_avg_periods.push(period_index);
                    }
                    let wv = DVector::from_row_slice(w.as_slice());
                    let period_return = wv.dot(&realized);
                    let value = result.values.last().unwrap() * (1.0 + period_return);
                    let risk = (wv.transpose() * computation.model.sigma() * &wv)[(0, 0)];
                    result.values.push(value);
                    result.risks.push(Some(risk));
                    result.weights.push(Some(w));
                }
                Err(e) => {
                    log::warn!(
                        "strategy {} failed in period {}: {e}",
                        result.name,
                        period_labels[period_index]
                    );
                    let value = *result.values.last().unwrap();
                    result.values.push(value);
                    result.risks.push(None);
                    result.weights.push(None);
                    result.failed_periods.push(period_index);
                }
            }
            result.traces.push(trace);
        }
    }

    Ok(BacktestReport {
        tickers: series.tickers().to_vec(),
        period_labels,
        estimation_windows,
        initial_capital: config.initial_capital,
        strategies: results,
    })
}

/// Final values, annualized returns (12-period compounding), and mean risk
/// per strategy.
pub fn compute_metrics(report: &BacktestReport) -> BacktestSummary {
    let periods = report.period_labels.len();
    let strategies = report
        .strategies
        .iter()
        .map(|s| {
            let final_value = *s.values.last().unwrap();
            let total_return = final_value / report.initial_capital - 1.0;
            let annualized_return = if periods > 0 {
                (final_value / report.initial_capital).powf(12.0 / periods as f64) - 1.0
            } else {
                0.0
            };
            let risks: Vec<f64> = s.risks.iter().flatten().copied().collect();
            let mean_risk = if risks.is_empty() {
                None
            } else {
                Some(risks.iter().sum::<f64>() / risks.len() as f64)
            };
            StrategySummary {
                name: s.name.clone(),
                final_value,
                total_return,
                annualized_return,
                mean_risk,
                failed_periods: s.failed_periods.len(),
            }
        })
        .collect();
    BacktestSummary {
        initial_capital: report.initial_capital,
        periods,
        strategies,
    }
}

impl BacktestReport {
    /// `period,strategy,value` (plus a `start` row per strategy).
    pub fn write_values_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "period,strategy,value")?;
        for s in &self.strategies {
            writeln!(w, "start,{},{}", s.name, s.values[0])?;
            for (label, value) in self.period_labels.iter().zip(&s.values[1..]) {
                writeln!(w, "{label},{},{value}", s.name)?;
            }
        }
        Ok(())
    }

    /// `period,strategy,risk`; failed cells are left empty.
    pub fn write_risks_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "period,strategy,risk")?;
        for s in &self.strategies {
            for (label, risk) in self.period_labels.iter().zip(&s.risks) {
                match risk {
                    Some(r) => writeln!(w, "{label},{},{r}", s.name)?,
                    None => writeln!(w, "{label},{},", s.name)?,
                }
            }
        }
        Ok(())
    }

    /// Long-format `period,strategy,ticker,weight`.
    pub fn write_weights_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "period,strategy,ticker,weight")?;
        for s in &self.strategies {
            for (label, weights) in self.period_labels.iter().zip(&s.weights) {
                if let Some(weights) = weights {
                    for (ticker, weight) in self.tickers.iter().zip(weights.as_slice()) {
                        writeln!(w, "{label},{},{ticker},{weight}", s.name)?;
                    }
                }
            }
        }
        Ok(())
    }
}
