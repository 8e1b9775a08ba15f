//! Acceptance suite: one test per criterion, each printing a PASS line.
//! Run with `cargo test -p solid-core --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use solid_core::backtest::{
    model_for_period, run_backtest, BacktestConfig, LlmProvider, PeriodInfo, PriceSeries,
    StrategySpec,
};
use solid_core::consensus::{ConsistencySet, ConsistencySetKind, DecisionVector, DualPrice};
use solid_core::coordinator::{run_consensus, Agent, CoordinatorConfig, UpdateOrdering};
use solid_core::llm::mock::{FixedProposalAgent, QuadraticMockAgent, ScriptedLevelsAgent};
use solid_core::llm::{levels_to_proposal, parse_response, render_levels_line, ConfidenceLevel};
use solid_core::markowitz::MarkowitzModel;
use solid_core::Result;

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    raw.qr().q()
}

/// Random SPD matrix with eigenvalues in [0.5, 2].
fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let q = random_orthogonal(rng, n);
    let d = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    &q * DMatrix::from_diagonal(&d) * q.transpose()
}

// ---------------------------------------------------------------------------
// Criterion 1: convex convergence under both orderings, against the joint
// KKT oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_convex_convergence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dims = [2usize, 5, 20];
    let rhos = [0.1, 1.0, 10.0];

    for instance in 0..50 {
        let n = dims[instance % dims.len()];
        let rho = rhos[(instance / dims.len()) % rhos.len()];
        let q1 = random_spd(&mut rng, n);
        let q2 = random_spd(&mut rng, n);
        let c1: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c2: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();

        // joint problem: (Q1 + Q2) x = Q1 c1 + Q2 c2
        let oracle = (&q1 + &q2)
            .lu()
            .solve(&(&q1 * DVector::from_row_slice(&c1) + &q2 * DVector::from_row_slice(&c2)))
            .unwrap();

        let a1 = QuadraticMockAgent::new("opt", c1.clone(), q1.clone()).unwrap();
        let a2 = QuadraticMockAgent::new("llm", c2.clone(), q2.clone()).unwrap();

        for ordering in [UpdateOrdering::PricesFirst, UpdateOrdering::PublicFirst] {
            let config = CoordinatorConfig {
                rho,
                max_iterations: 500,
                eps_abs: 1e-8,
                eps_rel: 0.0,
                set: ConsistencySet::unconstrained(n),
                ordering,
            };
            let result = run_consensus(
                &[&a1, &a2],
                &config,
                &DecisionVector::zeros(n),
                &[DualPrice::zeros(n), DualPrice::zeros(n)],
            )
            .unwrap();
            assert!(
                result.converged && result.iterations_used <= 500,
                "instance {instance} (n={n}, rho={rho}, {ordering:?}) did not converge"
            );
            let last = result.trace.last().unwrap();
            assert!(last.residuals.max_primal() < 1e-6 && last.residuals.dual < 1e-6);
            let err = result
                .public
                .as_slice()
                .iter()
                .zip(oracle.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(
                err < 1e-6,
                "instance {instance} (n={n}, rho={rho}, {ordering:?}): oracle gap {err:.3e}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("criterion 1 (convex convergence, both orderings, KKT oracle): PASS ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// Criterion 2: bitwise fixed point at an agreement state.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_fixed_point_exactness() {
    for set in [ConsistencySet::unconstrained(2), ConsistencySet::simplex(2)] {
        let x0 = DecisionVector::new(vec![0.5, 0.5]).unwrap();
        let echo_a = FixedProposalAgent::new("a", x0.clone());
        let echo_b = FixedProposalAgent::new("b", x0.clone());
        let lambda0 = [
            DualPrice::new(vec![0.3, -0.2]).unwrap(),
            DualPrice::new(vec![-0.3, 0.2]).unwrap(),
        ];
        let config = CoordinatorConfig {
            rho: 1.0,
            max_iterations: 1,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            set,
            ordering: UpdateOrdering::PricesFirst,
        };
        let result = run_consensus(&[&echo_a, &echo_b], &config, &x0, &lambda0).unwrap();
        assert_eq!(result.public.as_slice(), x0.as_slice(), "public moved");
        for (new, old) in result.prices.iter().zip(&lambda0) {
            assert_eq!(new.as_slice(), old.as_slice(), "prices moved");
        }
        assert_eq!(result.trace[0].residuals.max_primal(), 0.0);
        assert_eq!(result.trace[0].residuals.dual, 0.0);
    }
    println!("criterion 2 (agreement fixed point is bitwise stationary): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 3: Markowitz correctness against a feasible-subspace grid oracle.
// ---------------------------------------------------------------------------

/// Orthonormal basis of the null space of the constraint rows {μ, 1}, plus a
/// particular solution of {x'μ = p, x'1 = 1}.
struct FeasibleSubspace {
    particular: DVector<f64>,
    basis: Vec<DVector<f64>>,
}

fn feasible_subspace(mu: &DVector<f64>, p: f64) -> FeasibleSubspace {
    let n = mu.len();
    let a = DMatrix::from_fn(2, n, |i, j| if i == 0 { mu[j] } else { 1.0 });
    let b = DVector::from_row_slice(&[p, 1.0]);
    let gram = &a * a.transpose();
    let particular = a.transpose() * gram.lu().solve(&b).unwrap();

    // Gram-Schmidt: orthonormalize the constraint rows, then sweep the
    // standard basis for the remaining directions.
    let mut frame: Vec<DVector<f64>> = Vec::new();
    for row in [a.row(0).transpose(), a.row(1).transpose()] {
        let mut v = row;
        for f in &frame {
            let proj = f.dot(&v);
            v -= f * proj;
        }
        if v.norm() > 1e-10 {
            let normalized = v.normalize();
            frame.push(normalized);
        }
    }
    let constraint_count = frame.len();
    for i in 0..n {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        for f in &frame {
            let proj = f.dot(&v);
            v -= f * proj;
        }
        if v.norm() > 1e-8 {
            frame.push(v.normalize());
        }
    }
    FeasibleSubspace {
        particular,
        basis: frame.split_off(constraint_count),
    }
}

/// Zooming grid search over the feasible subspace (dimension ≤ 2 here).
fn grid_minimize(
    objective: impl Fn(&DVector<f64>) -> f64,
    subspace: &FeasibleSubspace,
) -> DVector<f64> {
    let dim = subspace.basis.len();
    let point = |coords: &[f64]| {
        let mut x = subspace.particular.clone();
        for (c, b) in coords.iter().zip(&subspace.basis) {
            x += b * *c;
        }
        x
    };
    if dim == 0 {
        return subspace.particular.clone();
    }
    let mut center = vec![0.0; dim];
    let mut range = 20.0;
    let steps = 20i64;
    for _ in 0..14 {
        let mut best = (f64::INFINITY, center.clone());
        let mut idx = vec![-steps; dim];
        loop {
            let coords: Vec<f64> = center
                .iter()
                .zip(&idx)
                .map(|(c, &i)| c + i as f64 * range / steps as f64)
                .collect();
            let value = objective(&point(&coords));
            if value < best.0 {
                best = (value, coords);
            }
            // odometer over the grid
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] <= steps {
                    break;
                }
                idx[d] = -steps;
                d += 1;
                if d == dim {
                    break;
                }
            }
            if d == dim {
                break;
            }
        }
        center = best.1;
        range *= 0.2;
    }
    point(&center)
}

fn random_model(rng: &mut ChaCha8Rng, n: usize) -> MarkowitzModel {
    loop {
        let sigma = random_spd(rng, n);
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-0.1..0.2));
        let spread = mu.max() - mu.min();
        if spread < 0.02 {
            continue;
        }
        let p = rng.random_range(mu.min()..mu.max());
        if let Ok(model) = MarkowitzModel::new(sigma, mu, p) {
            return model;
        }
    }
}

fn feasibility_and_stationarity(model: &MarkowitzModel, w: &DecisionVector) -> (f64, f64) {
    let wv = DVector::from_row_slice(w.as_slice());
    let feas = (model.mu().dot(&wv) - model.target_return())
        .abs()
        .max((wv.sum() - 1.0).abs());
    let gradient = model.sigma() * &wv;
    let subspace = feasible_subspace(model.mu(), model.target_return());
    let stat = subspace
        .basis
        .iter()
        .map(|b| b.dot(&gradient).abs())
        .fold(0.0, f64::max);
    (feas, stat)
}

#[test]
fn criterion_3_markowitz_correctness() {
    let start = Instant::now();

    // symmetric two-asset anchor
    let anchor = MarkowitzModel::new(
        DMatrix::identity(2, 2),
        DVector::from_row_slice(&[0.1, 0.2]),
        0.15,
    )
    .unwrap()
    .solve()
    .unwrap();
    let expected = DecisionVector::new(vec![0.5, 0.5]).unwrap();
    assert!(anchor.distance(&expected).unwrap() <= 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for instance in 0..100 {
        let n = 2 + instance % 3;
        let model = random_model(&mut rng, n);
        let w = model.solve().unwrap();

        let (feas, stat) = feasibility_and_stationarity(&model, &w);
        assert!(feas <= 1e-9, "instance {instance}: feasibility {feas:.3e}");
        assert!(stat <= 1e-9, "instance {instance}: stationarity {stat:.3e}");

        let subspace = feasible_subspace(model.mu(), model.target_return());
        let sigma = model.sigma().clone();
        let oracle = grid_minimize(|x| 0.5 * (x.transpose() * &sigma * x)[(0, 0)], &subspace);
        let gap = oracle
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 1e-4, "instance {instance}: oracle gap {gap:.3e}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 3 (Markowitz anchor + 100 grid-oracle instances): PASS ({elapsed:?})");
}

// ---------------------------------------------------------------------------
// Criterion 4: augmented-subproblem limits.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_augmented_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for instance in 0..20 {
        let n = 2 + instance % 3;
        let model = random_model(&mut rng, n);
        let base = model.solve().unwrap();

        // rho = 0, lambda = 0 reduces to the plain solve
        let reduced = model
            .propose_augmented(&DualPrice::zeros(n), &DecisionVector::zeros(n), 0.0)
            .unwrap();
        let gap = base.distance(&reduced).unwrap();
        assert!(gap < 1e-10, "instance {instance}: reduction gap {gap:.3e}");

        // rho = 1e6 pins to the constraint-plane projection of x_prev
        let x_prev =
            DecisionVector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let lambda =
            DualPrice::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let pinned = model.propose_augmented(&lambda, &x_prev, 1e6).unwrap();
        let a = DMatrix::from_fn(2, n, |i, j| if i == 0 { model.mu()[j] } else { 1.0 });
        let b = DVector::from_row_slice(&[model.target_return(), 1.0]);
        let xp = DVector::from_row_slice(x_prev.as_slice());
        let gram = &a * a.transpose();
        let projection = &xp - a.transpose() * gram.lu().solve(&(&a * &xp - &b)).unwrap();
        let gap = pinned
            .as_slice()
            .iter()
            .zip(projection.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(gap < 1e-3, "instance {instance}: penalty limit gap {gap:.3e}");
    }
    println!("criterion 4 (augmented limits: rho=0 reduction, rho=1e6 pinning): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 5: confidence pipeline.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_confidence_pipeline() {
    assert_eq!(ConfidenceLevel::VeryHigh.value(), 0.6);
    assert_eq!(ConfidenceLevel::Neutral.value(), 0.3);
    assert_eq!(ConfidenceLevel::VeryLow.value(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10usize);
        let tickers: Vec<String> = (0..n).map(|i| format!("TK{i}")).collect();
        let map: BTreeMap<String, ConfidenceLevel> = tickers
            .iter()
            .map(|t| {
                let level = ConfidenceLevel::ALL[rng.random_range(0..7usize)];
                (t.clone(), level)
            })
            .collect();
        let line = render_levels_line(&tickers, &map);
        let parsed = parse_response(&line, &tickers).unwrap();
        assert_eq!(parsed, map);

        let sparse = rng.random_range(0..2) == 1;
        let weights = levels_to_proposal(&tickers, &map, sparse).unwrap();
        let sum: f64 = weights.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        assert!(weights.as_slice().iter().all(|&w| w >= 0.0));
    }
    println!("criterion 5 (confidence render/parse round trip + simplex proposals): PASS");
}

// ---------------------------------------------------------------------------
// Criteria 6 and 7: backtest determinism, self-financing, causality, and the
// consensus-equals-OPT degenerate run.
// ---------------------------------------------------------------------------

/// Deterministic 13-month, 4-ticker daily price set.
fn synthetic_series() -> PriceSeries {
    let tickers = ["ALFA", "BRAV", "CHAR", "DELT"];
    let drift = [0.010, 0.013, 0.007, 0.011];
    let amp = [0.030, 0.024, 0.036, 0.027];
    let phase = [0.0, 1.3, 2.6, 3.9];
    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut level = [100.0f64, 80.0, 120.0, 95.0];
    for m in 0..13u32 {
        let year = 2024 + (m / 12) as i32;
        let month = m % 12 + 1;
        for day in [8u32, 22] {
            dates.push(NaiveDate::from_ymd_opt(year, month, day).unwrap());
            rows.push(level.to_vec());
        }
        for j in 0..4 {
            let r = drift[j] + amp[j] * ((m as f64) * 0.9 + phase[j]).sin();
            level[j] *= 1.0 + r;
        }
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    PriceSeries::new(
        dates,
        tickers.iter().map(|s| s.to_string()).collect(),
        DMatrix::from_row_slice(26, 4, &flat),
    )
    .unwrap()
}

/// Scripted per-period levels, a deterministic function of the period index.
struct ScriptedProvider;

impl LlmProvider for ScriptedProvider {
    fn agent_for_period(&self, period: &PeriodInfo, sparse: bool) -> Result<Box<dyn Agent>> {
        let levels: BTreeMap<String, ConfidenceLevel> = period
            .tickers
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let level = ConfidenceLevel::ALL[(period.index + 2 * j) % 7];
                (t.clone(), level)
            })
            .collect();
        Ok(Box::new(ScriptedLevelsAgent::new(
            "llm-scripted",
            period.tickers.clone(),
            vec![levels],
            sparse,
        )?))
    }
}

#[test]
fn criterion_6_backtest_determinism_and_self_financing() {
    let series = synthetic_series();
    let strategies: Vec<StrategySpec> = ["OPT", "LLM", "LLM+OPT", "AVG", "LLM_sparse", "AVG_sparse"]
        .iter()
        .map(|s| StrategySpec::parse(s).unwrap())
        .collect();
    let config = BacktestConfig::default();

    let mut serialized = Vec::new();
    for _ in 0..3 {
        let report = run_backtest(&series, &strategies, Some(&ScriptedProvider), &config).unwrap();
        serialized.push(serde_json::to_string(&report).unwrap());
    }
    assert_eq!(serialized[0], serialized[1], "run 1 vs 2 differ");
    assert_eq!(serialized[1], serialized[2], "run 2 vs 3 differ");

    let report = run_backtest(&series, &strategies, Some(&ScriptedProvider), &config).unwrap();
    let (_, returns) = series.monthly_returns().unwrap();

    // independent compounding oracle over the reported weights
    for strategy in &report.strategies {
        assert!(strategy.failed_periods.is_empty(), "{} failed", strategy.name);
        let mut value = config.initial_capital;
        for (i, t) in (config.min_history..returns.nrows()).enumerate() {
            let w = strategy.weights[i].as_ref().unwrap();
            let period_return: f64 = w
                .as_slice()
                .iter()
                .zip(returns.row(t).iter())
                .map(|(&wi, &ri)| wi * ri)
                .sum();
            value *= 1.0 + period_return;
            assert!(
                (strategy.values[i + 1] - value).abs() <= 1e-9,
                "{} period {i}: {} vs oracle {value}",
                strategy.name,
                strategy.values[i + 1]
            );
        }
    }

    // causality: estimation windows end at the rebalance boundary
    for (i, &(start, end)) in report.estimation_windows.iter().enumerate() {
        assert_eq!(start, 0);
        assert_eq!(end, config.min_history + i, "window {i} looks ahead");
    }
    println!("criterion 6 (bitwise-stable backtest, compounding oracle, causality): PASS");
}

/// Proposes exactly the optimizer's standalone solution for each period.
struct MirrorsOptProvider {
    returns: DMatrix<f64>,
    config: BacktestConfig,
}

impl LlmProvider for MirrorsOptProvider {
    fn agent_for_period(&self, period: &PeriodInfo, _sparse: bool) -> Result<Box<dyn Agent>> {
        let boundary = self.config.min_history + period.index;
        let weights = model_for_period(&self.returns, boundary, &self.config)?.solve()?;
        Ok(Box::new(FixedProposalAgent::new("llm-mirror", weights)))
    }
}

#[test]
fn criterion_7_consensus_equals_opt() {
    let series = synthetic_series();
    let config = BacktestConfig {
        set: ConsistencySetKind::Unconstrained,
        ridge: Some(1e-6),
        ..BacktestConfig::default()
    };
    let (_, returns) = series.monthly_returns().unwrap();
    let provider = MirrorsOptProvider {
        returns,
        config: config.clone(),
    };
    let strategies = [
        StrategySpec::parse("OPT").unwrap(),
        StrategySpec::parse("LLM+OPT").unwrap(),
    ];
    let report = run_backtest(&series, &strategies, Some(&provider), &config).unwrap();
    let [opt, consensus] = &report.strategies[..] else {
        panic!("expected two strategies")
    };
    for i in 0..report.period_labels.len() {
        let o = opt.weights[i].as_ref().unwrap();
        let c = consensus.weights[i].as_ref().unwrap();
        let gap = o
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 1e-6, "period {i}: weight gap {gap:.3e}");
        let trace = consensus.traces[i].as_ref().unwrap();
        assert!(trace.len() <= 2, "period {i}: {} iterations", trace.len());
    }
    println!("criterion 7 (mirrored agent: consensus = OPT in <= 2 iterations): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 8: simplex projection at scale.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_simplex_projection() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    for _ in 0..10_000 {
        let n = rng.random_range(2..=12usize);
        let set = ConsistencySet::simplex(n);
        let v =
            DecisionVector::new((0..n).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let p = set.project(&v).unwrap();

        let sum: f64 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        assert!(p.as_slice().iter().all(|&x| x >= -1e-12));

        let twice = set.project(&p).unwrap();
        assert!(p.distance(&twice).unwrap() <= 1e-12);

        // contraction toward an arbitrary simplex member
        let member_raw =
            DecisionVector::new((0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let member = set.project(&member_raw).unwrap();
        assert!(p.distance(&member).unwrap() <= v.distance(&member).unwrap() + 1e-12);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("criterion 8 (10k simplex projections: membership, idempotence, contraction): PASS ({elapsed:?})");
}
