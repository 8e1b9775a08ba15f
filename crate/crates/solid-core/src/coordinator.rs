//! The consensus loop: dispatch augmented subproblems to agents, update dual
//! prices, reconcile the public decision, track residuals, and stop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::consensus::{
    residuals, ConsistencySet, DecisionVector, DualPrice, IterationRecord, ResidualRecord,
};
use crate::{Error, Result};

/// Contract every agent fulfils: given the prior public decision, its prior
/// dual price, the step size, and the feasible set, return a proposal.
/// Proposals need not lie in the set; the coordinator reconciles.
pub trait Agent {
    fn id(&self) -> &str;

    fn propose(
        &self,
        public_prev: &DecisionVector,
        price_prev: &DualPrice,
        rho: f64,
        set: &ConsistencySet,
    ) -> Result<DecisionVector>;
}

/// Order of the price and public-decision updates within one iteration.
///
/// `PricesFirst` reprices against the previous public decision and then
/// reconciles with the fresh prices. `PublicFirst` reconciles with the stale
/// prices and then reprices against the new public decision (the classic
/// consensus-ADMM ordering with the dual step last).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrdering {
    #[default]
    PricesFirst,
    PublicFirst,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinatorConfig {
    pub rho: f64,
    pub max_iterations: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub set: ConsistencySet,
    #[serde(default)]
    pub ordering: UpdateOrdering,
}

impl CoordinatorConfig {
    pub fn new(set: ConsistencySet) -> Self {
        CoordinatorConfig {
            rho: 1.0,
            max_iterations: 500,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            set,
            ordering: UpdateOrdering::PricesFirst,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must be > 0, got {}",
                self.rho
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.eps_abs > 0.0) || !(self.eps_rel >= 0.0) {
            return Err(Error::InvalidParameter(
                "eps_abs must be > 0 and eps_rel >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Output of [`run_consensus`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub public: DecisionVector,
    pub prices: Vec<DualPrice>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl ConsensusResult {
    /// Write the trace as newline-delimited JSON, one record per iteration.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for record in &self.trace {
            serde_json::to_writer(&mut w, record)
                .map_err(|e| Error::Data(format!("trace serialization: {e}")))?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Dual price update: `λ' = λ − ρ(x̃ − x_ref)`.
pub fn update_price(
    prev_price: &DualPrice,
    proposal: &DecisionVector,
    public_ref: &DecisionVector,
    rho: f64,
) -> Result<DualPrice> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be > 0, got {rho}")));
    }
    let n = prev_price.len();
    if proposal.len() != n || public_ref.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: proposal.len().min(public_ref.len()),
        });
    }
    let values = prev_price
        .as_slice()
        .iter()
        .zip(proposal.as_slice().iter().zip(public_ref.as_slice()))
        .map(|(&l, (&p, &x))| l - rho * (p - x))
        .collect();
    DualPrice::new(values)
}

/// Public-decision update: minimize `x'(Σλ) + (ρ/2)Σ‖x̃_a − x‖²` over the
/// set. The unconstrained minimizer is `mean(x̃) − Σλ/(ρ·A)`; the isotropic
/// quadratic makes the constrained solution its Euclidean projection.
pub fn update_public(
    proposals: &[DecisionVector],
    prices: &[DualPrice],
    rho: f64,
    set: &ConsistencySet,
) -> Result<DecisionVector> {
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be > 0, got {rho}")));
    }
    if proposals.len() < 2 || proposals.len() != prices.len() {
        return Err(Error::InvalidParameter(format!(
            "need >= 2 agents with matching prices, got {} proposals / {} prices",
            proposals.len(),
            prices.len()
        )));
    }
    let n = set.dim();
    let count = proposals.len() as f64;
    let mut free = vec![0.0f64; n];
    for p in proposals {
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: p.len(),
            });
        }
        for (acc, &v) in free.iter_mut().zip(p.as_slice()) {
            *acc += v;
        }
    }
    for acc in free.iter_mut() {
        *acc /= count;
    }
    for price in prices {
        if price.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: price.len(),
            });
        }
        for (acc, &l) in free.iter_mut().zip(price.as_slice()) {
            *acc -= l / (rho * count);
        }
    }
    set.project(&DecisionVector::new(free)?)
}

/// Run the consensus loop until the iteration cap or the residual thresholds.
///
/// Per iteration: every agent proposes against `x^(k−1)`, `λ^(k−1)`; prices
/// and public decision update per the configured [`UpdateOrdering`];
/// residuals are recorded. Stopping uses the absolute/relative rule
/// `ε_pri = √n·ε_abs + ε_rel·max(‖x̃_a‖, ‖x‖)` and
/// `ε_dual = √n·ε_abs + ε_rel·‖Σλ‖`.
pub fn run_consensus(
    agents: &[&dyn Agent],
    config: &CoordinatorConfig,
    x0: &DecisionVector,
    lambda0: &[DualPrice],
) -> Result<ConsensusResult> {
    config.validate()?;
    let n = config.set.dim();
    if agents.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need >= 2 agents, got {}",
            agents.len()
        )));
    }
    if agents.len() != lambda0.len() {
        return Err(Error::InvalidParameter(format!(
            "{} agents but {} initial prices",
            agents.len(),
            lambda0.len()
        )));
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    for l in lambda0 {
        if l.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: l.len(),
            });
        }
    }

    let mut public = x0.clone();
    let mut prices: Vec<DualPrice> = lambda0.to_vec();
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut converged = false;

    for k in 1..=config.max_iterations {
        let mut proposals: Vec<DecisionVector> = Vec::with_capacity(agents.len());
        for (agent, price) in agents.iter().zip(&prices) {
            let proposal = agent
                .propose(&public, price, config.rho, &config.set)
                .map_err(|e| Error::for_agent(agent.id(), e))?;
            if proposal.len() != n {
                return Err(Error::for_agent(
                    agent.id(),
                    Error::DimensionMismatch {
                        expected: n,
                        actual: proposal.len(),
                    },
                ));
            }
            proposals.push(proposal);
        }

        let (new_prices, public_new) = match config.ordering {
            UpdateOrdering::PricesFirst => {
                let new_prices = proposals
                    .iter()
                    .zip(&prices)
                    .map(|(p, l)| update_price(l, p, &public, config.rho))
                    .collect::<Result<Vec<_>>>()?;
                let public_new = update_public(&proposals, &new_prices, config.rho, &config.set)?;
                (new_prices, public_new)
            }
            UpdateOrdering::PublicFirst => {
                let public_new = update_public(&proposals, &prices, config.rho, &config.set)?;
                let new_prices = proposals
                    .iter()
                    .zip(&prices)
                    .map(|(p, l)| update_price(l, p, &public_new, config.rho))
                    .collect::<Result<Vec<_>>>()?;
                (new_prices, public_new)
            }
        };

        let res = residuals(&proposals, &public_new, &public, config.rho)?;

        prices = new_prices;
        public = public_new;

        trace.push(IterationRecord {
            k,
            proposals,
            prices: prices.clone(),
            public: public.clone(),
            residuals: res,
        });

        if below_thresholds(&res, &trace[trace.len() - 1], &public, &prices, config) {
            converged = true;
            break;
        }
    }

    let iterations_used = trace.len();
    Ok(ConsensusResult {
        public,
        prices,
        trace,
        converged,
        iterations_used,
    })
}

fn below_thresholds(
    res: &ResidualRecord,
    record: &IterationRecord,
    public: &DecisionVector,
    prices: &[DualPrice],
    config: &CoordinatorConfig,
) -> bool {
    let n = config.set.dim() as f64;
    let sqrt_n = n.sqrt();
    let proposal_scale = record
        .proposals
        .iter()
        .map(|p| p.norm())
        .fold(public.norm(), f64::max);
    let eps_pri = sqrt_n * config.eps_abs + config.eps_rel * proposal_scale;
    let price_sum_norm = {
        let dim = public.len();
        let mut sum = vec![0.0f64; dim];
        for l in prices {
            for (acc, &v) in sum.iter_mut().zip(l.as_slice()) {
                *acc += v;
            }
        }
        sum.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let eps_dual = sqrt_n * config.eps_abs + config.eps_rel * price_sum_norm;
    res.max_primal() <= eps_pri && res.dual <= eps_dual
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dv(values: &[f64]) -> DecisionVector {
        DecisionVector::new(values.to_vec()).unwrap()
    }

    fn dp(values: &[f64]) -> DualPrice {
        DualPrice::new(values.to_vec()).unwrap()
    }

    /// Maximizes −½‖x−c‖² plus the augmented terms.
    struct Pull {
        id: String,
        center: Vec<f64>,
    }

    impl Agent for Pull {
        fn id(&self) -> &str {
            &self.id
        }

        fn propose(
            &self,
            public_prev: &DecisionVector,
            price_prev: &DualPrice,
            rho: f64,
            _set: &ConsistencySet,
        ) -> Result<DecisionVector> {
            // (I + ρI)⁻¹ (c + λ + ρ x_prev)
            let values = self
                .center
                .iter()
                .zip(price_prev.as_slice().iter().zip(public_prev.as_slice()))
                .map(|(&c, (&l, &x))| (c + l + rho * x) / (1.0 + rho))
                .collect();
            DecisionVector::new(values)
        }
    }

    #[test]
    fn update_price_zero_deviation_is_identity() {
        let l = dp(&[0.0, 0.0]);
        let x = dv(&[0.3, 0.7]);
        let out = update_price(&l, &x, &x, 1.0).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn update_price_hand_values() {
        let out = update_price(
            &dp(&[0.1, -0.2]),
            &dv(&[0.3, 0.4]),
            &dv(&[0.5, 0.2]),
            0.5,
        )
        .unwrap();
        assert_abs_diff_eq!(out[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -0.3, epsilon = 1e-15);

        let out = update_price(&dp(&[0.0, 0.0]), &dv(&[1.0, 0.0]), &dv(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(out.as_slice(), &[-1.0, 0.0]);
    }

    #[test]
    fn update_public_agreement_fixed_point() {
        let v = dv(&[0.4, 0.6]);
        let out = update_public(
            &[v.clone(), v.clone()],
            &[dp(&[0.3, -0.1]), dp(&[-0.3, 0.1])],
            1.0,
            &ConsistencySet::simplex(2),
        )
        .unwrap();
        assert_abs_diff_eq!(out[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn update_public_hand_values() {
        let out = update_public(
            &[dv(&[0.6, 0.4]), dv(&[0.2, 0.8])],
            &[dp(&[0.0, 0.0]), dp(&[0.0, 0.0])],
            1.0,
            &ConsistencySet::unconstrained(2),
        )
        .unwrap();
        assert_abs_diff_eq!(out[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.6, epsilon = 1e-15);

        let out = update_public(
            &[dv(&[0.5, 0.5]), dv(&[0.5, 0.5])],
            &[dp(&[0.4, 0.0]), dp(&[0.0, 0.0])],
            2.0,
            &ConsistencySet::unconstrained(2),
        )
        .unwrap();
        assert_abs_diff_eq!(out[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn update_public_rejects_single_agent() {
        let v = dv(&[1.0]);
        assert!(update_public(&[v], &[dp(&[0.0])], 1.0, &ConsistencySet::unconstrained(1)).is_err());
    }

    #[test]
    fn consensus_at_optimum_converges_immediately() {
        let c = vec![0.2, 0.8];
        let a = Pull {
            id: "opt".into(),
            center: c.clone(),
        };
        let b = Pull {
            id: "llm".into(),
            center: c.clone(),
        };
        let config = CoordinatorConfig::new(ConsistencySet::unconstrained(2));
        let result = run_consensus(
            &[&a, &b],
            &config,
            &dv(&c),
            &[DualPrice::zeros(2), DualPrice::zeros(2)],
        )
        .unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations_used, 1);
        assert_eq!(result.public.as_slice(), &c[..]);
        assert_eq!(result.trace[0].residuals.max_primal(), 0.0);
        assert_eq!(result.trace[0].residuals.dual, 0.0);
    }

    #[test]
    fn consensus_of_two_pulls_meets_in_the_middle() {
        let a = Pull {
            id: "opt".into(),
            center: vec![1.0, 0.0],
        };
        let b = Pull {
            id: "llm".into(),
            center: vec![0.0, 1.0],
        };
        for set in [ConsistencySet::unconstrained(2), ConsistencySet::simplex(2)] {
            for ordering in [UpdateOrdering::PricesFirst, UpdateOrdering::PublicFirst] {
                let mut config = CoordinatorConfig::new(set.clone());
                config.eps_abs = 1e-10;
                config.eps_rel = 0.0;
                config.ordering = ordering;
                let result = run_consensus(
                    &[&a, &b],
                    &config,
                    &set.initial_point(),
                    &[DualPrice::zeros(2), DualPrice::zeros(2)],
                )
                .unwrap();
                assert!(result.converged, "{set:?} {ordering:?}");
                assert_abs_diff_eq!(result.public[0], 0.5, epsilon = 1e-6);
                assert_abs_diff_eq!(result.public[1], 0.5, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn price_update_is_conserved_in_trace() {
        let a = Pull {
            id: "opt".into(),
            center: vec![1.0, 0.0],
        };
        let b = Pull {
            id: "llm".into(),
            center: vec![0.0, 1.0],
        };
        let config = CoordinatorConfig::new(ConsistencySet::unconstrained(2));
        let x0 = DecisionVector::zeros(2);
        let result = run_consensus(
            &[&a, &b],
            &config,
            &x0,
            &[DualPrice::zeros(2), DualPrice::zeros(2)],
        )
        .unwrap();
        let mut prev_public = x0;
        let mut prev_prices = vec![DualPrice::zeros(2), DualPrice::zeros(2)];
        for record in &result.trace {
            for ((prev, proposal), price) in
                prev_prices.iter().zip(&record.proposals).zip(&record.prices)
            {
                let expected =
                    update_price(prev, proposal, &prev_public, config.rho).unwrap();
                assert_eq!(expected.as_slice(), price.as_slice());
            }
            // residuals recompute identically from the record's own fields
            let recomputed = residuals(
                &record.proposals,
                &record.public,
                &prev_public,
                config.rho,
            )
            .unwrap();
            assert_eq!(recomputed, record.residuals);
            prev_public = record.public.clone();
            prev_prices = record.prices.clone();
        }
        assert_eq!(result.trace.len(), result.iterations_used);
    }

    #[test]
    fn failing_agent_is_attributed() {
        struct Broken;
        impl Agent for Broken {
            fn id(&self) -> &str {
                "broken"
            }
            fn propose(
                &self,
                _: &DecisionVector,
                _: &DualPrice,
                _: f64,
                _: &ConsistencySet,
            ) -> Result<DecisionVector> {
                Err(Error::Transport("boom".into()))
            }
        }
        let ok = Pull {
            id: "opt".into(),
            center: vec![0.0, 0.0],
        };
        let config = CoordinatorConfig::new(ConsistencySet::unconstrained(2));
        let err = run_consensus(
            &[&ok, &Broken],
            &config,
            &DecisionVector::zeros(2),
            &[DualPrice::zeros(2), DualPrice::zeros(2)],
        )
        .unwrap_err();
        match err {
            Error::Agent { agent, .. } => assert_eq!(agent, "broken"),
            other => panic!("expected agent attribution, got {other:?}"),
        }
    }

    #[test]
    fn trace_round_trips_as_ndjson() {
        let a = Pull {
            id: "opt".into(),
            center: vec![1.0, 0.0],
        };
        let b = Pull {
            id: "llm".into(),
            center: vec![0.0, 1.0],
        };
        let config = CoordinatorConfig::new(ConsistencySet::unconstrained(2));
        let result = run_consensus(
            &[&a, &b],
            &config,
            &DecisionVector::zeros(2),
            &[DualPrice::zeros(2), DualPrice::zeros(2)],
        )
        .unwrap();
        let mut buf = Vec::new();
        result.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), result.iterations_used);
        let first: IterationRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first, result.trace[0]);
    }
}
