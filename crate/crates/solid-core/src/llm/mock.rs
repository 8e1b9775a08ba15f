//! Deterministic stand-ins for the LLM agent: a convex quadratic maximizer
//! for convergence testing, a scripted level-replay agent, and a fixed
//! proposal agent for agreement scenarios.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use super::levels::ConfidenceLevel;
use super::parse::levels_to_proposal;
use crate::consensus::{ConsistencySet, DecisionVector, DualPrice};
use crate::coordinator::Agent;
use crate::{Error, Result};

/// Exact maximizer of `−½(x−c)'Q(x−c) + x'λ − (ρ/2)‖x − x_prev‖²`, i.e.
/// `x = (Q + ρI)⁻¹(Qc + λ + ρ·x_prev)`.
pub struct QuadraticMockAgent {
    id: String,
    center: DVector<f64>,
    q: DMatrix<f64>,
}

impl QuadraticMockAgent {
    pub fn new(id: impl Into<String>, center: Vec<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: q.nrows().max(q.ncols()),
            });
        }
        if (&q - q.transpose()).amax() > 1e-10 {
            return Err(Error::InvalidParameter("Q must be symmetric".into()));
        }
        if q.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("Q must be positive definite".into()));
        }
        Ok(QuadraticMockAgent {
            id: id.into(),
            center: DVector::from_vec(center),
            q,
        })
    }

    /// With identity weight the agent reduces to a pull toward its center.
    pub fn isotropic(id: impl Into<String>, center: Vec<f64>) -> Result<Self> {
        let n = center.len();
        Self::new(id, center, DMatrix::identity(n, n))
    }
}

impl Agent for QuadraticMockAgent {
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
        let n = self.center.len();
        if public_prev.len() != n || price_prev.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: public_prev.len().min(price_prev.len()),
            });
        }
        if !(rho >= 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be >= 0, got {rho}")));
        }
        let mut lhs = self.q.clone();
        for i in 0..n {
            lhs[(i, i)] += rho;
        }
        let rhs = &self.q * &self.center
            + DVector::from_row_slice(price_prev.as_slice())
            + DVector::from_row_slice(public_prev.as_slice()) * rho;
        let x = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidParameter("singular augmented system".into()))?;
        DecisionVector::new(x.iter().copied().collect())
    }
}

/// Replays a fixed per-iteration schedule of confidence-level maps, ignoring
/// prices and the public plan: the discretized, price-insensitive worst case.
pub struct ScriptedLevelsAgent {
    id: String,
    tickers: Vec<String>,
    schedule: Vec<BTreeMap<String, ConfidenceLevel>>,
    sparse_mode: bool,
    calls: AtomicUsize,
}

impl ScriptedLevelsAgent {
    pub fn new(
        id: impl Into<String>,
        tickers: Vec<String>,
        schedule: Vec<BTreeMap<String, ConfidenceLevel>>,
        sparse_mode: bool,
    ) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::InvalidParameter("empty schedule".into()));
        }
        Ok(ScriptedLevelsAgent {
            id: id.into(),
            tickers,
            schedule,
            sparse_mode,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl Agent for ScriptedLevelsAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(
        &self,
        _public_prev: &DecisionVector,
        _price_prev: &DualPrice,
        _rho: f64,
        _set: &ConsistencySet,
    ) -> Result<DecisionVector> {
        let k = self.calls.fetch_add(1, Ordering::SeqCst);
        let levels = &self.schedule[k.min(self.schedule.len() - 1)];
        levels_to_proposal(&self.tickers, levels, self.sparse_mode)
    }
}

/// Always proposes the same vector.
pub struct FixedProposalAgent {
    id: String,
    proposal: DecisionVector,
}

impl FixedProposalAgent {
    pub fn new(id: impl Into<String>, proposal: DecisionVector) -> Self {
        FixedProposalAgent {
            id: id.into(),
            proposal,
        }
    }
}

impl Agent for FixedProposalAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn propose(
        &self,
        _public_prev: &DecisionVector,
        _price_prev: &DualPrice,
        _rho: f64,
        _set: &ConsistencySet,
    ) -> Result<DecisionVector> {
        Ok(self.proposal.clone())
    }
}
