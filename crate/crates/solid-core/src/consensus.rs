//! Shared domain types: decision vectors, dual prices, the consistency set
//! with its Euclidean projection, and residual bookkeeping.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Membership tolerance used by [`ConsistencySet::contains`] and asserted by
/// projection outputs.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

fn check_finite(values: &[f64]) -> Result<()> {
    for (index, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(())
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// An allocation over `n` assets (or abstract activity levels): the public
/// decision `x` and agent proposals both live here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DecisionVector(Vec<f64>);

/// Per-agent price vector paid or charged for activity deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DualPrice(Vec<f64>);

macro_rules! vector_newtype {
    ($name:ident) => {
        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                check_finite(&values)?;
                Ok(Self(values))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn norm(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
        }

        impl std::ops::Index<usize> for $name {
            type Output = f64;
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

vector_newtype!(DecisionVector);
vector_newtype!(DualPrice);

impl DecisionVector {
    /// Euclidean distance to another vector of the same dimension.
    pub fn distance(&self, other: &DecisionVector) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

/// The feasible region the public decision must belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConsistencySet {
    Unconstrained { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Simplex { dim: usize },
}

impl ConsistencySet {
    pub fn unconstrained(dim: usize) -> Self {
        ConsistencySet::Unconstrained { dim }
    }

    pub fn simplex(dim: usize) -> Self {
        ConsistencySet::Simplex { dim }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        check_finite(&lower)?;
        check_finite(&upper)?;
        for (index, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if lo > hi {
                return Err(Error::InvertedBounds {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(ConsistencySet::Box { lower, upper })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConsistencySet::Unconstrained { dim } => *dim,
            ConsistencySet::Box { lower, .. } => lower.len(),
            ConsistencySet::Simplex { dim } => *dim,
        }
    }

    /// Membership predicate at [`MEMBERSHIP_TOL`].
    pub fn contains(&self, v: &DecisionVector) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        match self {
            ConsistencySet::Unconstrained { .. } => true,
            ConsistencySet::Box { lower, upper } => v
                .as_slice()
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&x, (&lo, &hi))| x >= lo - MEMBERSHIP_TOL && x <= hi + MEMBERSHIP_TOL),
            ConsistencySet::Simplex { .. } => {
                let sum: f64 = v.as_slice().iter().sum();
                (sum - 1.0).abs() <= 1e-9
                    && v.as_slice().iter().all(|&x| x >= -MEMBERSHIP_TOL)
            }
        }
    }

    /// A canonical feasible starting point: `1/n` on the simplex, the box
    /// midpoint, zero when unconstrained.
    pub fn initial_point(&self) -> DecisionVector {
        match self {
            ConsistencySet::Unconstrained { dim } => DecisionVector::zeros(*dim),
            ConsistencySet::Box { lower, upper } => DecisionVector(
                lower
                    .iter()
                    .zip(upper)
                    .map(|(&lo, &hi)| 0.5 * (lo + hi))
                    .collect(),
            ),
            ConsistencySet::Simplex { dim } => {
                DecisionVector(vec![1.0 / *dim as f64; *dim])
            }
        }
    }

    /// Euclidean projection onto the set.
    ///
    /// The simplex case uses the sort-then-threshold rule: sort coordinates
    /// descending, find the largest prefix with positive shifted mass, and
    /// clip at the resulting threshold.
    pub fn project(&self, v: &DecisionVector) -> Result<DecisionVector> {
        check_dim(self.dim(), v.len())?;
        check_finite(v.as_slice())?;
        let projected = match self {
            ConsistencySet::Unconstrained { .. } => v.clone(),
            ConsistencySet::Box { lower, upper } => DecisionVector(
                v.as_slice()
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(&x, (&lo, &hi))| x.clamp(lo, hi))
                    .collect(),
            ),
            ConsistencySet::Simplex { .. } => {
                let mut sorted: Vec<f64> = v.as_slice().to_vec();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let mut cumulative = 0.0;
                let mut threshold = 0.0;
                for (i, &u) in sorted.iter().enumerate() {
                    cumulative += u;
                    let candidate = (cumulative - 1.0) / (i + 1) as f64;
                    if u - candidate > 0.0 {
                        threshold = candidate;
                    } else {
                        break;
                    }
                }
                DecisionVector(
                    v.as_slice()
                        .iter()
                        .map(|&x| (x - threshold).max(0.0))
                        .collect(),
                )
            }
        };
        Ok(projected)
    }
}

/// Dimension-free description of a consistency set, as it appears in config
/// files before the problem dimension is known.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConsistencySetKind {
    Unconstrained,
    #[default]
    Simplex,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ConsistencySetKind {
    pub fn with_dim(&self, dim: usize) -> Result<ConsistencySet> {
        match self {
            ConsistencySetKind::Unconstrained => Ok(ConsistencySet::unconstrained(dim)),
            ConsistencySetKind::Simplex => Ok(ConsistencySet::simplex(dim)),
            ConsistencySetKind::Box { lower, upper } => {
                if lower.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: lower.len(),
                    });
                }
                ConsistencySet::boxed(lower.clone(), upper.clone())
            }
        }
    }
}

/// Primal and dual residual norms for one iteration, computed after the
/// consensus update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    /// `‖x̃_opt − x_new‖₂`
    pub primal_opt: f64,
    /// `‖x̃_llm − x_new‖₂`
    pub primal_llm: f64,
    /// `ρ·‖x_new − x_prev‖₂`
    pub dual: f64,
}

impl ResidualRecord {
    pub fn max_primal(&self) -> f64 {
        self.primal_opt.max(self.primal_llm)
    }
}

/// Per-iteration snapshot of the consensus loop state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub proposals: Vec<DecisionVector>,
    pub prices: Vec<DualPrice>,
    pub public: DecisionVector,
    pub residuals: ResidualRecord,
}

/// Residuals for a two-agent iteration. `proposals` are ordered
/// `[optimizer, llm]`; with more than two agents the first slot aggregates
/// under `primal_opt` and the last under `primal_llm`.
pub fn residuals(
    proposals: &[DecisionVector],
    public_new: &DecisionVector,
    public_prev: &DecisionVector,
    rho: f64,
) -> Result<ResidualRecord> {
    if rho <= 0.0 {
        return Err(Error::InvalidParameter(format!("rho must be > 0, got {rho}")));
    }
    if proposals.is_empty() {
        return Err(Error::InvalidParameter("no proposals".into()));
    }
    for p in proposals {
        check_dim(public_new.len(), p.len())?;
    }
    check_dim(public_new.len(), public_prev.len())?;
    let primal_opt = proposals[0].distance(public_new)?;
    let primal_llm = proposals[proposals.len() - 1].distance(public_new)?;
    let dual = rho * public_new.distance(public_prev)?;
    Ok(ResidualRecord {
        primal_opt,
        primal_llm,
        dual,
    })
}
