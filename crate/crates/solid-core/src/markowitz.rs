//! The optimization agent: equality-constrained mean-variance subproblems
//! solved through their KKT linear systems, plus moment estimation from
//! return history.

use nalgebra::{DMatrix, DVector};

use crate::consensus::{ConsistencySet, DecisionVector, DualPrice};
use crate::coordinator::Agent;
use crate::{Error, Result};

/// Infinity-norm bound asserted on every KKT solve.
pub const KKT_TOL: f64 = 1e-9;

/// Covariance, expected returns, and target return for the mean-variance
/// problem `min ½w'Σw  s.t.  w'μ = p, w'1 = 1`.
#[derive(Debug, Clone)]
pub struct MarkowitzModel {
    sigma: DMatrix<f64>,
    mu: DVector<f64>,
    target_return: f64,
}

impl MarkowitzModel {
    /// Validates symmetry (to 1e−10), positive definiteness, and finiteness.
    /// A target return outside `[min μ, max μ]` is accepted with a warning:
    /// the equality constraints stay solvable but force leverage.
    pub fn new(sigma: DMatrix<f64>, mu: DVector<f64>, target_return: f64) -> Result<Self> {
        let n = mu.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: sigma.nrows().max(sigma.ncols()),
            });
        }
        if n == 0 {
            return Err(Error::InvalidParameter("empty model".into()));
        }
        for (index, v) in sigma.iter().chain(mu.iter()).enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index });
            }
        }
        if !target_return.is_finite() {
            return Err(Error::InvalidParameter("target return must be finite".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "covariance not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let symmetrized = (&sigma + sigma.transpose()) * 0.5;
        if symmetrized.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter(
                "covariance is not positive definite".into(),
            ));
        }
        let (lo, hi) = mu.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &m| {
            (acc.0.min(m), acc.1.max(m))
        });
        if target_return < lo || target_return > hi {
            log::warn!(
                "target return {target_return} outside the asset return range [{lo}, {hi}]"
            );
        }
        Ok(MarkowitzModel {
            sigma: symmetrized,
            mu,
            target_return,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn target_return(&self) -> f64 {
        self.target_return
    }

    /// Solve the equality-constrained QP
    /// `min ½x'Hx − x'q  s.t.  x'μ = p, x'1 = 1`
    /// through its KKT system `[H μ 1; μ' 0 0; 1' 0 0]·[x; ν] = [q; p; 1]`.
    fn solve_kkt(&self, hessian: &DMatrix<f64>, linear: &DVector<f64>) -> Result<DecisionVector> {
        let n = self.dim();
        // μ parallel to 1 leaves the constraint rows rank deficient
        let mean = self.mu.mean();
        let spread = self.mu.iter().map(|&m| (m - mean).abs()).fold(0.0, f64::max);
        if spread <= 1e-12 * self.mu.amax().max(1.0) {
            return Err(Error::DegenerateReturns);
        }
        let mut kkt = DMatrix::<f64>::zeros(n + 2, n + 2);
        kkt.view_mut((0, 0), (n, n)).copy_from(hessian);
        for i in 0..n {
            kkt[(i, n)] = self.mu[i];
            kkt[(n, i)] = self.mu[i];
            kkt[(i, n + 1)] = 1.0;
            kkt[(n + 1, i)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n + 2);
        rhs.rows_mut(0, n).copy_from(linear);
        rhs[n] = self.target_return;
        rhs[n + 1] = 1.0;

        let solution = kkt
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegenerateReturns)?;
        let residual = (&kkt * &solution - &rhs).amax();
        let scale = 1.0 + kkt.amax() * solution.amax();
        if residual > KKT_TOL * scale {
            return Err(Error::DegenerateReturns);
        }
        DecisionVector::new(solution.rows(0, n).iter().copied().collect())
    }

    /// Minimum-variance weights for the target return.
    pub fn solve(&self) -> Result<DecisionVector> {
        self.solve_kkt(&self.sigma, &DVector::zeros(self.dim()))
    }

    /// The augmented subproblem: maximize
    /// `−½x'Σx + x'λ − (ρ/2)‖x − x_prev‖²` under the same equality
    /// constraints, i.e. the QP with Hessian `Σ + ρI` and linear term
    /// `λ + ρ·x_prev`. With `ρ = 0` and `λ = 0` this is exactly [`Self::solve`].
    pub fn propose_augmented(
        &self,
        price: &DualPrice,
        prev_public: &DecisionVector,
        rho: f64,
    ) -> Result<DecisionVector> {
        let n = self.dim();
        if price.len() != n || prev_public.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: price.len().min(prev_public.len()),
            });
        }
        if !(rho >= 0.0) {
            return Err(Error::InvalidParameter(format!("rho must be >= 0, got {rho}")));
        }
        let mut hessian = self.sigma.clone();
        for i in 0..n {
            hessian[(i, i)] += rho;
        }
        let linear = DVector::from_iterator(
            n,
            price
                .as_slice()
                .iter()
                .zip(prev_public.as_slice())
                .map(|(&l, &x)| l + rho * x),
        );
        self.solve_kkt(&hessian, &linear)
    }
}

/// Sample mean and ridge-regularized sample covariance (divisor `T − 1`)
/// from a `T×n` matrix of per-period simple returns.
pub fn estimate_moments(
    returns: &DMatrix<f64>,
    ridge: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let t = returns.nrows();
    let n = returns.ncols();
    if t < 2 {
        return Err(Error::Data(format!(
            "need at least 2 return periods, got {t}"
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    for (index, v) in returns.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
    }
    let mu = DVector::from_iterator(n, (0..n).map(|j| returns.column(j).mean()));
    let mut centered = returns.clone();
    for j in 0..n {
        let m = mu[j];
        for i in 0..t {
            centered[(i, j)] -= m;
        }
    }
    let mut sigma = centered.transpose() * &centered / (t as f64 - 1.0);
    for i in 0..n {
        sigma[(i, i)] += ridge;
    }
    Ok((mu, sigma))
}

/// Default ridge for an estimated covariance: `1e−6·trace(S)/n`, floored at
/// `1e−10` so a zero-variance sample still yields a positive definite matrix.
pub fn default_ridge(sample_cov: &DMatrix<f64>) -> f64 {
    let n = sample_cov.nrows().max(1) as f64;
    (1e-6 * sample_cov.trace() / n).max(1e-10)
}

/// [`Agent`] wrapper around a [`MarkowitzModel`]. Stateless after
/// construction; proposals may ignore the consistency set (shorting is
/// reconciled by the coordinator's projection).
#[derive(Debug, Clone)]
pub struct MarkowitzAgent {
    id: String,
    model: MarkowitzModel,
}

impl MarkowitzAgent {
    pub fn new(id: impl Into<String>, model: MarkowitzModel) -> Self {
        MarkowitzAgent {
            id: id.into(),
            model,
        }
    }

    pub fn model(&self) -> &MarkowitzModel {
        &self.model
    }
}

impl Agent for MarkowitzAgent {
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
        self.model.propose_augmented(price_prev, public_prev, rho)
    }
}
