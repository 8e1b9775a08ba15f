//! Consensus coordination between a numerical optimization agent and an
//! LLM decision agent, driven by dual prices and deviation penalties.
//!
//! The crate is organized around the loop in [`coordinator::run_consensus`]:
//! agents propose decisions against the current public plan, the coordinator
//! reprices their deviations and reconciles a new public decision, and the
//! loop stops once primal and dual residuals are small. [`markowitz`]
//! provides the optimizer side (mean-variance subproblems solved through
//! their KKT systems), [`llm`] the language-model side (prompting, response
//! parsing, confidence-level mapping) together with deterministic mock
//! agents, and [`backtest`] a monthly-rebalancing harness that compares
//! optimizer-only, LLM-only, consensus, and averaged strategies.

// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range
// values; `x <= 0.0` would silently accept NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod consensus;
pub mod coordinator;
pub mod llm;
pub mod markowitz;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
