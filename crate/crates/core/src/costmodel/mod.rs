//! Cost oracles: the price of running CAD on a problem under an ordering.
//!
//! Three sources are provided: recorded timing tables, an external solver
//! command timed by wall clock, and a deterministic synthetic model for
//! experiments that need no CAD engine at all.

mod external;
mod synthetic;
mod table;

use std::path::PathBuf;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heuristics::VariableOrder;
use crate::polyset::ProblemInstance;

pub use external::{ExternalSolverAdapter, TimeSource};
pub use synthetic::SyntheticCostModel;
pub use table::{load_timing_table, CostRecord, TimingTable};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("no timing record for problem `{problem}` under ordering `{ordering}`")]
    MissingRecord { problem: String, ordering: String },
    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
    #[error("{path}, row {row}: {message}")]
    Row { path: PathBuf, row: u64, message: String },
    #[error("{path}: duplicate record for ({problem}, {ordering}) on rows {first_row} and {second_row}")]
    DuplicateKey {
        path: PathBuf,
        problem: String,
        ordering: String,
        first_row: u64,
        second_row: u64,
    },
    #[error("invalid solver command template: {0}")]
    Template(String),
    #[error("failed to start solver `{program}`: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("solver exited with {status}: {stderr}")]
    CommandFailed { status: String, stderr: String },
    #[error("could not read a time in seconds from solver output `{0}`")]
    MalformedOutput(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cost oracle returned an invalid cost {0}")]
    InvalidCost(f64),
}

/// Prices a (problem, ordering) pair. Costs are nonnegative.
pub trait CostOracle: Send + Sync {
    /// Short identifier recorded in reports.
    fn id(&self) -> String;

    fn cost(&self, pr: &ProblemInstance, ord: &VariableOrder) -> Result<f64, CostError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemCost {
    pub problem_id: String,
    pub ordering: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub per_problem: Vec<ProblemCost>,
}

/// Sums the oracle cost of `chooser`'s ordering over the dataset, in
/// dataset order.
pub fn total_cost<F>(oracle: &dyn CostOracle, dataset: &[ProblemInstance], chooser: F) -> Result<CostBreakdown, CostError>
where
    F: Fn(&ProblemInstance) -> VariableOrder,
{
    let mut total = 0.0;
    let mut per_problem = Vec::with_capacity(dataset.len());
    for pr in dataset {
        let ord = chooser(pr);
        let cost = checked(oracle.cost(pr, &ord)?)?;
        total += cost;
        per_problem.push(ProblemCost {
            problem_id: pr.label().to_string(),
            ordering: ord.display(pr),
            cost,
        });
    }
    Ok(CostBreakdown { total, per_problem })
}

pub fn checked(cost: f64) -> Result<f64, CostError> {
    if cost.is_finite() && cost >= 0.0 {
        Ok(cost)
    } else {
        Err(CostError::InvalidCost(cost))
    }
}

/// Costs of every ordering of `pr`, in lexicographic ordering order.
pub fn all_ordering_costs(oracle: &dyn CostOracle, pr: &ProblemInstance) -> Result<Vec<(VariableOrder, f64)>, CostError> {
    VariableOrder::all(pr.n_vars())
        .map(|o| {
            let c = checked(oracle.cost(pr, &o)?)?;
            Ok((o, c))
        })
        .try_collect()
}

/// The cheapest ordering by brute force; ties go to the lexicographically
/// smallest ordering.
pub fn optimal_ordering(oracle: &dyn CostOracle, pr: &ProblemInstance) -> Result<(VariableOrder, f64), CostError> {
    let costs = all_ordering_costs(oracle, pr)?;
    Ok(argmin_cost(&costs))
}

pub(crate) fn argmin_cost(costs: &[(VariableOrder, f64)]) -> (VariableOrder, f64) {
    let mut best = costs[0].clone();
    for (o, c) in &costs[1..] {
        if *c < best.1 {
            best = (o.clone(), *c);
        }
    }
    best
}
