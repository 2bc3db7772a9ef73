//! Variable ordering by a feature triplet, two ways.
//!
//! [`lex_order`] sorts variables by their feature rows compared
//! lexicographically, which is Brown's rule when the triplet is
//! [`brown_features`](crate::features::brown_features). [`HeuristicNetwork`]
//! computes the same ordering as a two-layer summation network: layer 1
//! maps each row to `y_v = F1*w^2 + F2*w + F3`, and layer 2 has one neuron
//! per permutation scoring `sum_k (n - k) * y_{pi(k)}`. When every feature
//! value is an integer below `w - 1`, the radix-`w` score preserves the
//! lexicographic order and the argmax neuron is the descending sort of `y`,
//! so both paths agree exactly. All arithmetic here is exact.

use std::fmt;

use itertools::Itertools;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{eval_all_vars, FeatureError, FeatureValue, Triplet};
use crate::polyset::ProblemInstance;

/// Largest variable count for which the permutation layer is materialized.
pub const MAX_EXPLICIT_VARS: usize = 8;

/// Which end of the ordering receives the lexicographically greatest variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    GreatestFirst,
    GreatestLast,
}

pub const DEFAULT_DIRECTION: Direction = Direction::GreatestFirst;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeuristicError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(
        "weight condition violated: feature {feature} of variable {variable} is {value}, \
         not below w - 1 = {bound}"
    )]
    WeightCondition {
        variable: String,
        feature: usize,
        value: String,
        bound: u64,
    },
    #[error("permutation layer for {0} variables exceeds the explicit limit of {MAX_EXPLICIT_VARS}")]
    LayerTooLarge(usize),
    #[error("feature value {0} does not fit a 64-bit base weight")]
    WeightOverflow(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid ordering: {0}")]
    InvalidOrdering(String),
}

/// A permutation of variable indices, first-projected variable first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariableOrder(Vec<usize>);

impl VariableOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self, HeuristicError> {
        let mut seen = vec![false; perm.len()];
        for &v in &perm {
            if v >= perm.len() || std::mem::replace(&mut seen[v], true) {
                return Err(HeuristicError::InvalidOrdering(format!("{perm:?} is not a permutation")));
            }
        }
        Ok(VariableOrder(perm))
    }

    pub fn identity(n: usize) -> Self {
        VariableOrder((0..n).collect())
    }

    pub fn perm(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Self {
        VariableOrder(self.0.iter().rev().copied().collect())
    }

    pub fn oriented(self, direction: Direction) -> Self {
        match direction {
            Direction::GreatestFirst => self,
            Direction::GreatestLast => self.reversed(),
        }
    }

    /// `x>z>y` form using the problem's variable names.
    pub fn display(&self, pr: &ProblemInstance) -> String {
        self.0.iter().map(|&v| pr.var_name(v)).join(">")
    }

    /// Parses the `x>z>y` form against the problem's variables.
    pub fn parse(text: &str, pr: &ProblemInstance) -> Result<Self, HeuristicError> {
        let perm = text
            .split('>')
            .map(|name| {
                pr.var_index(name.trim())
                    .ok_or_else(|| HeuristicError::InvalidOrdering(format!("unknown variable `{}`", name.trim())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if perm.len() != pr.n_vars() {
            return Err(HeuristicError::InvalidOrdering(format!(
                "`{text}` names {} variables, problem has {}",
                perm.len(),
                pr.n_vars()
            )));
        }
        VariableOrder::new(perm)
    }

    /// All orderings of `n` variables in lexicographic order.
    pub fn all(n: usize) -> impl Iterator<Item = VariableOrder> {
        (0..n).permutations(n).map(VariableOrder)
    }
}

impl fmt::Display for VariableOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.iter().join(">"))
    }
}

/// Row `v` holds the triplet's values for variable `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrix {
    rows: Vec<[FeatureValue; 3]>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<[FeatureValue; 3]>) -> Self {
        FeatureMatrix { rows }
    }

    pub fn from_integers(rows: &[[i64; 3]]) -> Self {
        let q = |x: i64| BigRational::from_integer(BigInt::from(x));
        FeatureMatrix {
            rows: rows.iter().map(|r| [q(r[0]), q(r[1]), q(r[2])]).collect(),
        }
    }

    pub fn compute(triplet: &Triplet, pr: &ProblemInstance) -> Result<Self, FeatureError> {
        let cols = triplet
            .iter()
            .map(|fd| eval_all_vars(fd, pr))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = (0..pr.n_vars())
            .map(|v| [cols[0][v].clone(), cols[1][v].clone(), cols[2][v].clone()])
            .collect();
        Ok(FeatureMatrix { rows })
    }

    pub fn rows(&self) -> &[[FeatureValue; 3]] {
        &self.rows
    }

    pub fn n_vars(&self) -> usize {
        self.rows.len()
    }

    pub fn max_value(&self) -> Option<&FeatureValue> {
        self.rows.iter().flatten().max()
    }

    pub fn is_integral(&self) -> bool {
        self.rows.iter().flatten().all(|x| x.is_integer())
    }

    pub fn to_f64(&self) -> Vec<[f64; 3]> {
        self.rows
            .iter()
            .map(|r| {
                let f = |x: &BigRational| x.to_f64().unwrap_or(f64::NAN);
                [f(&r[0]), f(&r[1]), f(&r[2])]
            })
            .collect()
    }
}

/// How full ties on all three features are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    /// Ascending variable index. Shared by both ordering paths.
    Index,
    /// A seeded random rank per variable.
    Seeded(u64),
}

/// Sorts variables by descending feature row; full ties by ascending index.
pub fn lex_order(fm: &FeatureMatrix) -> VariableOrder {
    lex_order_with(fm, TieBreak::Index)
}

pub fn lex_order_with(fm: &FeatureMatrix, ties: TieBreak) -> VariableOrder {
    let n = fm.n_vars();
    let rank: Vec<usize> = match ties {
        TieBreak::Index => (0..n).collect(),
        TieBreak::Seeded(seed) => {
            let mut r: Vec<usize> = (0..n).collect();
            r.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            r
        }
    };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| fm.rows[b].cmp(&fm.rows[a]).then(rank[a].cmp(&rank[b])));
    VariableOrder(perm)
}

/// Minimal integer base weight for a dataset and whether any feature value
/// was fractional (the radix argument then no longer guarantees agreement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseWeight {
    pub w: u64,
    pub fractional: bool,
}

fn floor_u64(x: &BigRational) -> Result<u64, HeuristicError> {
    x.floor()
        .to_integer()
        .to_u64()
        .ok_or_else(|| HeuristicError::WeightOverflow(x.to_string()))
}

/// Smallest integer `w` with every feature value strictly below `w - 1`,
/// i.e. `floor(max) + 2`.
pub fn select_base_weight(dataset: &[ProblemInstance], triplet: &Triplet) -> Result<BaseWeight, HeuristicError> {
    if dataset.is_empty() {
        return Err(HeuristicError::EmptyDataset);
    }
    let matrices = dataset
        .iter()
        .map(|pr| FeatureMatrix::compute(triplet, pr))
        .collect::<Result<Vec<_>, _>>()?;
    base_weight_for(&matrices)
}

pub fn base_weight_for(matrices: &[FeatureMatrix]) -> Result<BaseWeight, HeuristicError> {
    let max = matrices.iter().filter_map(FeatureMatrix::max_value).max();
    let fractional = matrices.iter().any(|m| !m.is_integral());
    let top = match max {
        Some(m) if !m.is_negative() => floor_u64(m)?,
        _ => 0,
    };
    let w = top
        .checked_add(2)
        .ok_or_else(|| HeuristicError::WeightOverflow(top.to_string()))?;
    Ok(BaseWeight { w, fractional })
}

/// Checks that every entry of `fm` lies strictly below `w - 1`.
pub fn check_weight_condition(fm: &FeatureMatrix, w: u64, pr: &ProblemInstance) -> Result<(), HeuristicError> {
    let bound = BigRational::from_integer(BigInt::from(w) - 1);
    for (v, row) in fm.rows.iter().enumerate() {
        for (i, x) in row.iter().enumerate() {
            if *x >= bound {
                return Err(HeuristicError::WeightCondition {
                    variable: pr.var_name(v).to_string(),
                    feature: i + 1,
                    value: x.to_string(),
                    bound: w.saturating_sub(1),
                });
            }
        }
    }
    Ok(())
}

/// Score of the neuron labelled by `order`: the first variable is weighted
/// `n`, the last `1`.
pub fn neuron_score(order: &VariableOrder, y: &[BigRational]) -> BigRational {
    let n = order.len();
    order
        .perm()
        .iter()
        .enumerate()
        .fold(BigRational::zero(), |acc, (pos, &v)| {
            acc + &y[v] * BigRational::from_integer(BigInt::from(n - pos))
        })
}

/// All `n!` permutation neurons in lexicographic order with their scores.
pub fn layer2_scores(y: &[BigRational]) -> Result<Vec<(VariableOrder, BigRational)>, HeuristicError> {
    if y.len() > MAX_EXPLICIT_VARS {
        return Err(HeuristicError::LayerTooLarge(y.len()));
    }
    Ok(VariableOrder::all(y.len())
        .map(|o| {
            let s = neuron_score(&o, y);
            (o, s)
        })
        .collect())
}

/// First neuron (in lexicographic order) with the maximal score.
pub fn layer2_argmax(y: &[BigRational]) -> Result<VariableOrder, HeuristicError> {
    let scores = layer2_scores(y)?;
    let mut best: Option<(VariableOrder, BigRational)> = None;
    for (o, s) in scores {
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((o, s));
        }
    }
    Ok(best.map(|(o, _)| o).unwrap_or_else(|| VariableOrder::identity(0)))
}

/// Descending sort of `y` with ascending-index tie-break; the argmax of the
/// permutation layer by the rearrangement inequality.
pub fn sort_descending(y: &[BigRational]) -> VariableOrder {
    let mut perm: Vec<usize> = (0..y.len()).collect();
    perm.sort_by(|&a, &b| y[b].cmp(&y[a]).then(a.cmp(&b)));
    VariableOrder(perm)
}

/// The constrained two-layer network for one triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeuristicNetwork {
    triplet: Triplet,
    base_weight: u64,
    layer1: [BigRational; 3],
}

impl HeuristicNetwork {
    /// Brown-equivalent weights `(w^2, w, 1)`.
    pub fn frozen(triplet: Triplet, w: u64) -> Self {
        let wq = BigRational::from_integer(BigInt::from(w));
        let layer1 = [&wq * &wq, wq.clone(), BigRational::from_integer(BigInt::from(1))];
        HeuristicNetwork {
            triplet,
            base_weight: w,
            layer1,
        }
    }

    /// Multiplies every layer-1 weight by `factor`.
    pub fn scaled(mut self, factor: &BigRational) -> Self {
        for x in &mut self.layer1 {
            *x = &*x * factor;
        }
        self
    }

    pub fn triplet(&self) -> &Triplet {
        &self.triplet
    }

    pub fn base_weight(&self) -> u64 {
        self.base_weight
    }

    pub fn layer1(&self) -> &[BigRational; 3] {
        &self.layer1
    }

    pub fn layer1_forward(&self, fm: &FeatureMatrix) -> Vec<BigRational> {
        fm.rows
            .iter()
            .map(|row| row.iter().zip(&self.layer1).map(|(x, w)| x * w).sum())
            .collect()
    }

    pub fn layer2_scores(&self, y: &[BigRational]) -> Result<Vec<(VariableOrder, BigRational)>, HeuristicError> {
        layer2_scores(y)
    }

    /// Ordering from precomputed features, checking the weight condition.
    pub fn order_matrix(&self, fm: &FeatureMatrix, pr: &ProblemInstance) -> Result<VariableOrder, HeuristicError> {
        check_weight_condition(fm, self.base_weight, pr)?;
        let y = self.layer1_forward(fm);
        if y.len() <= MAX_EXPLICIT_VARS {
            layer2_argmax(&y)
        } else {
            Ok(sort_descending(&y))
        }
    }

    pub fn nn_order(&self, pr: &ProblemInstance) -> Result<VariableOrder, HeuristicError> {
        let fm = FeatureMatrix::compute(&self.triplet, pr)?;
        self.order_matrix(&fm, pr)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub problem_id: String,
    pub lex: String,
    pub nn: String,
    pub w: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightViolation {
    pub problem_id: String,
    pub w: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub total: usize,
    pub mismatches: Vec<Mismatch>,
    #[serde(default)]
    pub violations: Vec<WeightViolation>,
}

impl EquivalenceReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty() && self.violations.is_empty()
    }
}

enum Outcome {
    Agree,
    Mismatch(Mismatch),
    Violation(WeightViolation),
}

/// Runs both ordering paths on every problem. Each problem gets its own
/// minimal `w` unless `force_w` is given. Results are sorted by problem id.
pub fn check_equivalence(
    dataset: &[ProblemInstance],
    triplet: &Triplet,
    force_w: Option<u64>,
) -> Result<EquivalenceReport, HeuristicError> {
    let outcomes = dataset
        .par_iter()
        .map(|pr| -> Result<Outcome, HeuristicError> {
            let fm = FeatureMatrix::compute(triplet, pr)?;
            let w = match force_w {
                Some(w) => w,
                None => base_weight_for(std::slice::from_ref(&fm))?.w,
            };
            let net = HeuristicNetwork::frozen(*triplet, w);
            let lex = lex_order(&fm);
            match net.order_matrix(&fm, pr) {
                Ok(nn) if nn == lex => Ok(Outcome::Agree),
                Ok(nn) => Ok(Outcome::Mismatch(Mismatch {
                    problem_id: pr.label().to_string(),
                    lex: lex.display(pr),
                    nn: nn.display(pr),
                    w,
                })),
                Err(e @ HeuristicError::WeightCondition { .. }) => Ok(Outcome::Violation(WeightViolation {
                    problem_id: pr.label().to_string(),
                    w,
                    message: e.to_string(),
                })),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut mismatches = Vec::new();
    let mut violations = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Agree => {}
            Outcome::Mismatch(m) => mismatches.push(m),
            Outcome::Violation(v) => violations.push(v),
        }
    }
    mismatches.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    violations.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    Ok(EquivalenceReport {
        total: dataset.len(),
        mismatches,
        violations,
    })
}
