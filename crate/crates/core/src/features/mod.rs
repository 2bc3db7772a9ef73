//! Per-variable features built from degree data.
//!
//! Every feature is a composition `g4 . g3 . g2 . g1 . h` where the kernel
//! `h` produces one integer per (polynomial, monomial) cell and each `g`
//! either reduces an axis (max, sum or average over monomials, polynomials
//! or both) or acts elementwise (`sgn`, identity). Evaluation is exact: the
//! averaging aggregators produce fractions, so values are big rationals.
//!
//! The monomial axis is ragged (polynomials have different numbers of
//! monomials), so a polynomial-axis reduction is only defined once the
//! monomial axis is gone. Reducing an axis twice, reducing the polynomial
//! axis first, or never reducing an axis makes a descriptor invalid.

mod dedup;

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polyset::ProblemInstance;

pub use dedup::{dedup_features, default_probe, FeatureRecord, FeatureSet};

/// Exact value of a feature.
pub type FeatureValue = BigRational;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaseKernel {
    /// `d_v`: the degree of the variable in the monomial.
    Degree,
    /// `sgn(d_v) * sum_v' d_v'`: the monomial's total degree if it contains the variable, else 0.
    SignedTotalDegree,
}

impl BaseKernel {
    pub const ALL: [BaseKernel; 2] = [BaseKernel::Degree, BaseKernel::SignedTotalDegree];

    fn code(self) -> u32 {
        match self {
            BaseKernel::Degree => 0,
            BaseKernel::SignedTotalDegree => 1,
        }
    }

    fn notation(self) -> &'static str {
        match self {
            BaseKernel::Degree => "d_v",
            BaseKernel::SignedTotalDegree => "sgn(d_v)*(sum_v' d_v')",
        }
    }
}

/// Declaration order is the canonical encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aggregator {
    MaxP,
    MaxM,
    MaxMP,
    SumP,
    SumM,
    SumMP,
    AvP,
    AvM,
    AvMP,
    Sgn,
    Id,
}

impl Aggregator {
    pub const ALL: [Aggregator; 11] = [
        Aggregator::MaxP,
        Aggregator::MaxM,
        Aggregator::MaxMP,
        Aggregator::SumP,
        Aggregator::SumM,
        Aggregator::SumMP,
        Aggregator::AvP,
        Aggregator::AvM,
        Aggregator::AvMP,
        Aggregator::Sgn,
        Aggregator::Id,
    ];

    fn code(self) -> u32 {
        self as u32
    }

    fn reduces_m(self) -> bool {
        use Aggregator::*;
        matches!(self, MaxM | MaxMP | SumM | SumMP | AvM | AvMP)
    }

    fn reduces_p(self) -> bool {
        use Aggregator::*;
        matches!(self, MaxP | MaxMP | SumP | SumMP | AvP | AvMP)
    }

    pub fn is_average(self) -> bool {
        matches!(self, Aggregator::AvP | Aggregator::AvM | Aggregator::AvMP)
    }

    fn notation(self) -> &'static str {
        use Aggregator::*;
        match self {
            MaxP => "max_p",
            MaxM => "max_m",
            MaxMP => "max_mp",
            SumP => "sum_p",
            SumM => "sum_m",
            SumMP => "sum_mp",
            AvP => "av_p",
            AvM => "av_m",
            AvMP => "av_mp",
            Sgn => "sgn",
            Id => "id",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("invalid descriptor {descriptor}: {reason}")]
    InvalidDescriptor { descriptor: String, reason: &'static str },
    #[error("variable index {index} out of range for a problem with {n_vars} variables")]
    VariableOutOfRange { index: usize, n_vars: usize },
    #[error("dedup probe set is empty")]
    EmptyProbe,
    #[error("probe problems disagree on the number of variables ({expected} vs {found})")]
    MixedProbeArity { expected: usize, found: usize },
}

/// A feature: kernel followed by exactly four aggregators, applied first to last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub kernel: BaseKernel,
    pub pipeline: [Aggregator; 4],
}

/// Shape of the intermediate value while a pipeline is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Cells,
    PerPoly,
    Scalar,
}

impl Shape {
    fn step(self, agg: Aggregator) -> Result<Shape, &'static str> {
        match (self, agg.reduces_m(), agg.reduces_p()) {
            (_, false, false) => Ok(self),
            (Shape::Cells, true, true) => Ok(Shape::Scalar),
            (Shape::Cells, true, false) => Ok(Shape::PerPoly),
            (Shape::Cells, false, true) => Err("polynomial axis reduced while monomial axis is present"),
            (Shape::PerPoly, false, true) => Ok(Shape::Scalar),
            (Shape::PerPoly, true, _) | (Shape::Scalar, true, _) => Err("monomial axis reduced twice"),
            (Shape::Scalar, false, true) => Err("polynomial axis reduced twice"),
        }
    }
}

impl FeatureDescriptor {
    pub const fn new(kernel: BaseKernel, pipeline: [Aggregator; 4]) -> Self {
        FeatureDescriptor { kernel, pipeline }
    }

    /// Compact integer id: kernel and the four aggregators as base-11 digits.
    pub fn code(&self) -> u32 {
        self.pipeline
            .iter()
            .fold(self.kernel.code(), |acc, g| acc * 11 + g.code())
    }

    pub fn from_code(code: u32) -> Option<Self> {
        if code >= 2 * 11u32.pow(4) {
            return None;
        }
        let mut rest = code;
        let mut pipeline = [Aggregator::Id; 4];
        for slot in pipeline.iter_mut().rev() {
            *slot = Aggregator::ALL[(rest % 11) as usize];
            rest /= 11;
        }
        Some(FeatureDescriptor::new(BaseKernel::ALL[rest as usize], pipeline))
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut shape = Shape::Cells;
        for &g in &self.pipeline {
            shape = shape.step(g).map_err(|reason| self.invalid(reason))?;
        }
        if shape != Shape::Scalar {
            return Err(self.invalid("an axis is never reduced"));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    fn invalid(&self, reason: &'static str) -> FeatureError {
        FeatureError::InvalidDescriptor {
            descriptor: format!("{self:?}"),
            reason,
        }
    }

    /// Number of non-identity aggregators.
    pub fn active_len(&self) -> usize {
        self.pipeline.iter().filter(|g| **g != Aggregator::Id).count()
    }

    pub fn uses_average(&self) -> bool {
        self.pipeline.iter().any(|g| g.is_average())
    }

    /// Ordering key for picking a class representative: fewest active
    /// aggregators first, then the encoding.
    pub(crate) fn simplicity_key(&self) -> (usize, BaseKernel, [Aggregator; 4]) {
        (self.active_len(), self.kernel, self.pipeline)
    }

    /// Human-readable formula, e.g. `sum_p max_m d_v`.
    pub fn description(&self) -> String {
        let mut s = self.kernel.notation().to_string();
        for &g in &self.pipeline {
            s = match g {
                Aggregator::Id => s,
                Aggregator::Sgn => format!("sgn({s})"),
                _ => format!("{} {s}", g.notation()),
            };
        }
        s
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.description())
    }
}

/// Kernel values for one variable, indexed `[p][m]` in canonical monomial order.
pub fn eval_kernel(kernel: BaseKernel, pr: &ProblemInstance, v: usize) -> Vec<Vec<u64>> {
    pr.polynomials()
        .iter()
        .map(|poly| {
            poly.monomials()
                .iter()
                .map(|m| {
                    let d = u64::from(m.degree(v));
                    match kernel {
                        BaseKernel::Degree => d,
                        BaseKernel::SignedTotalDegree if d > 0 => m.total_degree(),
                        BaseKernel::SignedTotalDegree => 0,
                    }
                })
                .collect()
        })
        .collect()
}

enum Stage {
    Cells(Vec<Vec<BigRational>>),
    PerPoly(Vec<BigRational>),
    Scalar(BigRational),
}

fn sgn(x: &BigRational) -> BigRational {
    if x.is_zero() {
        BigRational::zero()
    } else if x.is_positive() {
        BigRational::one()
    } else {
        -BigRational::one()
    }
}

fn max_of<'a>(xs: impl IntoIterator<Item = &'a BigRational>) -> BigRational {
    xs.into_iter()
        .max()
        .cloned()
        .expect("problem invariants guarantee nonempty axes")
}

fn sum_of<'a>(xs: impl IntoIterator<Item = &'a BigRational>) -> BigRational {
    xs.into_iter().fold(BigRational::zero(), |acc, x| acc + x)
}

fn avg_of(xs: &[BigRational]) -> BigRational {
    sum_of(xs) / BigRational::from_integer(BigInt::from(xs.len()))
}

fn apply(stage: Stage, g: Aggregator) -> Stage {
    use Aggregator::*;
    match (stage, g) {
        (s, Id) => s,
        (Stage::Cells(t), Sgn) => Stage::Cells(t.iter().map(|row| row.iter().map(sgn).collect()).collect()),
        (Stage::PerPoly(r), Sgn) => Stage::PerPoly(r.iter().map(sgn).collect()),
        (Stage::Scalar(x), Sgn) => Stage::Scalar(sgn(&x)),
        (Stage::Cells(t), MaxM) => Stage::PerPoly(t.iter().map(max_of).collect()),
        (Stage::Cells(t), SumM) => Stage::PerPoly(t.iter().map(sum_of).collect()),
        (Stage::Cells(t), AvM) => Stage::PerPoly(t.iter().map(|row| avg_of(row)).collect()),
        (Stage::Cells(t), MaxMP) => Stage::Scalar(max_of(t.iter().flatten())),
        (Stage::Cells(t), SumMP) => Stage::Scalar(sum_of(t.iter().flatten())),
        (Stage::Cells(t), AvMP) => {
            let per_poly: Vec<BigRational> = t.iter().map(|row| avg_of(row)).collect();
            Stage::Scalar(avg_of(&per_poly))
        }
        (Stage::PerPoly(r), MaxP) => Stage::Scalar(max_of(&r)),
        (Stage::PerPoly(r), SumP) => Stage::Scalar(sum_of(&r)),
        (Stage::PerPoly(r), AvP) => Stage::Scalar(avg_of(&r)),
        _ => unreachable!("descriptor validated before evaluation"),
    }
}

/// Evaluates `fd` for variable index `v` of `pr`.
pub fn eval_feature(fd: &FeatureDescriptor, pr: &ProblemInstance, v: usize) -> Result<FeatureValue, FeatureError> {
    fd.validate()?;
    if v >= pr.n_vars() {
        return Err(FeatureError::VariableOutOfRange {
            index: v,
            n_vars: pr.n_vars(),
        });
    }
    let cells = eval_kernel(fd.kernel, pr, v)
        .into_iter()
        .map(|row| row.into_iter().map(|x| BigRational::from_integer(BigInt::from(x))).collect())
        .collect();
    let mut stage = Stage::Cells(cells);
    for &g in &fd.pipeline {
        stage = apply(stage, g);
    }
    match stage {
        Stage::Scalar(x) => Ok(x),
        _ => unreachable!("validated descriptors end in a scalar"),
    }
}

/// Evaluates `fd` for every variable of `pr`, in index order.
pub fn eval_all_vars(fd: &FeatureDescriptor, pr: &ProblemInstance) -> Result<Vec<FeatureValue>, FeatureError> {
    (0..pr.n_vars()).map(|v| eval_feature(fd, pr, v)).collect()
}

/// A triplet of features in priority order.
pub type Triplet = [FeatureDescriptor; 3];

/// Brown's three metrics: overall degree, maximum total degree of monomials
/// containing the variable, number of terms containing the variable.
pub fn brown_features() -> Triplet {
    use Aggregator::*;
    [
        FeatureDescriptor::new(BaseKernel::Degree, [MaxMP, Id, Id, Id]),
        FeatureDescriptor::new(BaseKernel::SignedTotalDegree, [MaxMP, Id, Id, Id]),
        FeatureDescriptor::new(BaseKernel::Degree, [Sgn, SumMP, Id, Id]),
    ]
}

/// The best triplet reported by the exhaustive search on random problems:
/// sum over polynomials of the per-polynomial maximum degree; the same for
/// the signed total degree; and the number of polynomials containing the variable.
pub fn selected_triplet() -> Triplet {
    use Aggregator::*;
    [
        FeatureDescriptor::new(BaseKernel::Degree, [MaxM, SumP, Id, Id]),
        FeatureDescriptor::new(BaseKernel::SignedTotalDegree, [MaxM, SumP, Id, Id]),
        FeatureDescriptor::new(BaseKernel::Degree, [Sgn, MaxM, SumP, Id]),
    ]
}

/// Every valid composition, in canonical order (kernel, then pipeline).
pub fn enumerate_descriptors() -> Vec<FeatureDescriptor> {
    let mut out = Vec::new();
    for kernel in BaseKernel::ALL {
        for a in Aggregator::ALL {
            for b in Aggregator::ALL {
                for c in Aggregator::ALL {
                    for d in Aggregator::ALL {
                        let fd = FeatureDescriptor::new(kernel, [a, b, c, d]);
                        if fd.is_valid() {
                            out.push(fd);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Number of formal compositions before the validity filter.
pub const FORMAL_COMPOSITIONS: usize = 2 * 11 * 11 * 11 * 11;
