//! Exact polynomial problem instances.
//!
//! A problem is a nonempty set of multivariate polynomials with integer
//! coefficients over `n` ordered variables. Only the degree structure is
//! consumed downstream, but coefficients are kept exactly so that a problem
//! survives a text round-trip unchanged.

mod parser;

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parser::parse_problem;

/// A variable of a problem: its position in the ordering of the degree
/// vectors and its printable name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariableId {
    pub index: usize,
    pub name: String,
}

/// One term `coeff * prod x_i^degrees[i]`. The coefficient is never zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial {
    coeff: BigInt,
    degrees: Vec<u32>,
}

impl Monomial {
    pub fn new(coeff: impl Into<BigInt>, degrees: Vec<u32>) -> Self {
        Monomial {
            coeff: coeff.into(),
            degrees,
        }
    }

    pub fn coeff(&self) -> &BigInt {
        &self.coeff
    }

    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    pub fn degree(&self, var: usize) -> u32 {
        self.degrees[var]
    }

    pub fn total_degree(&self) -> u64 {
        self.degrees.iter().map(|&d| u64::from(d)).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.degrees.iter().all(|&d| d == 0)
    }
}

/// A polynomial in canonical form: like terms merged, zero terms dropped,
/// monomials sorted by degree vector descending lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Polynomial {
    monomials: Vec<Monomial>,
}

impl Polynomial {
    /// Canonicalizes `terms`. Fails if every term cancels.
    pub fn new(terms: Vec<Monomial>) -> Result<Self, PolysetError> {
        let mut merged: BTreeMap<Reverse<Vec<u32>>, BigInt> = BTreeMap::new();
        for term in terms {
            *merged.entry(Reverse(term.degrees)).or_insert_with(BigInt::zero) += term.coeff;
        }
        let monomials: Vec<Monomial> = merged
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(Reverse(degrees), coeff)| Monomial { coeff, degrees })
            .collect();
        if monomials.is_empty() {
            return Err(PolysetError::ZeroPolynomial);
        }
        Ok(Polynomial { monomials })
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.monomials.iter().all(Monomial::is_constant)
    }

    /// Re-runs canonicalization; a no-op on any constructed polynomial.
    pub fn canonicalize(&self) -> Self {
        Polynomial::new(self.monomials.clone()).expect("canonical polynomial is nonzero")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProblemInstance {
    variables: Vec<VariableId>,
    polynomials: Vec<Polynomial>,
    id: Option<String>,
}

impl ProblemInstance {
    /// Builds a problem from variable names and canonical polynomials,
    /// checking the shape invariants.
    pub fn new(var_names: Vec<String>, polynomials: Vec<Polynomial>) -> Result<Self, PolysetError> {
        if var_names.is_empty() {
            return Err(PolysetError::NoVariables);
        }
        if polynomials.is_empty() {
            return Err(PolysetError::EmptyProblem);
        }
        for (i, name) in var_names.iter().enumerate() {
            if var_names[..i].contains(name) {
                return Err(PolysetError::DuplicateVariable(name.clone()));
            }
        }
        let n = var_names.len();
        for poly in &polynomials {
            if let Some(m) = poly.monomials.iter().find(|m| m.degrees.len() != n) {
                return Err(PolysetError::ArityMismatch {
                    expected: n,
                    found: m.degrees.len(),
                });
            }
        }
        let variables = var_names
            .into_iter()
            .enumerate()
            .map(|(index, name)| VariableId { index, name })
            .collect();
        Ok(ProblemInstance {
            variables,
            polynomials,
            id: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn without_id(mut self) -> Self {
        self.id = None;
        self
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    /// The id, or `"<anonymous>"` for problems that were never labelled.
    pub fn label(&self) -> &str {
        self.id.as_deref().unwrap_or("<anonymous>")
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[VariableId] {
        &self.variables
    }

    pub fn var_name(&self, index: usize) -> &str {
        &self.variables[index].name
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn polynomials(&self) -> &[Polynomial] {
        &self.polynomials
    }

    /// Returns a copy with every exponent multiplied by `factor`.
    pub fn scale_degrees(&self, factor: u32) -> Self {
        let polynomials = self
            .polynomials
            .iter()
            .map(|p| Polynomial {
                monomials: p
                    .monomials
                    .iter()
                    .map(|m| Monomial {
                        coeff: m.coeff.clone(),
                        degrees: m.degrees.iter().map(|d| d * factor).collect(),
                    })
                    .collect(),
            })
            .collect();
        ProblemInstance {
            variables: self.variables.clone(),
            polynomials,
            id: self.id.clone(),
        }
    }
}

impl fmt::Display for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_problem(self))
    }
}

/// Writes the problem in the line-oriented text format accepted by
/// [`parse_problem`]. A `vars:` header is always emitted so the variable
/// order survives the round-trip.
pub fn serialize_problem(pr: &ProblemInstance) -> String {
    let mut out = String::from("vars: ");
    let names: Vec<&str> = pr.variables.iter().map(|v| v.name.as_str()).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for poly in &pr.polynomials {
        for (i, m) in poly.monomials.iter().enumerate() {
            let negative = m.coeff.is_negative();
            match (i, negative) {
                (0, true) => out.push('-'),
                (0, false) => {}
                (_, true) => out.push_str(" - "),
                (_, false) => out.push_str(" + "),
            }
            let magnitude = m.coeff.abs();
            let factors: Vec<String> = m
                .degrees
                .iter()
                .enumerate()
                .filter(|(_, &d)| d > 0)
                .map(|(v, &d)| {
                    if d == 1 {
                        names[v].to_string()
                    } else {
                        format!("{}^{}", names[v], d)
                    }
                })
                .collect();
            if factors.is_empty() {
                out.push_str(&magnitude.to_string());
            } else {
                if !magnitude.is_one() {
                    out.push_str(&magnitude.to_string());
                    out.push('*');
                }
                out.push_str(&factors.join("*"));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolysetError {
    #[error("syntax error at line {line}, column {column}: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        column: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: unknown variable `{name}` (not declared in the vars: header)")]
    UnknownVariable { line: usize, name: String },
    #[error("line {line}: negative exponent")]
    NegativeExponent { line: usize },
    #[error("line {line}: rational coefficients are not supported")]
    RationalCoefficient { line: usize },
    #[error("line {line}: polynomial is identically zero")]
    ZeroPolynomialAt { line: usize },
    #[error("polynomial is identically zero")]
    ZeroPolynomial,
    #[error("problem contains no polynomials")]
    EmptyProblem,
    #[error("problem has no variables")]
    NoVariables,
    #[error("variable `{0}` declared twice")]
    DuplicateVariable(String),
    #[error("monomial has {found} exponents, problem has {expected} variables")]
    ArityMismatch { expected: usize, found: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_and_drop_zero_terms() {
        let p = Polynomial::new(vec![
            Monomial::new(3, vec![1, 0]),
            Monomial::new(-3, vec![1, 0]),
            Monomial::new(2, vec![0, 1]),
        ])
        .unwrap();
        assert_eq!(p.monomials(), &[Monomial::new(2, vec![0, 1])]);
    }

    #[test]
    fn monomials_sorted_descending() {
        let p = Polynomial::new(vec![
            Monomial::new(1, vec![0, 0]),
            Monomial::new(1, vec![0, 2]),
            Monomial::new(1, vec![1, 0]),
        ])
        .unwrap();
        let degs: Vec<&[u32]> = p.monomials().iter().map(|m| m.degrees()).collect();
        assert_eq!(degs, vec![&[1, 0][..], &[0, 2][..], &[0, 0][..]]);
    }

    #[test]
    fn cancelled_polynomial_rejected() {
        let err = Polynomial::new(vec![Monomial::new(1, vec![1]), Monomial::new(-1, vec![1])]);
        assert_eq!(err, Err(PolysetError::ZeroPolynomial));
    }

    #[test]
    fn problem_invariants() {
        let p = Polynomial::new(vec![Monomial::new(1, vec![1, 0])]).unwrap();
        assert_eq!(
            ProblemInstance::new(vec!["x".into()], vec![p.clone()]),
            Err(PolysetError::ArityMismatch { expected: 1, found: 2 })
        );
        assert_eq!(
            ProblemInstance::new(vec!["x".into(), "x".into()], vec![p.clone()]),
            Err(PolysetError::DuplicateVariable("x".into()))
        );
        assert_eq!(
            ProblemInstance::new(vec!["x".into(), "y".into()], vec![]),
            Err(PolysetError::EmptyProblem)
        );
    }

    #[test]
    fn serialize_signs_and_constants() {
        let pr = parse_problem("vars: x,y\n-x*y + 3 - 2*y^2\n-1").unwrap();
        assert_eq!(serialize_problem(&pr), "vars: x,y\n-x*y - 2*y^2 + 3\n-1\n");
    }
}
