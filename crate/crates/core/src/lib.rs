//! Interpretable variable-ordering heuristics for cylindrical algebraic
//! decomposition.
//!
//! The pipeline: parse or generate polynomial problems ([`polyset`],
//! [`datagen`]), compute per-variable features from a small compositional
//! grammar ([`features`]), order variables lexicographically or through the
//! equivalent constrained network ([`heuristics`]), price orderings with a
//! cost oracle ([`costmodel`]), search all feature triplets ([`search`]) and
//! fine-tune the network weights ([`training`]).

pub mod costmodel;
pub mod datagen;
pub mod features;
pub mod heuristics;
pub mod polyset;
pub mod search;
pub mod training;
