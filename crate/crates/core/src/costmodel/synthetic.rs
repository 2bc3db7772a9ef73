use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CostError, CostOracle};
use crate::heuristics::VariableOrder;
use crate::polyset::{serialize_problem, ProblemInstance};

/// Desk-scale stand-in for CAD time.
///
/// With `m_v` the sum over polynomials of the maximum degree of `v`, the
/// cost of an ordering `s` is `sum_k step_base^(n-1-k) * m_{s[k]}` (0-based
/// `k`), so earlier-projected variables weigh more and the optimum sorts
/// `m` ascending. Optional multiplicative noise `1 + noise_scale * u`,
/// `u` in `[-1, 1)`, is a hash of (seed, problem, ordering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCostModel {
    pub step_base: f64,
    pub noise_seed: Option<u64>,
    pub noise_scale: f64,
}

impl Default for SyntheticCostModel {
    fn default() -> Self {
        SyntheticCostModel {
            step_base: 2.0,
            noise_seed: None,
            noise_scale: 0.0,
        }
    }
}

impl SyntheticCostModel {
    /// `m_v` for every variable.
    pub fn statistic(pr: &ProblemInstance) -> Vec<u64> {
        (0..pr.n_vars())
            .map(|v| {
                pr.polynomials()
                    .iter()
                    .map(|p| p.monomials().iter().map(|m| u64::from(m.degree(v))).max().unwrap_or(0))
                    .sum()
            })
            .collect()
    }

    fn noise(&self, seed: u64, pr: &ProblemInstance, ord: &VariableOrder) -> f64 {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(serialize_problem(pr).as_bytes());
        for &v in ord.perm() {
            h.update((v as u64).to_le_bytes());
        }
        let digest = h.finalize();
        let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
        2.0 * unit - 1.0
    }
}

impl CostOracle for SyntheticCostModel {
    fn id(&self) -> String {
        match self.noise_seed {
            Some(seed) if self.noise_scale > 0.0 => {
                format!("synthetic(base={},noise={}@{})", self.step_base, self.noise_scale, seed)
            }
            _ => format!("synthetic(base={})", self.step_base),
        }
    }

    fn cost(&self, pr: &ProblemInstance, ord: &VariableOrder) -> Result<f64, CostError> {
        let m = Self::statistic(pr);
        let n = ord.len();
        let base = ord
            .perm()
            .iter()
            .enumerate()
            .map(|(k, &v)| self.step_base.powi((n - 1 - k) as i32) * m[v] as f64)
            .sum::<f64>();
        Ok(match self.noise_seed {
            Some(seed) if self.noise_scale > 0.0 => base * (1.0 + self.noise_scale * self.noise(seed, pr, ord)),
            _ => base,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{e1, e2, random_dataset, GenConfig};

    fn ord(p: &[usize]) -> VariableOrder {
        VariableOrder::new(p.to_vec()).unwrap()
    }

    #[test]
    fn statistic_examples() {
        assert_eq!(SyntheticCostModel::statistic(&e1()), vec![3, 1, 3]);
        assert_eq!(SyntheticCostModel::statistic(&e2()), vec![4, 3, 1]);
    }

    #[test]
    fn cost_examples() {
        let model = SyntheticCostModel::default();
        assert_eq!(model.cost(&e1(), &ord(&[0, 2, 1])).unwrap(), 19.0);
        assert_eq!(model.cost(&e1(), &ord(&[1, 0, 2])).unwrap(), 13.0);
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let model = SyntheticCostModel {
            noise_seed: Some(3),
            noise_scale: 0.5,
            ..SyntheticCostModel::default()
        };
        let o = ord(&[0, 2, 1]);
        let a = model.cost(&e1(), &o).unwrap();
        assert_eq!(a.to_bits(), model.cost(&e1(), &o).unwrap().to_bits());
        assert!((19.0 * 0.5..19.0 * 1.5).contains(&a));
        let other_seed = SyntheticCostModel { noise_seed: Some(4), ..model.clone() };
        assert_ne!(a, other_seed.cost(&e1(), &o).unwrap());
    }

    #[test]
    fn optimum_sorts_statistic_ascending() {
        let model = SyntheticCostModel::default();
        let ds = random_dataset(&GenConfig { seed: 11, ..GenConfig::default() }, 200).unwrap();
        for pr in &ds {
            let m = SyntheticCostModel::statistic(pr);
            let best = VariableOrder::all(3)
                .map(|o| model.cost(pr, &o).unwrap())
                .fold(f64::INFINITY, f64::min);
            let mut asc: Vec<usize> = (0..3).collect();
            asc.sort_by_key(|&v| m[v]);
            assert_eq!(model.cost(pr, &ord(&asc)).unwrap(), best);
        }
    }

    #[test]
    fn swapping_larger_statistic_later_is_cheaper() {
        let model = SyntheticCostModel::default();
        let ds = random_dataset(&GenConfig { seed: 12, ..GenConfig::default() }, 200).unwrap();
        for pr in &ds {
            let m = SyntheticCostModel::statistic(pr);
            for o in VariableOrder::all(3) {
                for k in 0..2 {
                    let (u, v) = (o.perm()[k], o.perm()[k + 1]);
                    if m[u] > m[v] {
                        let mut swapped = o.perm().to_vec();
                        swapped.swap(k, k + 1);
                        assert!(model.cost(pr, &ord(&swapped)).unwrap() < model.cost(pr, &o).unwrap());
                    }
                }
            }
        }
    }
}
