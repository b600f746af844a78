//! Exhaustive enumeration of matrix words for finite-support laws.

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::matrix::{column_action, row_action};
use crate::walk::{Direction, WalkConfig};

/// Default cap on `support^horizon`.
pub const ENUMERATION_BUDGET: f64 = 2e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalAtom {
    pub probability: f64,
    pub level: f64,
}

/// Exact law of a finite-support walk up to its horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactLaw {
    pub horizon: usize,
    /// `P(τ > k)` for `k = 1..=horizon`.
    pub survival_curve: Vec<f64>,
    /// Terminal levels of the surviving words with their probabilities.
    pub survivors: Vec<TerminalAtom>,
    /// Total probability of the words that exit by the horizon.
    pub killed_mass: f64,
}

impl ExactLaw {
    pub fn survival(&self) -> f64 {
        *self.survival_curve.last().expect("horizon ≥ 1")
    }

    /// `P(τ > n, S_n ∈ [b, b + ell])`.
    pub fn joint(&self, b: f64, ell: f64) -> f64 {
        self.survivors
            .iter()
            .filter(|a| a.level >= b && a.level <= b + ell)
            .map(|a| a.probability)
            .sum()
    }
}

pub fn enumerate_exact(spec: &EnsembleSpec, cfg: &WalkConfig) -> Result<ExactLaw> {
    enumerate_exact_with_budget(spec, cfg, ENUMERATION_BUDGET)
}

pub fn enumerate_exact_with_budget(spec: &EnsembleSpec, cfg: &WalkConfig, budget: f64) -> Result<ExactLaw> {
    cfg.validate(spec)?;
    let atoms = spec
        .scaled_atoms()
        .ok_or_else(|| Error::InvalidEnsemble("exact enumeration needs a finite-support law".into()))?;
    let words = (atoms.len() as f64).powi(cfg.horizon as i32);
    if words > budget {
        return Err(Error::BudgetExceeded { words, budget });
    }
    let mut state = Enumerator {
        dim: spec.dim,
        direction: cfg.direction,
        atoms: atoms.iter().map(|(m, w)| (m.entries().to_vec(), *w)).collect(),
        horizon: cfg.horizon,
        survival_curve: vec![0.0; cfg.horizon],
        survivors: Vec::new(),
        killed_mass: 0.0,
    };
    state.descend(cfg.start_x.coords(), cfg.start_level, 1.0, 0);
    Ok(ExactLaw {
        horizon: cfg.horizon,
        survival_curve: state.survival_curve,
        survivors: state.survivors,
        killed_mass: state.killed_mass,
    })
}

struct Enumerator {
    dim: usize,
    direction: Direction,
    atoms: Vec<(Vec<f64>, f64)>,
    horizon: usize,
    survival_curve: Vec<f64>,
    survivors: Vec<TerminalAtom>,
    killed_mass: f64,
}

impl Enumerator {
    fn descend(&mut self, point: &[f64], level: f64, prob: f64, depth: usize) {
        if depth == self.horizon {
            self.survivors.push(TerminalAtom {
                probability: prob,
                level,
            });
            return;
        }
        let mut next = vec![0.0; self.dim];
        for k in 0..self.atoms.len() {
            let (g, w) = (&self.atoms[k].0, self.atoms[k].1);
            let new_level = match self.direction {
                Direction::Forward => level + column_action(g, self.dim, point, &mut next).ln(),
                Direction::Dual => level - row_action(g, self.dim, point, &mut next).ln(),
            };
            let p = prob * w;
            if new_level <= 0.0 {
                self.killed_mass += p;
                continue;
            }
            self.survival_curve[depth] += p;
            let snapshot = next.clone();
            self.descend(&snapshot, new_level, p, depth + 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{PositiveMatrix, SimplexPoint};

    fn atoms(p: f64) -> EnsembleSpec {
        let a = PositiveMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.5]]).unwrap();
        let b = PositiveMatrix::from_rows(&[vec![0.5, 0.4], vec![0.3, 0.5]]).unwrap();
        EnsembleSpec::finite_support(2.0, vec![(a, p), (b, 1.0 - p)]).unwrap()
    }

    #[test]
    fn single_atom_survival_is_zero_or_one() {
        let up = PositiveMatrix::constant(2, 1.0).unwrap();
        let spec = EnsembleSpec::finite_support(2.0, vec![(up, 1.0)]).unwrap();
        let law = enumerate_exact(&spec, &WalkConfig::forward(SimplexPoint::uniform(2), 0.0, 7)).unwrap();
        assert_eq!(law.survival(), 1.0);
        assert_eq!(law.survivors.len(), 1);
        assert!((law.survivors[0].level - 7.0 * 2f64.ln()).abs() < 1e-12);

        let down = PositiveMatrix::constant(2, 0.2).unwrap();
        let spec = EnsembleSpec::finite_support(2.0, vec![(down, 1.0)]).unwrap();
        let law = enumerate_exact(&spec, &WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 7)).unwrap();
        assert_eq!(law.survival(), 0.0);
        assert_eq!(law.killed_mass, 1.0);
    }

    #[test]
    fn word_probabilities_sum_to_one() {
        let spec = atoms(0.3);
        // start high enough that no word of length 3 exits
        let law = enumerate_exact(&spec, &WalkConfig::forward(SimplexPoint::uniform(2), 50.0, 3)).unwrap();
        assert_eq!(law.survivors.len(), 8);
        let total: f64 = law.survivors.iter().map(|a| a.probability).sum();
        assert!((total - 1.0).abs() < 1e-15);

        let law = enumerate_exact(&spec, &WalkConfig::forward(SimplexPoint::uniform(2), 0.5, 10)).unwrap();
        assert!((law.survival() + law.killed_mass - 1.0).abs() < 1e-12);
        assert!(law.survival_curve.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn joint_with_huge_window_is_survival() {
        let spec = atoms(0.5);
        let law = enumerate_exact(&spec, &WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 12)).unwrap();
        assert!((law.joint(0.0, 1e10) - law.survival()).abs() < 1e-12);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = atoms(0.5);
        let cfg = WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 30);
        assert!(matches!(
            enumerate_exact(&spec, &cfg),
            Err(Error::BudgetExceeded { .. })
        ));
        let continuous = EnsembleSpec::scaled_uniform(2, 2.0, 1.0);
        let cfg = WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 3);
        assert!(enumerate_exact(&continuous, &cfg).is_err());
    }
}
