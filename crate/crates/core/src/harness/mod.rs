//! Runnable statistical experiments, one per limit theorem or lemma, each
//! producing a [`VerdictReport`].
//!
//! Monte Carlo comparisons never assert equality: two-sided comparisons use
//! the gate `|lhs − rhs| ≤ 3·(se_lhs + se_rhs)`, one-sided ones
//! `lhs ≤ rhs + 3·(se_lhs + se_rhs)`.

mod conditioned;
mod harmonic;
mod lemmas;
mod llt;

pub use conditioned::{check_gnedenko, check_local_32, check_rayleigh, GnedenkoParams, Local32Params, RayleighParams};
pub use harmonic::{
    check_harmonic_consistency, check_harmonicity, check_survival_rate, HarmonicConsistencyParams, HarmonicityParams,
    SurvivalRateParams,
};
pub use lemmas::{check_lemma_keylem_audit, check_reverse_lemma, KeylemAuditParams, ReverseParams};
pub use llt::{
    check_conditioned_bounds, check_local_bounds_unconditioned, check_unconditioned_llt, ConditionedBoundsParams,
    LltParams, LocalBoundsParams, Phi, TestFunction,
};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::estimators::{estimate_sigma2, Estimate, Sigma2Params};
use crate::matrix::SimplexPoint;
use crate::rng::derive_seed;

/// Multiplier of the combined standard error in every Monte Carlo gate.
pub const GATE_Z: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    /// A domain guard was unmet; nothing was tested.
    Skipped,
    /// The experiment ran but could not resolve its question.
    Inconclusive,
}

/// One pass/fail comparison `statistic ≤ threshold` (or `≥` when
/// `lower_bound` is set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub lower_bound: bool,
    pub status: VerdictStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Check {
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        let pass = statistic <= threshold;
        Self {
            name: name.into(),
            statistic,
            threshold,
            lower_bound: false,
            status: if pass { VerdictStatus::Pass } else { VerdictStatus::Fail },
            reason: None,
        }
    }

    pub fn at_least(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        let pass = statistic >= threshold;
        Self {
            name: name.into(),
            statistic,
            threshold,
            lower_bound: true,
            status: if pass { VerdictStatus::Pass } else { VerdictStatus::Fail },
            reason: None,
        }
    }

    pub fn skipped(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            statistic: f64::NAN,
            threshold: f64::NAN,
            lower_bound: false,
            status: VerdictStatus::Skipped,
            reason: Some(reason.into()),
        }
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }

    pub fn inconclusive(mut self, reason: impl Into<String>) -> Self {
        self.status = VerdictStatus::Inconclusive;
        self.reason = Some(reason.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

/// Row of plot data: one `(n, b)` cell of a local-probability experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub n: usize,
    pub b: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub main_term_paper: Option<f64>,
    pub main_term_rayleigh: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub experiment: String,
    /// Headline statistic: that of the first check.
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub status: VerdictStatus,
    pub inputs_hash: String,
    pub checks: Vec<Check>,
    pub details: Map<String, Value>,
    pub estimates: Vec<NamedEstimate>,
    pub plot_rows: Vec<PlotRow>,
}

impl VerdictReport {
    fn build(experiment: &str, inputs_hash: String, checks: Vec<Check>) -> Self {
        let status = if checks.iter().any(|c| c.status == VerdictStatus::Fail) {
            VerdictStatus::Fail
        } else if checks.iter().any(|c| c.status == VerdictStatus::Inconclusive) {
            VerdictStatus::Inconclusive
        } else if checks.iter().all(|c| c.status == VerdictStatus::Skipped) {
            VerdictStatus::Skipped
        } else {
            VerdictStatus::Pass
        };
        let head = checks
            .iter()
            .find(|c| c.status != VerdictStatus::Skipped)
            .or(checks.first());
        Self {
            experiment: experiment.to_string(),
            statistic: head.map_or(f64::NAN, |c| c.statistic),
            threshold: head.map_or(f64::NAN, |c| c.threshold),
            pass: status == VerdictStatus::Pass,
            status,
            inputs_hash,
            checks,
            details: Map::new(),
            estimates: Vec::new(),
            plot_rows: Vec::new(),
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    fn estimate(&mut self, name: impl Into<String>, e: &Estimate) {
        self.estimates.push(NamedEstimate {
            name: name.into(),
            estimate: e.clone(),
        });
    }
}

/// Shared inputs of every experiment: the (calibrated) law, the variance
/// estimate and the worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentContext {
    pub spec: EnsembleSpec,
    pub sigma: Estimate,
    #[serde(skip)]
    pub workers: usize,
}

impl ExperimentContext {
    pub fn new(spec: EnsembleSpec, sigma: Estimate, workers: usize) -> Self {
        Self { spec, sigma, workers }
    }

    /// Estimates `σ̂` from `params` under a seed derived from `seed`.
    pub fn prepare(spec: EnsembleSpec, params: &Sigma2Params, seed: u64, workers: usize) -> Result<Self> {
        let s2 = estimate_sigma2(&spec, params, derive_seed(seed, "context/sigma2"), workers)?;
        Ok(Self::new(spec, s2.sigma(), workers))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.value
    }
}

/// Hex SHA-256 of the canonical JSON of everything an experiment reads.
pub fn inputs_hash<P: Serialize>(experiment: &str, ctx: &ExperimentContext, params: &P, seed: u64) -> String {
    let doc = serde_json::json!({
        "experiment": experiment,
        "context": ctx,
        "params": params,
        "seed": seed,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Registry entry describing one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExperimentInfo {
    pub id: &'static str,
    pub params: &'static str,
    pub reference: &'static str,
    pub guards: &'static str,
}

pub const EXPERIMENTS: &[ExperimentInfo] = &[
    ExperimentInfo {
        id: "check_lemma_keylem_audit",
        params: "trials, max_word_len",
        reference: "Lemma keylem (B²-comparability, items 1-3)",
        guards: "law supported in S_B",
    },
    ExperimentInfo {
        id: "check_reverse_lemma",
        params: "x, y, a, b, ell, n, count",
        reference: "Lemma reverse (reversingineq1, reversingineq2)",
        guards: "lower inequality needs a >= ell > 2*Delta and b >= Delta",
    },
    ExperimentInfo {
        id: "check_unconditioned_llt",
        params: "x, a, u, phi, n_list, count, invariant_reps",
        reference: "Theorem buitheo (unconditioned local limit theorem)",
        guards: "centered law",
    },
    ExperimentInfo {
        id: "check_local_bounds_unconditioned",
        params: "x, a, b, ell, n_grid, t, count",
        reference: "Lemma matriceslocal (estimate1, estimate2)",
        guards: "far target |a-b| > t*sqrt(n)",
    },
    ExperimentInfo {
        id: "check_conditioned_bounds",
        params: "x, a, b_units, ell, n_list, t, count, harmonic",
        reference: "Lemma matriceslocalconditioned (estimate3, estimate4)",
        guards: "crossed exit needs a > ell + 2*Delta + t*sqrt(n) and b > max(t*sqrt(n), Delta)",
    },
    ExperimentInfo {
        id: "check_gnedenko",
        params: "x, a, b_units, ell, n_list, count, strategy, harmonic",
        reference: "Theorem theoGnedenkocone (conditioned Gnedenko local limit theorem)",
        guards: "centered law",
    },
    ExperimentInfo {
        id: "check_local_32",
        params: "x, a, b, ell, n_list, count, strategy, harmonic",
        reference: "Theorem theolocal (3/2upper, 3/2lower)",
        guards: "lower bound needs ell > ell0 = 4*Delta + 2 and b >= Delta",
    },
    ExperimentInfo {
        id: "check_rayleigh",
        params: "x, a, n, target_survivors, max_paths, threshold",
        reference: "Proposition prop1 (Rayleigh limit of the conditioned walk)",
        guards: "a > 0",
    },
    ExperimentInfo {
        id: "check_harmonicity",
        params: "x, a, x_resolution, a_step, surface_horizon, surface_count, lhs_count, draws",
        reference: "Harmonicity identity eqn7, V(x,a) = E[V(X1,S1); tau > 1]",
        guards: "a >= 0",
    },
    ExperimentInfo {
        id: "check_survival_rate",
        params: "x, a, horizons, count",
        reference: "Proposition prop1 (P(tau > n) ~ 2 V / (sigma sqrt(2 pi n)))",
        guards: "centered law",
    },
    ExperimentInfo {
        id: "check_harmonic_consistency",
        params: "x, levels, harmonic, large_level_factor",
        reference: "Proposition prop1 (V bounds and V(x,a)/a -> 1)",
        guards: "a >= 0",
    },
];

/// The given coordinates as a simplex point, or the barycenter.
pub(crate) fn point_or_uniform(coords: &Option<Vec<f64>>, dim: usize) -> Result<SimplexPoint> {
    match coords {
        None => Ok(SimplexPoint::uniform(dim)),
        Some(c) if c.len() != dim => Err(Error::DimensionMismatch {
            expected: dim,
            actual: c.len(),
        }),
        Some(c) => SimplexPoint::from_unnormalized(c.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_complete() {
        assert_eq!(EXPERIMENTS.len(), 11);
        let gn = EXPERIMENTS.iter().find(|e| e.id == "check_gnedenko").unwrap();
        assert!(gn.reference.contains("theoGnedenkocone"));
        let rev = EXPERIMENTS.iter().find(|e| e.id == "check_reverse_lemma").unwrap();
        assert!(rev.guards.contains("2*Delta"));
    }

    #[test]
    fn report_status_aggregation() {
        let pass = Check::at_most("a", 1.0, 2.0);
        let fail = Check::at_least("b", 1.0, 2.0);
        let skip = Check::skipped("c", "guard");
        assert_eq!(
            VerdictReport::build("x", String::new(), vec![pass.clone(), skip.clone()]).status,
            VerdictStatus::Pass
        );
        assert_eq!(
            VerdictReport::build("x", String::new(), vec![pass.clone(), fail]).status,
            VerdictStatus::Fail
        );
        assert_eq!(
            VerdictReport::build("x", String::new(), vec![skip]).status,
            VerdictStatus::Skipped
        );
        let inc = Check::at_most("d", 0.0, 1.0).inconclusive("coarse");
        assert_eq!(
            VerdictReport::build("x", String::new(), vec![pass, inc]).status,
            VerdictStatus::Inconclusive
        );
    }
}
