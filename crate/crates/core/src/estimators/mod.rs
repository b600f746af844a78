//! Monte Carlo estimators for the quantities governing the walk.
//!
//! Every estimator consumes per-path streams from [`crate::rng`] and merges
//! chunk results in index order, so its output is a pure function of its
//! inputs and seed.

mod harmonic;
mod local;

pub use harmonic::{
    estimate_harmonic, estimate_harmonic_dual, fit_v_bounds, HarmonicEstimate, HarmonicParams, HorizonRow, VBoundsFit,
};
pub use local::{
    conditioned_terminal_sample, estimate_local, estimate_local_windows, ConditionedSample, LocalQuery, LocalStrategy,
    PathEvent, Window,
};

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSpec;
use crate::error::{Error, Result};
use crate::matrix::SimplexPoint;
use crate::rng::{map_chunks, path_rng};
use crate::stats::{binomial_std_error, zero_hit_upper_bound, Moments};
use crate::walk::{stream_seed, Direction, WalkConfig, Walker};

/// A Monte Carlo point estimate with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub method: String,
    /// One-sided 95% upper bound, reported when no sample hit the event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub one_sided_upper: Option<f64>,
}

impl Estimate {
    pub fn new(value: f64, std_error: f64, n_samples: u64, method: impl Into<String>) -> Self {
        Self {
            value,
            std_error,
            n_samples,
            method: method.into(),
            one_sided_upper: None,
        }
    }

    pub fn from_moments(m: &Moments, method: impl Into<String>) -> Self {
        Self::new(m.mean(), m.std_error(), m.count, method)
    }

    /// Binomial proportion `hits / n`.
    pub fn proportion(hits: u64, n: u64, method: impl Into<String>) -> Self {
        let p = hits as f64 / n as f64;
        let mut e = Self::new(p, binomial_std_error(p, n), n, method);
        if hits == 0 {
            e.one_sided_upper = Some(zero_hit_upper_bound(n));
        }
        e
    }

    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.value - z * self.std_error, self.value + z * self.std_error)
    }

    /// `|self − other| ≤ k·(se_self + se_other)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * (self.std_error + other.std_error)
    }

    pub fn scaled(&self, factor: f64) -> Estimate {
        Estimate {
            value: self.value * factor,
            std_error: self.std_error * factor.abs(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovParams {
    pub horizon: usize,
    pub burn_in: usize,
    pub reps: u64,
}

/// `γ̂`: mean of `(S_{burn_in + horizon} − S_{burn_in}) / horizon` over
/// independent paths started at the barycenter.
pub fn estimate_lyapunov(spec: &EnsembleSpec, p: &LyapunovParams, seed: u64, workers: usize) -> Result<Estimate> {
    if p.horizon < 1 || p.reps < 2 {
        return Err(Error::InvalidParameter(
            "Lyapunov estimate needs horizon ≥ 1 and reps ≥ 2".into(),
        ));
    }
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let start = SimplexPoint::uniform(spec.dim);
    let parts = map_chunks(p.reps, workers, |range| {
        let mut walker = Walker::new(&sampler, Direction::Forward);
        let mut m = Moments::default();
        for i in range {
            let mut rng = path_rng(seed, i);
            walker.reset(start.coords(), 0.0);
            for _ in 0..p.burn_in {
                walker.step(&mut rng);
            }
            let base = walker.level();
            for _ in 0..p.horizon {
                walker.step(&mut rng);
            }
            m.push((walker.level() - base) / p.horizon as f64);
        }
        m
    });
    let m = merge(&parts);
    Ok(Estimate::from_moments(&m, "lyapunov:path_mean"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Params {
    pub horizon: usize,
    pub reps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    /// Mean of `S_n² / n`.
    pub at_n: Estimate,
    /// Mean of `S_{2n}² / (2n)`.
    pub at_2n: Estimate,
    /// Richardson combination `2·v(2n) − v(n)`, removing the `O(1/n)` term.
    pub stabilized: Estimate,
    /// `n·γ̂²`-type bias check: mean of `S_{2n} / (2n)`.
    pub drift: Estimate,
}

impl Sigma2Estimate {
    /// `σ̂` with a delta-method standard error, from the stabilized value.
    pub fn sigma(&self) -> Estimate {
        let v = self.stabilized.value.max(f64::MIN_POSITIVE);
        let s = v.sqrt();
        Estimate::new(
            s,
            self.stabilized.std_error / (2.0 * s),
            self.stabilized.n_samples,
            "sigma:sqrt_stabilized",
        )
    }
}

pub fn estimate_sigma2(spec: &EnsembleSpec, p: &Sigma2Params, seed: u64, workers: usize) -> Result<Sigma2Estimate> {
    if p.horizon < 1 || p.reps < 2 {
        return Err(Error::InvalidParameter(
            "variance estimate needs horizon ≥ 1 and reps ≥ 2".into(),
        ));
    }
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let start = SimplexPoint::uniform(spec.dim);
    let n = p.horizon as f64;
    let parts = map_chunks(p.reps, workers, |range| {
        let mut walker = Walker::new(&sampler, Direction::Forward);
        let mut acc = [Moments::default(); 4];
        for i in range {
            let mut rng = path_rng(seed, i);
            walker.reset(start.coords(), 0.0);
            for _ in 0..p.horizon {
                walker.step(&mut rng);
            }
            let s_n = walker.level();
            for _ in 0..p.horizon {
                walker.step(&mut rng);
            }
            let s_2n = walker.level();
            let v_n = s_n * s_n / n;
            let v_2n = s_2n * s_2n / (2.0 * n);
            acc[0].push(v_n);
            acc[1].push(v_2n);
            acc[2].push(2.0 * v_2n - v_n);
            acc[3].push(s_2n / (2.0 * n));
        }
        acc
    });
    let mut acc = [Moments::default(); 4];
    for part in &parts {
        for (a, b) in acc.iter_mut().zip(part) {
            a.merge(b);
        }
    }
    Ok(Sigma2Estimate {
        at_n: Estimate::from_moments(&acc[0], "sigma2:n"),
        at_2n: Estimate::from_moments(&acc[1], "sigma2:2n"),
        stabilized: Estimate::from_moments(&acc[2], "sigma2:richardson"),
        drift: Estimate::from_moments(&acc[3], "sigma2:drift"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantEstimate {
    /// `ν̂(u)` from `u(X_burn_in)`.
    pub value: Estimate,
    /// Same average one step later.
    pub next_step: Estimate,
    /// The two agree within three combined standard errors.
    pub consistent: bool,
}

/// `ν̂(u)`: average of `u(X_n)` at `n = burn_in` across paths.
pub fn estimate_invariant<U>(
    spec: &EnsembleSpec,
    u: U,
    burn_in: usize,
    reps: u64,
    seed: u64,
    workers: usize,
) -> Result<InvariantEstimate>
where
    U: Fn(&[f64]) -> f64 + Sync,
{
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 repetitions".into()));
    }
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let start = SimplexPoint::uniform(spec.dim);
    let parts = map_chunks(reps, workers, |range| {
        let mut walker = Walker::new(&sampler, Direction::Forward);
        let mut acc = [Moments::default(); 2];
        for i in range {
            let mut rng = path_rng(seed, i);
            walker.reset(start.coords(), 0.0);
            for _ in 0..burn_in {
                walker.step(&mut rng);
            }
            acc[0].push(u(walker.point()));
            walker.step(&mut rng);
            acc[1].push(u(walker.point()));
        }
        acc
    });
    let mut acc = [Moments::default(); 2];
    for part in &parts {
        acc[0].merge(&part[0]);
        acc[1].merge(&part[1]);
    }
    let value = Estimate::from_moments(&acc[0], "invariant:burn_in");
    let next_step = Estimate::from_moments(&acc[1], "invariant:burn_in+1");
    let consistent = value.agrees_with(&next_step, 3.0);
    Ok(InvariantEstimate {
        value,
        next_step,
        consistent,
    })
}

/// `P(τ > n)` for each requested horizon, from one exit-only batch.
///
/// `cfg.horizon` is ignored; the batch runs to the largest entry of
/// `horizons`, which must be ascending.
pub fn estimate_survival_curve(
    spec: &EnsembleSpec,
    cfg: &WalkConfig,
    horizons: &[usize],
    count: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<Estimate>> {
    let max_h = check_horizons(horizons)?;
    let cfg = WalkConfig {
        horizon: max_h,
        ..cfg.clone()
    };
    cfg.validate(spec)?;
    if count < 1 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let sampler = spec.sampler()?;
    let seed = stream_seed(spec, seed);
    let parts = map_chunks(count, workers, |range| {
        let mut walker = Walker::new(&sampler, cfg.direction);
        let mut hits = vec![0u64; horizons.len()];
        for i in range {
            let mut rng = path_rng(seed, i);
            walker.reset(cfg.start_x.coords(), cfg.start_level);
            let lived = run_until_exit(&mut walker, &mut rng, max_h);
            for (h, &n) in hits.iter_mut().zip(horizons) {
                *h += (lived >= n) as u64;
            }
        }
        hits
    });
    let method = match cfg.direction {
        Direction::Forward => "survival:binomial",
        Direction::Dual => "dual_survival:binomial",
    };
    Ok((0..horizons.len())
        .map(|k| Estimate::proportion(parts.iter().map(|p| p[k]).sum(), count, method))
        .collect())
}

/// `P(τ_{x,a} > n)` with its binomial standard error.
pub fn estimate_survival(
    spec: &EnsembleSpec,
    x: &SimplexPoint,
    a: f64,
    n: usize,
    count: u64,
    seed: u64,
    workers: usize,
) -> Result<Estimate> {
    if a < 0.0 {
        return Err(Error::InvalidParameter(format!("start level {a} must be nonnegative")));
    }
    let cfg = WalkConfig::forward(x.clone(), a, n);
    Ok(estimate_survival_curve(spec, &cfg, &[n], count, seed, workers)?.remove(0))
}

/// Steps until the first nonpositive level or `max_steps`; returns the
/// number of steps survived (`max_steps` if the path never exits).
#[inline]
pub(crate) fn run_until_exit(walker: &mut Walker<'_>, rng: &mut crate::rng::PathRng, max_steps: usize) -> usize {
    for k in 1..=max_steps {
        if walker.step(rng) <= 0.0 {
            return k - 1;
        }
    }
    max_steps
}

pub(crate) fn check_horizons(horizons: &[usize]) -> Result<usize> {
    if horizons.is_empty() || horizons[0] < 1 || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "horizons {horizons:?} must be nonempty, positive and strictly ascending"
        )));
    }
    Ok(*horizons.last().expect("nonempty"))
}

pub(crate) fn merge(parts: &[Moments]) -> Moments {
    let mut m = Moments::default();
    parts.iter().for_each(|p| m.merge(p));
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::PositiveMatrix;

    #[test]
    fn invariant_of_constant_is_one() {
        let spec = EnsembleSpec::scaled_uniform(2, 2.0, 0.5);
        let e = estimate_invariant(&spec, |_| 1.0, 16, 100, 1, 1).unwrap();
        assert_eq!(e.value.value, 1.0);
        assert_eq!(e.value.std_error, 0.0);
    }

    #[test]
    fn rank_one_collapses_in_one_step() {
        let spec = EnsembleSpec::rank_one_oracle(3, 0.7);
        let e = estimate_invariant(&spec, |x| x[0] + 2.0 * x[2], 1, 50, 2, 1).unwrap();
        assert!((e.value.value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn survival_curve_is_monotone() {
        let spec = EnsembleSpec::scaled_uniform(2, 2.0, 1.0).with_shift(-1.1);
        let cfg = WalkConfig::forward(SimplexPoint::uniform(2), 1.0, 1);
        let curve = estimate_survival_curve(&spec, &cfg, &[1, 4, 16, 64], 5_000, 3, 1).unwrap();
        assert!(curve.windows(2).all(|w| w[1].value <= w[0].value));
        assert!(estimate_survival_curve(&spec, &cfg, &[4, 4], 10, 3, 1).is_err());
    }

    #[test]
    fn survival_rejects_negative_level() {
        let spec = EnsembleSpec::scaled_uniform(2, 2.0, 1.0);
        assert!(estimate_survival(&spec, &SimplexPoint::uniform(2), -1.0, 4, 10, 0, 1).is_err());
    }

    #[test]
    fn single_matrix_lyapunov_is_log_spectral_radius() {
        let g = PositiveMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let spec = EnsembleSpec::finite_support(3.0, vec![(g, 1.0)]).unwrap();
        let e = estimate_lyapunov(
            &spec,
            &LyapunovParams {
                horizon: 2000,
                burn_in: 50,
                reps: 2,
            },
            0,
            1,
        )
        .unwrap();
        // spectral radius of [[2,1],[1,3]] is (5 + √5)/2
        let exact = ((5.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((e.value - exact).abs() < 1e-9, "{} vs {exact}", e.value);
    }

    #[test]
    fn zero_hits_carry_upper_bound() {
        let e = Estimate::proportion(0, 1000, "t");
        assert_eq!(e.value, 0.0);
        assert!(e.one_sided_upper.unwrap() > 0.0);
        let json = serde_json::to_string(&Estimate::proportion(3, 10, "t")).unwrap();
        assert!(!json.contains("one_sided_upper"));
    }
}
